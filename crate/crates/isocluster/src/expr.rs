//! Minimal arithmetic expression grammar for custom densities.
//!
//! Supports `+ - * /`, the functions `pow`, `abs`, `min`, `max`, `norm`,
//! `dot`, vector literals `[a, b, ...]`, the position vector `x` with
//! components `x1..xN`, and the facet normal `n` with components `n1..nN`.

use std::fmt;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    /// Position vector `x` or normal vector `n`.
    Var(char),
    /// Component variable, e.g. `x2` -> ('x', 1).
    Component(char, usize),
    Vector(Vec<Expr>),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Pow,
    Abs,
    Min,
    Max,
    Norm,
    Dot,
}

impl fmt::Display for Func {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Func::Pow => "pow",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
            Func::Norm => "norm",
            Func::Dot => "dot",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Value {
    fn scalar(self) -> Result<f64> {
        match self {
            Value::Scalar(s) => Ok(s),
            Value::Vector(_) => Err(Error::Parse("expected scalar, found vector".into())),
        }
    }
}

impl Expr {
    /// Parse an expression from source text.
    pub fn parse(src: &str) -> Result<Expr> {
        let tokens = lex(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let e = p.expression()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Parse(format!("trailing input at token {}", p.pos)));
        }
        Ok(e)
    }

    /// Evaluate at position `x` with optional facet normal `n`.
    pub fn eval(&self, x: &[f64], n: Option<&[f64]>) -> Result<f64> {
        self.eval_value(x, n)?.scalar()
    }

    fn eval_value(&self, x: &[f64], nv: Option<&[f64]>) -> Result<Value> {
        let dim = x.len();
        let comp = |var: char, k: usize| -> Result<f64> {
            let slice: &[f64] = match var {
                'x' => x,
                'n' => nv.ok_or_else(|| {
                    Error::Parse("normal variable used in a position-only expression".into())
                })?,
                _ => unreachable!(),
            };
            slice
                .get(k)
                .copied()
                .ok_or_else(|| Error::Parse(format!("component {var}{} out of range", k + 1)))
        };
        Ok(match self {
            Expr::Num(v) => Value::Scalar(*v),
            Expr::Var(c) => {
                let mut v = Vec::with_capacity(dim);
                for k in 0..dim {
                    v.push(comp(*c, k)?);
                }
                Value::Vector(v)
            }
            Expr::Component(c, k) => Value::Scalar(comp(*c, *k)?),
            Expr::Vector(es) => {
                let mut v = Vec::with_capacity(es.len());
                for e in es {
                    v.push(e.eval_value(x, nv)?.scalar()?);
                }
                Value::Vector(v)
            }
            Expr::Neg(e) => match e.eval_value(x, nv)? {
                Value::Scalar(s) => Value::Scalar(-s),
                Value::Vector(v) => Value::Vector(v.into_iter().map(|a| -a).collect()),
            },
            Expr::Add(a, b) => binary(a.eval_value(x, nv)?, b.eval_value(x, nv)?, |p, q| p + q)?,
            Expr::Sub(a, b) => binary(a.eval_value(x, nv)?, b.eval_value(x, nv)?, |p, q| p - q)?,
            Expr::Mul(a, b) => scale(a.eval_value(x, nv)?, b.eval_value(x, nv)?, |p, q| p * q)?,
            Expr::Div(a, b) => scale(a.eval_value(x, nv)?, b.eval_value(x, nv)?, |p, q| p / q)?,
            Expr::Call(f, args) => {
                let vals: Result<Vec<Value>> =
                    args.iter().map(|e| e.eval_value(x, nv)).collect();
                let vals = vals?;
                apply(*f, vals)?
            }
        })
    }
}

fn binary(a: Value, b: Value, op: impl Fn(f64, f64) -> f64) -> Result<Value> {
    match (a, b) {
        (Value::Scalar(p), Value::Scalar(q)) => Ok(Value::Scalar(op(p, q))),
        (Value::Vector(p), Value::Vector(q)) if p.len() == q.len() => {
            Ok(Value::Vector(p.iter().zip(&q).map(|(&u, &v)| op(u, v)).collect()))
        }
        _ => Err(Error::Parse("operand shape mismatch in + or -".into())),
    }
}

fn scale(a: Value, b: Value, op: impl Fn(f64, f64) -> f64) -> Result<Value> {
    match (a, b) {
        (Value::Scalar(p), Value::Scalar(q)) => Ok(Value::Scalar(op(p, q))),
        (Value::Vector(p), Value::Scalar(q)) => {
            Ok(Value::Vector(p.into_iter().map(|u| op(u, q)).collect()))
        }
        (Value::Scalar(p), Value::Vector(q)) => {
            Ok(Value::Vector(q.into_iter().map(|v| op(p, v)).collect()))
        }
        _ => Err(Error::Parse("vector-by-vector * or / is not defined".into())),
    }
}

fn apply(f: Func, mut vals: Vec<Value>) -> Result<Value> {
    let arity = match f {
        Func::Abs | Func::Norm => 1,
        _ => 2,
    };
    if vals.len() != arity {
        return Err(Error::Parse(format!("{f} expects {arity} argument(s), got {}", vals.len())));
    }
    Ok(match f {
        Func::Abs => Value::Scalar(vals.remove(0).scalar()?.abs()),
        Func::Norm => match vals.remove(0) {
            Value::Scalar(s) => Value::Scalar(s.abs()),
            Value::Vector(v) => Value::Scalar(v.iter().map(|a| a * a).sum::<f64>().sqrt()),
        },
        Func::Pow => {
            let b = vals.pop().unwrap().scalar()?;
            let a = vals.pop().unwrap().scalar()?;
            Value::Scalar(a.powf(b))
        }
        Func::Min => {
            let b = vals.pop().unwrap().scalar()?;
            let a = vals.pop().unwrap().scalar()?;
            Value::Scalar(a.min(b))
        }
        Func::Max => {
            let b = vals.pop().unwrap().scalar()?;
            let a = vals.pop().unwrap().scalar()?;
            Value::Scalar(a.max(b))
        }
        Func::Dot => {
            let b = vals.pop().unwrap();
            let a = vals.pop().unwrap();
            match (a, b) {
                (Value::Vector(p), Value::Vector(q)) if p.len() == q.len() => {
                    Value::Scalar(p.iter().zip(&q).map(|(u, v)| u * v).sum())
                }
                _ => return Err(Error::Parse("dot expects two vectors of equal length".into())),
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
}

fn lex(src: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    let bytes: Vec<char> = src.chars().collect();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                out.push(Token::Plus);
                i += 1;
            }
            '-' => {
                out.push(Token::Minus);
                i += 1;
            }
            '*' => {
                out.push(Token::Star);
                i += 1;
            }
            '/' => {
                out.push(Token::Slash);
                i += 1;
            }
            '(' => {
                out.push(Token::LParen);
                i += 1;
            }
            ')' => {
                out.push(Token::RParen);
                i += 1;
            }
            '[' => {
                out.push(Token::LBracket);
                i += 1;
            }
            ']' => {
                out.push(Token::RBracket);
                i += 1;
            }
            ',' => {
                out.push(Token::Comma);
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_digit()
                        || bytes[i] == '.'
                        || bytes[i] == 'e'
                        || bytes[i] == 'E'
                        || ((bytes[i] == '+' || bytes[i] == '-')
                            && i > start
                            && (bytes[i - 1] == 'e' || bytes[i - 1] == 'E')))
                {
                    i += 1;
                }
                let text: String = bytes[start..i].iter().collect();
                let v: f64 = text
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad number literal '{text}'")))?;
                out.push(Token::Num(v));
            }
            c if c.is_ascii_alphabetic() => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == '_') {
                    i += 1;
                }
                out.push(Token::Ident(bytes[start..i].iter().collect()));
            }
            other => return Err(Error::Parse(format!("unexpected character '{other}'"))),
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn eat(&mut self, t: &Token) -> Result<()> {
        if self.peek() == Some(t) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::Parse(format!("expected {t:?} at token {}", self.pos)))
        }
    }

    fn expression(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Token::Minus) => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(Token::Star) => {
                    self.pos += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
                }
                Some(Token::Slash) => {
                    self.pos += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.factor()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        if self.peek() == Some(&Token::Minus) {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.factor()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek().cloned() {
            Some(Token::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Token::LParen) => {
                self.pos += 1;
                let e = self.expression()?;
                self.eat(&Token::RParen)?;
                Ok(e)
            }
            Some(Token::LBracket) => {
                self.pos += 1;
                let mut items = vec![self.expression()?];
                while self.peek() == Some(&Token::Comma) {
                    self.pos += 1;
                    items.push(self.expression()?);
                }
                self.eat(&Token::RBracket)?;
                Ok(Expr::Vector(items))
            }
            Some(Token::Ident(name)) => {
                self.pos += 1;
                if self.peek() == Some(&Token::LParen) {
                    let f = match name.as_str() {
                        "pow" => Func::Pow,
                        "abs" => Func::Abs,
                        "min" => Func::Min,
                        "max" => Func::Max,
                        "norm" => Func::Norm,
                        "dot" => Func::Dot,
                        other => return Err(Error::Parse(format!("unknown function '{other}'"))),
                    };
                    self.pos += 1;
                    let mut args = vec![self.expression()?];
                    while self.peek() == Some(&Token::Comma) {
                        self.pos += 1;
                        args.push(self.expression()?);
                    }
                    self.eat(&Token::RParen)?;
                    Ok(Expr::Call(f, args))
                } else {
                    parse_variable(&name)
                }
            }
            other => Err(Error::Parse(format!("unexpected token {other:?}"))),
        }
    }
}

fn parse_variable(name: &str) -> Result<Expr> {
    let mut chars = name.chars();
    let head = chars.next().unwrap();
    let rest: String = chars.collect();
    if (head == 'x' || head == 'n') && rest.is_empty() {
        return Ok(Expr::Var(head));
    }
    if head == 'x' || head == 'n' {
        if let Ok(k) = rest.parse::<usize>() {
            if k >= 1 {
                return Ok(Expr::Component(head, k - 1));
            }
        }
    }
    Err(Error::Parse(format!("unknown variable '{name}'")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_and_precedence() {
        let e = Expr::parse("1 + 2 * 3 - 4 / 2").unwrap();
        assert_eq!(e.eval(&[0.0, 0.0], None).unwrap(), 5.0);
    }

    #[test]
    fn components_and_vectors() {
        let e = Expr::parse("norm(x - [1, 2]) + x1").unwrap();
        assert!((e.eval(&[4.0, 6.0], None).unwrap() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn normal_components() {
        let e = Expr::parse("1 + 0.5 * dot(n, [1, 0])").unwrap();
        assert_eq!(e.eval(&[0.0, 0.0], Some(&[1.0, 0.0])).unwrap(), 1.5);
        assert_eq!(e.eval(&[0.0, 0.0], Some(&[-1.0, 0.0])).unwrap(), 0.5);
        let c = Expr::parse("pow(n2, 2) * 0.3 + 1").unwrap();
        assert!((c.eval(&[0.0, 0.0], Some(&[0.0, 1.0])).unwrap() - 1.3).abs() < 1e-12);
    }

    #[test]
    fn functions() {
        let e = Expr::parse("max(min(abs(-3), 2), 1)").unwrap();
        assert_eq!(e.eval(&[0.0], None).unwrap(), 2.0);
        let p = Expr::parse("pow(x1, 0.5)").unwrap();
        assert!((p.eval(&[9.0], None).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Expr::parse("1 +").is_err());
        assert!(Expr::parse("foo(1)").is_err());
        assert!(Expr::parse("x0").is_err());
        assert!(Expr::parse("1 ; 2").is_err());
    }

    #[test]
    fn unary_minus_binds_tighter_than_product() {
        let e = Expr::parse("-x1 * 3").unwrap();
        assert_eq!(e.eval(&[2.0], None).unwrap(), -6.0);
    }
}
