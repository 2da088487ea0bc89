//! Volume density `f(x)`, anisotropic perimeter density `g(x, nu)`, their
//! local bounds and moduli of continuity, and the exponent `beta(alpha, N)`.
//!
//! `omega(t)` and the local bound `M` are suprema over a ball; for
//! black-box densities they are estimated with a deterministic
//! low-discrepancy (Halton) sample plus a few closed-form extreme probes,
//! so the result is a reproducible lower bound converging from below.

use serde::{Deserialize, Serialize};

use crate::expr::Expr;
use crate::{Error, Result};

/// Position-dependent scalar field.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarField {
    Constant(f64),
    /// `clamp(base + grad . x, min, max)`.
    AffineClamped { base: f64, grad: Vec<f64>, min: f64, max: f64 },
    /// `offset + scale * |x - center|^alpha`.
    RadialHolder { center: Vec<f64>, alpha: f64, scale: f64, offset: f64 },
    /// `low` below the threshold along one axis, `high` at or above it.
    PiecewiseConstant { axis: usize, threshold: f64, low: f64, high: f64 },
    Expression(Expr),
}

impl ScalarField {
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        Ok(match self {
            ScalarField::Constant(v) => *v,
            ScalarField::AffineClamped { base, grad, min, max } => {
                let v = base + grad.iter().zip(x).map(|(g, xi)| g * xi).sum::<f64>();
                v.clamp(*min, *max)
            }
            ScalarField::RadialHolder { center, alpha, scale, offset } => {
                let r = center
                    .iter()
                    .zip(x)
                    .map(|(c, xi)| (xi - c) * (xi - c))
                    .sum::<f64>()
                    .sqrt();
                offset + scale * r.powf(*alpha)
            }
            ScalarField::PiecewiseConstant { axis, threshold, low, high } => {
                if x[*axis] < *threshold {
                    *low
                } else {
                    *high
                }
            }
            ScalarField::Expression(e) => e.eval(x, None)?,
        })
    }
}

/// Direction-dependent perimeter weight.
#[derive(Debug, Clone, PartialEq)]
pub enum DirectionField {
    /// No dependence on the direction.
    Isotropic(ScalarField),
    /// `h(x) * (1 + c <nu, u>)` with `|c| < 1` and `|u| = 1`.
    DirectionWeighted { h: ScalarField, c: f64, u: Vec<f64> },
    Expression(Expr),
    /// `(g(x, nu) + g(x, -nu)) / 2` of the wrapped field.
    Symmetrized(Box<DirectionField>),
}

impl DirectionField {
    pub fn eval(&self, x: &[f64], nu: &[f64]) -> Result<f64> {
        Ok(match self {
            DirectionField::Isotropic(s) => s.eval(x)?,
            DirectionField::DirectionWeighted { h, c, u } => {
                let d: f64 = nu.iter().zip(u).map(|(a, b)| a * b).sum();
                h.eval(x)? * (1.0 + c * d)
            }
            DirectionField::Expression(e) => e.eval(x, Some(nu))?,
            DirectionField::Symmetrized(inner) => {
                let neg: Vec<f64> = nu.iter().map(|v| -v).collect();
                0.5 * (inner.eval(x, nu)? + inner.eval(x, &neg)?)
            }
        })
    }
}

/// The pair (f, g) with Hölder metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub f: ScalarField,
    pub g: DirectionField,
    /// Hölder exponent declared for `g` in the first variable.
    pub alpha: f64,
    pub family_tag: String,
}

impl DensityField {
    pub fn uniform() -> Self {
        DensityField {
            f: ScalarField::Constant(1.0),
            g: DirectionField::Isotropic(ScalarField::Constant(1.0)),
            alpha: 0.0,
            family_tag: "constant".into(),
        }
    }

    pub fn f_eval(&self, x: &[f64]) -> Result<f64> {
        let v = self.f.eval(x)?;
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidDensity(format!("f({x:?}) = {v}")));
        }
        Ok(v)
    }

    pub fn g_eval(&self, x: &[f64], nu: &[f64]) -> Result<f64> {
        let v = self.g.eval(x, nu)?;
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidDensity(format!("g({x:?}, {nu:?}) = {v}")));
        }
        Ok(v)
    }

    /// Perimeter weight of one facet under the cluster convention: facets
    /// against the exterior cost `g` at the normal exiting the nonzero
    /// chamber; interior facets cost the symmetrized weight.
    pub fn facet_weight(&self, location: &[f64], normal: &[f64], inside: u8, outside: u8) -> Result<f64> {
        if inside == 0 {
            let neg: Vec<f64> = normal.iter().map(|v| -v).collect();
            self.g_eval(location, &neg)
        } else if outside == 0 {
            self.g_eval(location, normal)
        } else {
            let neg: Vec<f64> = normal.iter().map(|v| -v).collect();
            Ok(0.5 * (self.g_eval(location, normal)? + self.g_eval(location, &neg)?))
        }
    }

    /// Copy of the field with the perimeter weight symmetrized.
    pub fn symmetrized(&self) -> DensityField {
        DensityField {
            f: self.f.clone(),
            g: DirectionField::Symmetrized(Box::new(self.g.clone())),
            alpha: self.alpha,
            family_tag: format!("{}+symmetrized", self.family_tag),
        }
    }
}

/// Sampled local bounds at a point (Definition-style `M` and `omega`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalBounds {
    pub center: Vec<f64>,
    /// Smallest sampled constant >= 1 with `1/M <= f, g <= M` on the unit
    /// ball around the center.
    pub m: f64,
    /// Sampled `t -> omega(t)` at dyadic radii, nondecreasing.
    pub omega_table: Vec<(f64, f64)>,
    /// Value at the smallest sampled radius, used as the `t -> 0` limit.
    pub omega_limit: f64,
}

/// Exponent `beta(alpha, N) = (alpha + (N-1)(1-alpha)) / (alpha + N(1-alpha))`.
pub fn beta_exponent(alpha: f64, n: u32) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!("alpha {alpha} outside [0, 1]")));
    }
    if n < 2 {
        return Err(Error::InvalidInput(format!("dimension {n} below 2")));
    }
    let nf = n as f64;
    Ok((alpha + (nf - 1.0) * (1.0 - alpha)) / (alpha + nf * (1.0 - alpha)))
}

/// Halton low-discrepancy sequence in [0, 1)^dim (bases 2, 3, 5).
pub fn halton(index: usize, dim: usize) -> Vec<f64> {
    const BASES: [u64; 3] = [2, 3, 5];
    (0..dim)
        .map(|d| {
            let base = BASES[d % BASES.len()];
            let mut i = (index + 1) as u64;
            let mut f = 1.0;
            let mut r = 0.0;
            while i > 0 {
                f /= base as f64;
                r += f * (i % base) as f64;
                i /= base;
            }
            r
        })
        .collect()
}

/// Deterministic point sample of the closed ball B(x, t): Halton points
/// kept inside the ball plus the center and near-boundary axis extremes.
fn ball_sample(x: &[f64], t: f64, probes: usize) -> Vec<Vec<f64>> {
    let dim = x.len();
    let mut pts = Vec::with_capacity(probes + 2 * dim + 1);
    pts.push(x.to_vec());
    let edge = t * (1.0 - 1e-12);
    for k in 0..dim {
        for sign in [-1.0, 1.0] {
            let mut p = x.to_vec();
            p[k] += sign * edge;
            pts.push(p);
        }
    }
    let mut idx = 0;
    while pts.len() < probes + 2 * dim + 1 && idx < probes * 8 {
        let u = halton(idx, dim);
        idx += 1;
        let offset: Vec<f64> = u.iter().map(|v| 2.0 * v - 1.0).collect();
        if offset.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            pts.push(x.iter().zip(&offset).map(|(xi, o)| xi + o * t).collect());
        }
    }
    pts
}

/// Deterministic direction sample: axis directions plus Halton sphere
/// points.
fn direction_sample(dim: usize, count: usize) -> Vec<Vec<f64>> {
    let mut dirs = Vec::with_capacity(count + 2 * dim);
    for k in 0..dim {
        for sign in [-1.0, 1.0] {
            let mut d = vec![0.0; dim];
            d[k] = sign;
            dirs.push(d);
        }
    }
    let mut idx = 0;
    while dirs.len() < count + 2 * dim && idx < count * 8 {
        let u = halton(idx, dim);
        idx += 1;
        let v: Vec<f64> = u.iter().map(|a| 2.0 * a - 1.0).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-9 && norm <= 1.0 {
            dirs.push(v.iter().map(|a| a / norm).collect());
        }
    }
    dirs
}

/// Sampled `sup |g(y, nu) - g(z, nu)|` over `y, z` in B(x, t) and all
/// directions; a lower bound on the true modulus.
pub fn modulus_of_continuity(
    field: &DensityField,
    x: &[f64],
    t: f64,
    probes: usize,
) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidInput(format!("modulus radius {t} must be positive")));
    }
    let probes = probes.max(2);
    let pts = ball_sample(x, t, probes);
    let dirs = direction_sample(x.len(), 32.min(probes));
    let mut sup = 0.0f64;
    for nu in &dirs {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in &pts {
            let v = field.g_eval(p, nu)?;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        sup = sup.max(hi - lo);
    }
    Ok(sup)
}

/// Sampled local bounds: `M` over the unit ball, `omega` on a dyadic grid
/// of radii down to 1/64.
pub fn local_bounds(field: &DensityField, x: &[f64], probes: usize) -> Result<LocalBounds> {
    let probes = probes.max(2);
    let pts = ball_sample(x, 1.0, probes);
    let dirs = direction_sample(x.len(), 32.min(probes));
    let mut m = 1.0f64;
    for p in &pts {
        let fv = field.f_eval(p)?;
        m = m.max(fv).max(1.0 / fv);
        for nu in &dirs {
            let gv = field.g_eval(p, nu)?;
            m = m.max(gv).max(1.0 / gv);
        }
    }
    let radii = [1.0 / 64.0, 1.0 / 32.0, 1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0, 1.0 / 2.0, 1.0];
    let mut omega_table = Vec::with_capacity(radii.len());
    let mut running = 0.0f64;
    for &t in &radii {
        let w = modulus_of_continuity(field, x, t, probes)?;
        // The true modulus is nondecreasing; sampling noise must not break
        // that, so enforce it with a running max.
        running = running.max(w);
        omega_table.push((t, running));
    }
    let omega_limit = omega_table[0].1;
    Ok(LocalBounds { center: x.to_vec(), m, omega_table, omega_limit })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_endpoints_are_exact() {
        for n in 2..=4 {
            assert_eq!(beta_exponent(0.0, n).unwrap(), (n as f64 - 1.0) / n as f64);
            assert_eq!(beta_exponent(1.0, n).unwrap(), 1.0);
        }
    }

    #[test]
    fn beta_half_two_is_two_thirds() {
        assert!((beta_exponent(0.5, 2).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn beta_rejects_out_of_range() {
        assert!(beta_exponent(-0.1, 2).is_err());
        assert!(beta_exponent(1.1, 2).is_err());
    }

    #[test]
    fn modulus_of_constant_g_is_zero() {
        let field = DensityField::uniform();
        for t in [0.1, 0.5, 1.0] {
            assert_eq!(modulus_of_continuity(&field, &[0.0, 0.0], t, 256).unwrap(), 0.0);
        }
    }

    #[test]
    fn modulus_of_clamped_radial_g() {
        // g(y) = 1 + min(|y - x0|, 1); at x0 with t = 0.5 the sup is 0.5.
        let field = DensityField {
            f: ScalarField::Constant(1.0),
            g: DirectionField::Expression(Expr::parse("1 + min(norm(x), 1)").unwrap()),
            alpha: 0.0,
            family_tag: "custom expression".into(),
        };
        let w = modulus_of_continuity(&field, &[0.0, 0.0], 0.5, 512).unwrap();
        assert!((w - 0.5).abs() < 1e-6, "w = {w}");
    }

    #[test]
    fn anisotropy_without_position_dependence_has_zero_modulus() {
        let field = DensityField {
            f: ScalarField::Constant(1.0),
            g: DirectionField::Expression(Expr::parse("1 + 0.3 * pow(n1, 2)").unwrap()),
            alpha: 0.0,
            family_tag: "custom expression".into(),
        };
        for t in [0.1, 1.0] {
            assert_eq!(modulus_of_continuity(&field, &[0.0, 0.0], t, 128).unwrap(), 0.0);
        }
    }

    #[test]
    fn uniform_local_bounds() {
        let lb = local_bounds(&DensityField::uniform(), &[0.0, 0.0], 64).unwrap();
        assert_eq!(lb.m, 1.0);
        assert!(lb.omega_table.iter().all(|&(_, w)| w == 0.0));
        assert_eq!(lb.omega_limit, 0.0);
    }

    #[test]
    fn clamped_affine_m_is_three() {
        // f ranges over [1/2, 3] on the unit ball, g = 1.
        let field = DensityField {
            f: ScalarField::AffineClamped {
                base: 1.75,
                grad: vec![2.0, 0.0],
                min: 0.5,
                max: 3.0,
            },
            g: DirectionField::Isotropic(ScalarField::Constant(1.0)),
            alpha: 0.0,
            family_tag: "affine".into(),
        };
        let lb = local_bounds(&field, &[0.0, 0.0], 512).unwrap();
        assert!((lb.m - 3.0).abs() < 1e-6, "M = {}", lb.m);
    }

    #[test]
    fn lipschitz_radial_omega_tracks_t() {
        // omega(t) = t for g = 1 + |y - x|.
        let field = DensityField {
            f: ScalarField::Constant(1.0),
            g: DirectionField::Isotropic(ScalarField::RadialHolder {
                center: vec![0.0, 0.0],
                alpha: 1.0,
                scale: 1.0,
                offset: 1.0,
            }),
            alpha: 0.0,
            family_tag: "radial".into(),
        };
        let lb = local_bounds(&field, &[0.0, 0.0], 512).unwrap();
        for &(t, w) in &lb.omega_table {
            if t == 0.25 || t == 0.5 {
                assert!((w - t).abs() < 0.1 * t, "omega({t}) = {w}");
            }
        }
        assert!(lb.omega_table.windows(2).all(|p| p[0].1 <= p[1].1));
        assert!(lb.omega_limit <= lb.omega_table.last().unwrap().1);
    }

    #[test]
    fn m_is_symmetric_in_f_and_g() {
        let s = ScalarField::AffineClamped { base: 1.0, grad: vec![0.7, 0.0], min: 0.4, max: 2.5 };
        let a = DensityField {
            f: s.clone(),
            g: DirectionField::Isotropic(ScalarField::Constant(1.0)),
            alpha: 0.0,
            family_tag: "affine".into(),
        };
        let b = DensityField {
            f: ScalarField::Constant(1.0),
            g: DirectionField::Isotropic(s),
            alpha: 0.0,
            family_tag: "affine".into(),
        };
        let la = local_bounds(&a, &[0.0, 0.0], 256).unwrap();
        let lb = local_bounds(&b, &[0.0, 0.0], 256).unwrap();
        assert!((la.m - lb.m).abs() < 1e-9);
    }

    #[test]
    fn negative_density_is_rejected() {
        let field = DensityField {
            f: ScalarField::Constant(-1.0),
            g: DirectionField::Isotropic(ScalarField::Constant(1.0)),
            alpha: 0.0,
            family_tag: "constant".into(),
        };
        assert!(matches!(
            local_bounds(&field, &[0.0, 0.0], 16),
            Err(Error::InvalidDensity(_))
        ));
    }
}
