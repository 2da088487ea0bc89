//! On-disk formats: PGM (P2/P5) label images for 2D clusters, raw `u8`
//! label arrays with a JSON sidecar for any dimension, JSON density
//! configuration files, and JSON/CSV report writers.
//!
//! Raw/JSON round trips are bit-exact: labels are stored verbatim and
//! floats go through serde_json's shortest round-trip representation.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::density::{DensityField, DirectionField, ScalarField};
use crate::expr::Expr;
use crate::grid::{GridCluster, LedgerEntry};
use crate::{Error, Result};

/// Save a 2D cluster as binary PGM (P5), labels as gray values.
pub fn save_pgm(cluster: &GridCluster, path: &Path) -> Result<()> {
    if cluster.dims() != 2 {
        return Err(Error::InvalidInput("PGM output requires a 2D cluster".into()));
    }
    let mut bytes = format!("P5\n{} {}\n255\n", cluster.shape[1], cluster.shape[0]).into_bytes();
    bytes.extend_from_slice(&cluster.labels);
    fs::write(path, bytes)?;
    Ok(())
}

/// Load a P2 (ASCII) or P5 (binary) PGM as a 2D cluster with unit spacing
/// and origin at zero; `m` is the largest label present (at least 1).
pub fn load_pgm(path: &Path) -> Result<GridCluster> {
    let data = fs::read(path)?;
    let mut pos = 0usize;
    let mut token = |data: &[u8]| -> Result<String> {
        // Skip whitespace and '#' comments.
        loop {
            while pos < data.len() && data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < data.len() && data[pos] == b'#' {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("unexpected end of PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&data[start..pos]).into_owned())
    };
    let magic = token(&data)?;
    let width: usize = token(&data)?.parse().map_err(|e| Error::Parse(format!("PGM width: {e}")))?;
    let height: usize =
        token(&data)?.parse().map_err(|e| Error::Parse(format!("PGM height: {e}")))?;
    let maxval: u32 =
        token(&data)?.parse().map_err(|e| Error::Parse(format!("PGM maxval: {e}")))?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Parse(format!("PGM maxval {maxval} outside 1..=255")));
    }
    let count = width * height;
    let labels: Vec<u8> = match magic.as_str() {
        "P5" => {
            // Exactly one whitespace byte separates the header from the raster.
            pos += 1;
            if data.len() < pos + count {
                return Err(Error::Parse("PGM raster truncated".into()));
            }
            data[pos..pos + count].to_vec()
        }
        "P2" => {
            let mut v = Vec::with_capacity(count);
            for _ in 0..count {
                let t = token(&data)?;
                v.push(t.parse::<u8>().map_err(|e| Error::Parse(format!("PGM pixel: {e}")))?);
            }
            v
        }
        other => return Err(Error::Parse(format!("unsupported PGM magic {other:?}"))),
    };
    let m = labels.iter().copied().max().unwrap_or(0).max(1);
    GridCluster::new(vec![height, width], 1.0, vec![0.0, 0.0], labels, m)
}

#[derive(Debug, Serialize, serde::Deserialize)]
struct Sidecar {
    shape: Vec<usize>,
    spacing: f64,
    origin: Vec<f64>,
    m: u8,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    ledger: Vec<LedgerEntry>,
}

/// Save a cluster as `<stem>.raw` (labels, C order) plus `<stem>.json`.
pub fn save_raw(cluster: &GridCluster, raw_path: &Path) -> Result<()> {
    fs::write(raw_path, &cluster.labels)?;
    let sidecar = Sidecar {
        shape: cluster.shape.clone(),
        spacing: cluster.spacing,
        origin: cluster.origin.clone(),
        m: cluster.m,
        ledger: cluster.ledger.clone(),
    };
    fs::write(raw_path.with_extension("json"), serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

/// Load a cluster from `<stem>.raw` + `<stem>.json`.
pub fn load_raw(raw_path: &Path) -> Result<GridCluster> {
    let labels = fs::read(raw_path)?;
    let sidecar: Sidecar = serde_json::from_slice(&fs::read(raw_path.with_extension("json"))?)?;
    let mut cluster =
        GridCluster::new(sidecar.shape, sidecar.spacing, sidecar.origin, labels, sidecar.m)?;
    cluster.ledger = sidecar.ledger;
    Ok(cluster)
}

/// Load a cluster, dispatching on the file extension (`.pgm` or `.raw`).
pub fn load_cluster(path: &Path) -> Result<GridCluster> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => load_pgm(path),
        Some("raw") => load_raw(path),
        other => Err(Error::Config(format!(
            "unsupported cluster extension {other:?} (expected .pgm or .raw)"
        ))),
    }
}

fn as_f64(v: &Value, what: &str) -> Result<f64> {
    v.as_f64().ok_or_else(|| Error::Config(format!("{what} must be a number, got {v}")))
}

fn as_vec_f64(v: &Value, what: &str) -> Result<Vec<f64>> {
    v.as_array()
        .ok_or_else(|| Error::Config(format!("{what} must be an array, got {v}")))?
        .iter()
        .map(|e| as_f64(e, what))
        .collect()
}

fn field(obj: &Value, key: &str) -> Result<Value> {
    obj.get(key)
        .cloned()
        .ok_or_else(|| Error::Config(format!("missing field {key:?} in density config")))
}

/// Parse a scalar-field spec: a bare number (constant) or a tagged object
/// `{"kind": "affine-clamped" | "radial-holder" | "piecewise-constant", ...}`.
fn parse_scalar(v: &Value, what: &str) -> Result<ScalarField> {
    if let Some(c) = v.as_f64() {
        return Ok(ScalarField::Constant(c));
    }
    let kind = field(v, "kind")?;
    let kind = kind.as_str().ok_or_else(|| Error::Config(format!("{what}.kind must be a string")))?.to_owned();
    Ok(match kind.as_str() {
        "constant" => ScalarField::Constant(as_f64(&field(v, "value")?, what)?),
        "affine-clamped" => ScalarField::AffineClamped {
            base: as_f64(&field(v, "base")?, what)?,
            grad: as_vec_f64(&field(v, "grad")?, what)?,
            min: as_f64(&field(v, "min")?, what)?,
            max: as_f64(&field(v, "max")?, what)?,
        },
        "radial-holder" => ScalarField::RadialHolder {
            center: as_vec_f64(&field(v, "center")?, what)?,
            alpha: as_f64(&field(v, "alpha")?, what)?,
            scale: as_f64(&field(v, "scale")?, what)?,
            offset: as_f64(&field(v, "offset")?, what)?,
        },
        "piecewise-constant" => ScalarField::PiecewiseConstant {
            axis: field(v, "axis")?
                .as_u64()
                .ok_or_else(|| Error::Config(format!("{what}.axis must be an integer")))?
                as usize,
            threshold: as_f64(&field(v, "threshold")?, what)?,
            low: as_f64(&field(v, "low")?, what)?,
            high: as_f64(&field(v, "high")?, what)?,
        },
        other => return Err(Error::Config(format!("unknown scalar field kind {other:?}"))),
    })
}

/// Parse a density config file.
///
/// Two forms are accepted: `{"family": ..., "params": {...}, "alpha": ...}`
/// with the built-in families, or `{"expression_f": ..., "expression_g": ...}`
/// in the arithmetic expression grammar.
pub fn parse_density_config(text: &str) -> Result<DensityField> {
    let v: Value = serde_json::from_str(text)?;
    let alpha = match v.get("alpha") {
        Some(a) => as_f64(a, "alpha")?,
        None => 0.0,
    };
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha {alpha} outside [0, 1]")));
    }
    if v.get("expression_f").is_some() || v.get("expression_g").is_some() {
        let f = match v.get("expression_f").and_then(|e| e.as_str()) {
            Some(src) => ScalarField::Expression(Expr::parse(src)?),
            None => ScalarField::Constant(1.0),
        };
        let g = match v.get("expression_g").and_then(|e| e.as_str()) {
            Some(src) => DirectionField::Expression(Expr::parse(src)?),
            None => DirectionField::Isotropic(ScalarField::Constant(1.0)),
        };
        return Ok(DensityField { f, g, alpha, family_tag: "custom expression".into() });
    }
    let family = field(&v, "family")?;
    let family = family
        .as_str()
        .ok_or_else(|| Error::Config("family must be a string".into()))?
        .to_owned();
    let params = v.get("params").cloned().unwrap_or(Value::Object(Default::default()));
    let f = match params.get("f") {
        Some(spec) => parse_scalar(spec, "params.f")?,
        None => ScalarField::Constant(1.0),
    };
    let g = if family == "direction-weighted" {
        let h = match params.get("h") {
            Some(spec) => parse_scalar(spec, "params.h")?,
            None => ScalarField::Constant(1.0),
        };
        let c = as_f64(&field(&params, "c")?, "params.c")?;
        if c.abs() >= 1.0 {
            return Err(Error::Config(format!("direction weight c = {c} outside (-1, 1)")));
        }
        let u = as_vec_f64(&field(&params, "u")?, "params.u")?;
        let norm = u.iter().map(|a| a * a).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("direction u must be a unit vector, |u| = {norm}")));
        }
        DirectionField::DirectionWeighted { h, c, u }
    } else {
        match family.as_str() {
            "constant" | "affine-clamped" | "radial-holder" | "piecewise-constant" => {}
            other => return Err(Error::Config(format!("unknown density family {other:?}"))),
        }
        match params.get("g") {
            Some(spec) => DirectionField::Isotropic(parse_scalar(spec, "params.g")?),
            None => DirectionField::Isotropic(ScalarField::Constant(1.0)),
        }
    };
    Ok(DensityField { f, g, alpha, family_tag: family })
}

/// Load a density config from disk; `None` gives the uniform density.
pub fn load_density(path: Option<&Path>) -> Result<DensityField> {
    match path {
        Some(p) => parse_density_config(&fs::read_to_string(p)?),
        None => Ok(DensityField::uniform()),
    }
}

/// Write a serializable report as pretty JSON.
pub fn save_json_report<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

/// Write a CSV curve with full round-trip float precision.
pub fn save_csv(headers: &[&str], rows: &[Vec<f64>], path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&headers.join(","));
    out.push('\n');
    for row in rows {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            // 17 significant digits: enough to round-trip any f64.
            write!(out, "{v:.17e}").expect("string write");
            first = false;
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Replace the extension of a path, keeping the rest.
pub fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker() -> GridCluster {
        GridCluster::new(vec![2, 3], 0.5, vec![-1.0, 2.0], vec![1, 0, 2, 0, 1, 2], 2).unwrap()
    }

    #[test]
    fn raw_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = checker();
        c.ledger.push(LedgerEntry { cell: vec![0, 1], label: 2, delta: 0.12345678901234567 });
        let path = dir.path().join("cluster.raw");
        save_raw(&c, &path).unwrap();
        let back = load_raw(&path).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn pgm_round_trip_preserves_labels() {
        let dir = tempfile::tempdir().unwrap();
        let c = checker();
        let path = dir.path().join("cluster.pgm");
        save_pgm(&c, &path).unwrap();
        let back = load_cluster(&path).unwrap();
        assert_eq!(back.labels, c.labels);
        assert_eq!(back.shape, c.shape);
        assert_eq!(back.m, 2);
    }

    #[test]
    fn ascii_pgm_with_comments_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ascii.pgm");
        fs::write(&path, "P2\n# a comment\n3 2\n255\n1 0 2\n0 1 2\n").unwrap();
        let c = load_pgm(&path).unwrap();
        assert_eq!(c.shape, vec![2, 3]);
        assert_eq!(c.labels, vec![1, 0, 2, 0, 1, 2]);
    }

    #[test]
    fn density_family_configs_parse() {
        let f = parse_density_config(r#"{"family": "constant", "params": {"f": 2.0, "g": 3.0}}"#)
            .unwrap();
        assert_eq!(f.f_eval(&[0.0, 0.0]).unwrap(), 2.0);
        assert_eq!(f.g_eval(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 3.0);

        let f = parse_density_config(
            r#"{"family": "radial-holder",
                "params": {"g": {"kind": "radial-holder", "center": [0, 0],
                                  "alpha": 1.0, "scale": 1.0, "offset": 1.0}},
                "alpha": 0.0}"#,
        )
        .unwrap();
        assert_eq!(f.g_eval(&[3.0, 4.0], &[1.0, 0.0]).unwrap(), 6.0);

        let f = parse_density_config(
            r#"{"family": "direction-weighted",
                "params": {"c": 0.5, "u": [1.0, 0.0]}}"#,
        )
        .unwrap();
        assert_eq!(f.g_eval(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 1.5);
        assert_eq!(f.g_eval(&[0.0, 0.0], &[-1.0, 0.0]).unwrap(), 0.5);
    }

    #[test]
    fn expression_config_parses() {
        let f = parse_density_config(
            r#"{"expression_f": "1 + x1", "expression_g": "1 + 0.5 * dot(n, [1, 0])"}"#,
        )
        .unwrap();
        assert_eq!(f.family_tag, "custom expression");
        assert_eq!(f.f_eval(&[0.25, 0.0]).unwrap(), 1.25);
        assert_eq!(f.g_eval(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 1.5);
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(parse_density_config(r#"{"family": "no-such-family"}"#).is_err());
        assert!(parse_density_config(
            r#"{"family": "direction-weighted", "params": {"c": 1.5, "u": [1, 0]}}"#
        )
        .is_err());
        assert!(parse_density_config(r#"{"family": "constant", "alpha": 2.0}"#).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        save_csv(&["t", "v"], &[vec![1.0, 2.0], vec![0.5, 0.25]], &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "t,v");
        assert!(lines[1].contains(','));
    }
}
