//! Weighted volume vectors, weighted cluster perimeters and the Euclidean
//! isoperimetric lower bound.
//!
//! The cluster perimeter is computed along two independent routes and both
//! are stored: a single facet sweep applying the interior/exterior weight
//! rule, and the per-chamber identity `(sum_i P(E_i) + P(union E_i)) / 2`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::density::DensityField;
use crate::grid::{extract_boundary, GridCluster};
use crate::Result;

/// Volumes, perimeter and the per-chamber/interface breakdowns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    /// Weighted volume of each chamber `E_1..E_m`.
    pub volumes: Vec<f64>,
    /// Weighted cluster perimeter (facet-sweep route).
    pub perimeter: f64,
    /// Index 0 holds `P(union E_i)`, index `i` holds `P(E_i)`.
    pub per_chamber_perimeter: Vec<f64>,
    /// Weighted interface area per unordered label pair, keys "i-j".
    pub interface_breakdown: BTreeMap<String, f64>,
}

impl MeasureReport {
    /// The per-chamber route value of the cluster perimeter.
    pub fn perimeter_from_chambers(&self) -> f64 {
        let sum: f64 = self.per_chamber_perimeter[1..].iter().sum();
        0.5 * (sum + self.per_chamber_perimeter[0])
    }
}

/// Weighted volume vector: midpoint quadrature over cells plus ledger
/// corrections.
pub fn weighted_volume(cluster: &GridCluster, field: &DensityField) -> Result<Vec<f64>> {
    let mut volumes = vec![0.0; cluster.m as usize];
    let cell_vol = cluster.spacing.powi(cluster.dims() as i32);
    for cell in cluster.cells() {
        let l = cluster.label(&cell);
        if l > 0 {
            volumes[l as usize - 1] += field.f_eval(&cluster.cell_center(&cell))? * cell_vol;
        }
    }
    for e in &cluster.ledger {
        if e.label > 0 {
            volumes[e.label as usize - 1] += field.f_eval(&cluster.cell_center(&e.cell))? * e.delta;
        }
    }
    Ok(volumes)
}

/// Full measure report: volumes, perimeter by facet sweep, per-chamber
/// perimeters and the pairwise interface breakdown.
pub fn cluster_perimeter(cluster: &GridCluster, field: &DensityField) -> Result<MeasureReport> {
    let facets = extract_boundary(cluster);
    let mut perimeter = 0.0;
    let mut per_chamber = vec![0.0; cluster.m as usize + 1];
    let mut breakdown: BTreeMap<String, f64> = BTreeMap::new();
    for f in &facets {
        let w = field.facet_weight(&f.location, &f.normal, f.inside_label, f.outside_label)?;
        let cost = w * f.area;
        perimeter += cost;
        let lo = f.inside_label.min(f.outside_label);
        let hi = f.inside_label.max(f.outside_label);
        *breakdown.entry(format!("{lo}-{hi}")).or_insert(0.0) += cost;
        // Per-chamber route: each nonzero side pays g at its own outer
        // normal; the union pays only on exterior facets.
        let neg: Vec<f64> = f.normal.iter().map(|v| -v).collect();
        if f.inside_label != 0 {
            per_chamber[f.inside_label as usize] += field.g_eval(&f.location, &f.normal)? * f.area;
        }
        if f.outside_label != 0 {
            per_chamber[f.outside_label as usize] += field.g_eval(&f.location, &neg)? * f.area;
        }
        if f.inside_label == 0 {
            per_chamber[0] += field.g_eval(&f.location, &neg)? * f.area;
        } else if f.outside_label == 0 {
            per_chamber[0] += field.g_eval(&f.location, &f.normal)? * f.area;
        }
    }
    Ok(MeasureReport {
        volumes: weighted_volume(cluster, field)?,
        perimeter,
        per_chamber_perimeter: per_chamber,
        interface_breakdown: breakdown,
    })
}

/// Volume of the Euclidean unit ball in dimension `n`.
pub fn unit_ball_volume(n: u32) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(n - 2) * 2.0 * std::f64::consts::PI / n as f64,
    }
}

/// `N * omega_N^{1/N} * volume^{(N-1)/N}`, the sharp Euclidean
/// isoperimetric lower bound attained by balls.
pub fn euclidean_isoperimetric_lower_bound(volume: f64, n: u32) -> f64 {
    if volume <= 0.0 {
        return 0.0;
    }
    let nf = n as f64;
    nf * unit_ball_volume(n).powf(1.0 / nf) * volume.powf((nf - 1.0) / nf)
}
