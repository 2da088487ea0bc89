//! Labeled grids, boundary facets and exact column profiles.
//!
//! A cluster is stored as a dense array of `u8` chamber labels over an
//! axis-aligned grid (C order, last axis fastest). Label `0` is the
//! exterior chamber; every cell outside the grid extent is implicitly `0`.
//! Boundary extraction walks every cell face and emits a facet wherever
//! the two adjacent labels differ.
//!
//! The column-profile machinery decomposes the labels along one axis of a
//! working box into runs, which is exact on grids and is the substrate for
//! the volume-transfer surgery: profiles are transformed continuously and
//! written back with [`rasterize_profiles`], while a sub-cell volume
//! ledger keeps the bookkeeping exact even when run endpoints do not land
//! on cell boundaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Fractional volume correction attached to one cell.
///
/// `delta` is unweighted N-volume carried by `label` in `cell`, in excess
/// of (or missing from) what the integer label grid states. A cell whose
/// stored label is `l` but which is really only covered by `l` for
/// three-quarters of its height gets a negative entry for `l` and positive
/// entries for whichever labels own the remaining quarter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub cell: Vec<usize>,
    pub label: u8,
    pub delta: f64,
}

/// An m-cluster on an axis-aligned grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCluster {
    /// Per-axis cell counts; `shape.len()` is the dimension N.
    pub shape: Vec<usize>,
    /// Cell side length.
    pub spacing: f64,
    /// Coordinate of the low corner of the grid.
    pub origin: Vec<f64>,
    /// Per-cell chamber index in `0..=m`, C order (last axis fastest).
    pub labels: Vec<u8>,
    /// Number of chambers (label 0 is the exterior and does not count).
    pub m: u8,
    /// Sub-cell volume corrections; empty for cell-aligned clusters.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ledger: Vec<LedgerEntry>,
}

/// One face between two cells carrying different labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFacet {
    /// Facet centroid.
    pub location: Vec<f64>,
    /// Unit normal, pointing from `inside_label` toward `outside_label`.
    pub normal: Vec<f64>,
    /// (N-1)-area of the facet.
    pub area: f64,
    pub inside_label: u8,
    pub outside_label: u8,
}

/// Run-length decomposition of one column of a working box.
///
/// Heights are relative to the box center along the profile axis;
/// `labels_between` has one more entry than `breakpoints` and lists the
/// labels from the bottom of the box upward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnProfile {
    /// (N-1)-dimensional column index relative to the box low corner.
    pub base: Vec<usize>,
    pub breakpoints: Vec<f64>,
    pub labels_between: Vec<u8>,
}

/// Axis-aligned box of whole cells, `lo` inclusive, `hi` exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellBox {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
}

impl CellBox {
    pub fn extent(&self, axis: usize) -> usize {
        self.hi[axis] - self.lo[axis]
    }
}

impl GridCluster {
    pub fn new(
        shape: Vec<usize>,
        spacing: f64,
        origin: Vec<f64>,
        labels: Vec<u8>,
        m: u8,
    ) -> Result<Self> {
        let n = shape.len();
        if !(2..=3).contains(&n) {
            return Err(Error::InvalidInput(format!("dimension {n} not in 2..=3")));
        }
        if shape.iter().any(|&s| s == 0) {
            return Err(Error::InvalidInput("shape entries must be >= 1".into()));
        }
        if !(spacing > 0.0) {
            return Err(Error::InvalidInput("spacing must be positive".into()));
        }
        if origin.len() != n {
            return Err(Error::InvalidInput("origin/shape dimension mismatch".into()));
        }
        let cells: usize = shape.iter().product();
        if labels.len() != cells {
            return Err(Error::InvalidInput(format!(
                "label array has {} entries, grid has {} cells",
                labels.len(),
                cells
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l > m) {
            return Err(Error::InvalidInput(format!("label {l} exceeds m = {m}")));
        }
        Ok(GridCluster { shape, spacing, origin, labels, m, ledger: Vec::new() })
    }

    /// Uniform grid filled with one label.
    pub fn filled(shape: Vec<usize>, spacing: f64, origin: Vec<f64>, label: u8, m: u8) -> Self {
        let cells = shape.iter().product();
        GridCluster::new(shape, spacing, origin, vec![label; cells], m).expect("valid fill")
    }

    pub fn dims(&self) -> usize {
        self.shape.len()
    }

    pub fn num_cells(&self) -> usize {
        self.shape.iter().product()
    }

    fn strides(&self) -> Vec<usize> {
        let n = self.dims();
        let mut s = vec![1usize; n];
        for k in (0..n - 1).rev() {
            s[k] = s[k + 1] * self.shape[k + 1];
        }
        s
    }

    pub fn flat_index(&self, cell: &[usize]) -> usize {
        let strides = self.strides();
        cell.iter().zip(&strides).map(|(c, s)| c * s).sum()
    }

    pub fn unravel(&self, mut idx: usize) -> Vec<usize> {
        let strides = self.strides();
        strides
            .iter()
            .map(|&s| {
                let c = idx / s;
                idx %= s;
                c
            })
            .collect()
    }

    /// Label at an integer cell index, `0` outside the grid extent.
    pub fn label_at(&self, cell: &[isize]) -> u8 {
        for (k, &c) in cell.iter().enumerate() {
            if c < 0 || c as usize >= self.shape[k] {
                return 0;
            }
        }
        let cell: Vec<usize> = cell.iter().map(|&c| c as usize).collect();
        self.labels[self.flat_index(&cell)]
    }

    pub fn label(&self, cell: &[usize]) -> u8 {
        self.labels[self.flat_index(cell)]
    }

    pub fn set_label(&mut self, cell: &[usize], label: u8) {
        let idx = self.flat_index(cell);
        self.labels[idx] = label;
    }

    pub fn cell_center(&self, cell: &[usize]) -> Vec<f64> {
        cell.iter()
            .zip(&self.origin)
            .map(|(&c, &o)| o + (c as f64 + 0.5) * self.spacing)
            .collect()
    }

    /// Low corner coordinate of a cell.
    pub fn cell_corner(&self, cell: &[usize]) -> Vec<f64> {
        cell.iter().zip(&self.origin).map(|(&c, &o)| o + c as f64 * self.spacing).collect()
    }

    pub fn contains_box(&self, b: &CellBox) -> bool {
        b.lo.len() == self.dims()
            && b.hi.len() == self.dims()
            && b.lo.iter().zip(&b.hi).all(|(l, h)| l < h)
            && b.hi.iter().zip(&self.shape).all(|(h, s)| h <= s)
    }

    /// Iterate all cells in C order.
    pub fn cells(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..self.num_cells()).map(|i| self.unravel(i))
    }

    /// Total unweighted volume per chamber (cells plus ledger), length `m`.
    pub fn raw_volumes(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.m as usize];
        let cell_vol = self.spacing.powi(self.dims() as i32);
        for &l in &self.labels {
            if l > 0 {
                v[l as usize - 1] += cell_vol;
            }
        }
        for e in &self.ledger {
            if e.label > 0 {
                v[e.label as usize - 1] += e.delta;
            }
        }
        v
    }
}

/// Orient a cell-face pair: `p` sits on the negative side of the face,
/// `q` on the positive side. Returns (inside, outside, sign of normal).
fn orient(p: u8, q: u8) -> (u8, u8, f64) {
    if q == 0 || (p != 0 && p < q) {
        (p, q, 1.0)
    } else {
        (q, p, -1.0)
    }
}

/// All cell faces where the labels on the two sides differ, including
/// faces against the implicit exterior outside the grid extent.
pub fn extract_boundary(cluster: &GridCluster) -> Vec<BoundaryFacet> {
    let n = cluster.dims();
    let h = cluster.spacing;
    let _area = h.powi(n as i32 - 1);
    let mut facets = Vec::new();
    for cell in cluster.cells() {
        let icell: Vec<isize> = cell.iter().map(|&c| c as isize).collect();
        let q = cluster.label(&cell);
        for axis in 0..n {
            // Face on the negative side of this cell.
            let mut below = icell.clone();
            below[axis] -= 1;
            let p = cluster.label_at(&below);
            if p != q {
                facets.push(make_facet(cluster, &cell, axis, false, p, q));
            }
            // Positive-side face: emitted by the neighbor unless the
            // neighbor is outside the grid.
            if cell[axis] + 1 == cluster.shape[axis] && q != 0 {
                facets.push(make_facet(cluster, &cell, axis, true, q, 0));
            }
        }
    }
    facets
}

fn make_facet(
    cluster: &GridCluster,
    cell: &[usize],
    axis: usize,
    positive_side: bool,
    p: u8,
    q: u8,
) -> BoundaryFacet {
    let n = cluster.dims();
    let h = cluster.spacing;
    let mut location = cluster.cell_center(cell);
    location[axis] = cluster.origin[axis]
        + (cell[axis] as f64 + if positive_side { 1.0 } else { 0.0 }) * h;
    let (inside, outside, sign) = orient(p, q);
    let mut normal = vec![0.0; n];
    normal[axis] = sign;
    BoundaryFacet {
        location,
        normal,
        area: h.powi(n as i32 - 1),
        inside_label: inside,
        outside_label: outside,
    }
}

/// Exact run-length decomposition of every column of `cube` along `axis`.
///
/// Column keys are the (N-1)-dimensional indices relative to the box low
/// corner (profile axis removed); heights are relative to the box center
/// along `axis`.
pub fn vertical_sections(
    cluster: &GridCluster,
    cube: &CellBox,
    axis: usize,
) -> Result<BTreeMap<Vec<usize>, ColumnProfile>> {
    if axis >= cluster.dims() || !cluster.contains_box(cube) {
        return Err(Error::CubeExceedsGrid);
    }
    let h = cluster.spacing;
    let mid = cluster.origin[axis] + 0.5 * (cube.lo[axis] + cube.hi[axis]) as f64 * h;
    let mut out = BTreeMap::new();
    for base in transverse_indices(cube, axis) {
        let mut breakpoints = Vec::new();
        let mut labels = Vec::new();
        let mut cell: Vec<usize> = restore_axis(&base, axis, 0)
            .iter()
            .zip(&cube.lo)
            .map(|(b, l)| b + l)
            .collect();
        for k in cube.lo[axis]..cube.hi[axis] {
            cell[axis] = k;
            let l = cluster.label(&cell);
            match labels.last() {
                Some(&prev) if prev == l => {}
                Some(_) => {
                    breakpoints.push(cluster.origin[axis] + k as f64 * h - mid);
                    labels.push(l);
                }
                None => labels.push(l),
            }
        }
        out.insert(base, ColumnProfile { base: Vec::new(), breakpoints, labels_between: labels });
    }
    // Fill in the base field now that keys are fixed.
    for (k, v) in out.iter_mut() {
        v.base = k.clone();
    }
    Ok(out)
}

/// All transverse (axis removed) indices of `cube`, relative to its low
/// corner, in lexicographic order.
pub fn transverse_indices(cube: &CellBox, axis: usize) -> Vec<Vec<usize>> {
    let dims: Vec<usize> = (0..cube.lo.len()).filter(|&k| k != axis).collect();
    let sizes: Vec<usize> = dims.iter().map(|&k| cube.extent(k)).collect();
    let mut out = Vec::with_capacity(sizes.iter().product());
    let total: usize = sizes.iter().product();
    for mut i in 0..total {
        let mut idx = vec![0usize; sizes.len()];
        for k in (0..sizes.len()).rev() {
            idx[k] = i % sizes[k];
            i /= sizes[k];
        }
        out.push(idx);
    }
    out
}

/// Insert `value` at position `axis` into a transverse index.
pub fn restore_axis(base: &[usize], axis: usize, value: usize) -> Vec<usize> {
    let mut v: Vec<usize> = base.to_vec();
    v.insert(axis, value);
    v
}

impl ColumnProfile {
    /// Label at relative height `t`; exactly at a breakpoint the lower
    /// interval wins.
    pub fn label_at(&self, t: f64) -> u8 {
        let mut idx = 0;
        for (k, &b) in self.breakpoints.iter().enumerate() {
            if t > b {
                idx = k + 1;
            } else {
                break;
            }
        }
        self.labels_between[idx]
    }

    /// Intervals `(t0, t1, label)` covering `(lo, hi)`.
    pub fn intervals(&self, lo: f64, hi: f64) -> Vec<(f64, f64, u8)> {
        let mut out = Vec::new();
        let mut start = lo;
        for (k, &b) in self.breakpoints.iter().enumerate() {
            if b <= lo {
                continue;
            }
            if b >= hi {
                break;
            }
            out.push((start, b, self.labels_between[k]));
            start = b;
        }
        // Label of the final stretch: the interval containing `start`.
        if hi > start {
            let mid = 0.5 * (start + hi);
            out.push((start, hi, self.label_at(mid)));
        }
        // Merge zero-length and equal-label neighbors.
        let mut merged: Vec<(f64, f64, u8)> = Vec::with_capacity(out.len());
        for (a, b, l) in out {
            if b - a <= 0.0 {
                continue;
            }
            match merged.last_mut() {
                Some(last) if last.2 == l && (last.1 - a).abs() < 1e-15 => last.1 = b,
                _ => merged.push((a, b, l)),
            }
        }
        merged
    }

    /// Construct from intervals (merging equal neighbors, dropping empties).
    pub fn from_intervals(base: Vec<usize>, pieces: &[(f64, f64, u8)]) -> ColumnProfile {
        let mut breakpoints = Vec::new();
        let mut labels: Vec<u8> = Vec::new();
        for &(a, b, l) in pieces {
            if b - a <= 0.0 {
                continue;
            }
            match labels.last() {
                Some(&prev) if prev == l => {}
                Some(_) => {
                    breakpoints.push(a);
                    labels.push(l);
                }
                None => labels.push(l),
            }
        }
        if labels.is_empty() {
            labels.push(0);
        }
        ColumnProfile { base, breakpoints, labels_between: labels }
    }
}

/// Write column profiles back to the grid over `cube`.
///
/// Each cell takes the label occupying the majority of its vertical
/// extent (exact halves resolve to the lower interval's label); the
/// difference between fractional occupancy and whole-cell assignment is
/// recorded in the returned cluster's ledger so volume bookkeeping stays
/// exact.
pub fn rasterize_profiles(
    profiles: &BTreeMap<Vec<usize>, ColumnProfile>,
    cluster: &GridCluster,
    cube: &CellBox,
    axis: usize,
) -> Result<GridCluster> {
    if axis >= cluster.dims() || !cluster.contains_box(cube) {
        return Err(Error::CubeExceedsGrid);
    }
    for base in transverse_indices(cube, axis) {
        if !profiles.contains_key(&base) {
            return Err(Error::ProfileCubeMismatch);
        }
    }
    let h = cluster.spacing;
    let n = cluster.dims();
    let col_area = h.powi(n as i32 - 1);
    let mid = cluster.origin[axis] + 0.5 * (cube.lo[axis] + cube.hi[axis]) as f64 * h;
    let mut out = cluster.clone();
    // Drop stale ledger entries inside the cube; they are superseded.
    out.ledger.retain(|e| {
        !(0..n).all(|k| e.cell[k] >= cube.lo[k] && e.cell[k] < cube.hi[k])
    });
    for (base, profile) in profiles {
        let mut cell: Vec<usize> =
            restore_axis(base, axis, 0).iter().zip(&cube.lo).map(|(b, l)| b + l).collect();
        for k in cube.lo[axis]..cube.hi[axis] {
            cell[axis] = k;
            let t0 = cluster.origin[axis] + k as f64 * h - mid;
            let t1 = t0 + h;
            let pieces = profile.intervals(t0, t1);
            // Occupancy per label plus the height where each label first
            // appears, for the lower-interval tie-break.
            let mut occ: BTreeMap<u8, (f64, f64)> = BTreeMap::new();
            for &(a, b, l) in &pieces {
                let e = occ.entry(l).or_insert((0.0, a));
                e.0 += b - a;
            }
            let (&winner, _) = occ
                .iter()
                .max_by(|(_, (la, fa)), (_, (lb, fb))| {
                    // Larger occupancy wins; exact ties go to the lower
                    // first-appearance height.
                    la.partial_cmp(lb)
                        .unwrap()
                        .then(fb.partial_cmp(fa).unwrap())
                })
                .expect("cell has at least one piece");
            out.set_label(&cell, winner);
            for (&l, &(len, _)) in &occ {
                let delta = (len - if l == winner { h } else { 0.0 }) * col_area;
                if delta.abs() > 1e-15 * h * col_area {
                    out.ledger.push(LedgerEntry { cell: cell.clone(), label: l, delta });
                }
            }
        }
    }
    Ok(out)
}
