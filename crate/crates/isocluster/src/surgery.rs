//! Volume-transfer surgery: move a prescribed weighted volume between two
//! chambers across a flat piece of their interface, with a certified
//! perimeter increment of order `|epsilon|^{(N-1)/N}`.
//!
//! The pipeline anchors a working cube at a flat interface point, selects
//! a small sub-cylinder whose columns are clean two-phase profiles,
//! stretches the section at a low height over a thin band, translates the
//! interface up by a solved height `delta`, and squeezes the excess into
//! a sparse strip. Everything is computed on exact column profiles, so
//! chamber volumes hit their targets to bisection accuracy and all other
//! chambers are untouched bit for bit.
//!
//! On top of the pairwise transfer sit the chain composition (adjust one
//! chamber against the exterior through a path of interfaces, with
//! disjoint surgery balls) and the in-ball two-phase adjustment.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;

use crate::density::{beta_exponent, local_bounds, modulus_of_continuity, DensityField};
use crate::grid::{
    rasterize_profiles, restore_axis, vertical_sections, CellBox,
    ColumnProfile, GridCluster,
};
use crate::measures::{cluster_perimeter, weighted_volume, MeasureReport};
use crate::{Error, Result};

/// `C = 2^{N+3} N M^2 + 6`, the perimeter-increment constant.
pub fn perimeter_constant(n: u32, m_const: f64) -> f64 {
    2f64.powi(n as i32 + 3) * n as f64 * m_const * m_const + 6.0
}

/// `delta_bar = 2 M epsilon / ell^{N-1}`, the translation-height ceiling.
pub fn delta_bar_value(m_const: f64, epsilon: f64, ell: f64, n: u32) -> f64 {
    2.0 * m_const * epsilon / ell.powi(n as i32 - 1)
}

/// Guaranteed number of usable sub-cubes, `a^{N-1} / (2^{N+1} ell^{N-1})`.
pub fn min_cube_count(a: f64, ell: f64, n: u32) -> f64 {
    a.powi(n as i32 - 1) / (2f64.powi(n as i32 + 1) * ell.powi(n as i32 - 1))
}

/// Orientation of the working cube: `axis` is the grid axis normal to the
/// interface; when `flip` is set, "up" (from the gaining chamber toward
/// the giving chamber) points in the negative axis direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Frame {
    pub axis: usize,
    pub flip: bool,
}

impl Frame {
    fn sign(&self) -> f64 {
        if self.flip {
            -1.0
        } else {
            1.0
        }
    }
}

/// An anchored interface point with the admissible chamber ordering:
/// chamber `i` sits below the interface (in frame coordinates) and gains
/// volume for positive epsilon.
#[derive(Debug, Clone, Serialize)]
pub struct InterfacePoint {
    pub point: Vec<f64>,
    pub i: u8,
    pub j: u8,
    /// Whether the requested (i, j) ordering had to be swapped to satisfy
    /// the exterior-contact condition.
    pub swapped: bool,
    pub frame: Frame,
    /// Cell on the positive-axis side of the anchored facet.
    pub cell_hi: Vec<usize>,
    /// Half-width (in cells) of the largest exactly flat two-phase box
    /// around the facet.
    pub flatness_score: usize,
}

/// Tuning knobs for planning a transfer.
#[derive(Debug, Clone)]
pub struct PlanOptions {
    /// Perimeter constant requested when the sampled modulus vanishes.
    pub k_user: f64,
    /// Probe budget for local density bounds and moduli.
    pub probes: usize,
    /// The symmetric difference must fit in a ball of this radius.
    pub max_radius: f64,
    /// Preferred cube side; adapts the `L` scaling to the modulus at this
    /// scale instead of the zero-scale limit.
    pub scale_hint: Option<f64>,
    /// Restrict the interface search to facets within the given distance
    /// of a point.
    pub anchor: Option<(Vec<f64>, f64)>,
    pub seed: u64,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            k_user: 0.7,
            probes: 2048,
            max_radius: f64::INFINITY,
            scale_hint: None,
            anchor: None,
            seed: 0,
        }
    }
}

/// Interface-flatness statistics of a working cube.
#[derive(Debug, Clone, Serialize)]
pub struct FlatnessStats {
    /// Normalized boundary mass of the gaining chamber in the thin slab.
    pub interface_density_i: f64,
    pub interface_density_j: f64,
    /// Boundary mass outside the slab.
    pub slab_excess: f64,
    /// Volume of halfspace-mismatch cells.
    pub misvolume: f64,
    /// Boundary mass of each chamber other than i, j inside the cube.
    pub foreign_boundary: Vec<(u8, f64)>,
    /// Fraction of columns that are clean two-phase profiles with the
    /// interface near height zero (filled by [`good_set`]).
    pub good_fraction: f64,
    pub pass: bool,
    pub violations: Vec<String>,
}

/// The fully resolved transfer plan.
#[derive(Debug, Clone, Serialize)]
pub struct SurgeryPlan {
    pub x_bar: Vec<f64>,
    /// Working chamber pair: `i` gains `epsilon_working`.
    pub i: u8,
    pub j: u8,
    /// The requested ordering was swapped for the exterior condition.
    pub condition_swapped: bool,
    /// Signed-epsilon swap: the request was negative, so the roles of the
    /// two chambers were exchanged once more.
    pub orientation_flipped: bool,
    pub frame: Frame,
    pub a: f64,
    pub a_cells: usize,
    pub rho: f64,
    pub l_scale: f64,
    pub ell: f64,
    pub ell_cells: usize,
    pub cube: CellBox,
    pub q_eps: CellBox,
    pub sigma_minus: f64,
    pub sigma_plus: f64,
    pub delta_bar: f64,
    /// Solved translation height (0 until the volume solve runs).
    pub delta: f64,
    pub k_strips: usize,
    /// Requested signed volume change for the originally named chamber.
    pub epsilon: f64,
    /// Positive working volume change after orientation resolution.
    pub epsilon_working: f64,
    pub epsilon_max: f64,
    pub m_const: f64,
    pub c_const: f64,
    pub omega_hat: f64,
    pub omega_bar: f64,
    pub k_user: f64,
    pub k_required: f64,
    pub seed: u64,
}

/// Outcome of planning: either a plan, or an early exit where absorbing a
/// foreign pocket already decreased the perimeter.
#[derive(Debug, Clone)]
pub enum PlanOutcome {
    Plan(Box<SurgeryPlan>),
    PerimeterDecreased { cluster: GridCluster, perimeter_drop: f64 },
}

/// One Step-VIII style term of the perimeter accounting.
#[derive(Debug, Clone, Serialize)]
pub struct TermReport {
    pub name: String,
    pub value: f64,
    pub budget: f64,
    pub within_budget: bool,
}

/// Result of an executed transfer.
#[derive(Debug, Clone)]
pub struct TransferOutcome {
    pub cluster: GridCluster,
    pub plan: SurgeryPlan,
    pub before: MeasureReport,
    pub after: MeasureReport,
    /// Exact (profile-level) weighted perimeter change.
    pub perimeter_delta_exact: f64,
    pub delta: f64,
    pub terms: Vec<TermReport>,
}

/// A transfer either moved the volume or decreased the perimeter by
/// absorbing a degenerate foreign pocket.
#[derive(Debug, Clone)]
pub enum TransferResult {
    Transferred(Box<TransferOutcome>),
    PerimeterDecreased { cluster: GridCluster, perimeter_drop: f64 },
}

/// Perimeter-bound verdict for a completed transfer.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub c_const: f64,
    pub m_const: f64,
    pub omega_hat: f64,
    pub k_required: f64,
    pub epsilon: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
    pub terms: Vec<TermReport>,
}

/// Report of a chained single-chamber adjustment.
#[derive(Debug, Clone, Serialize)]
pub struct AdjustmentReport {
    pub chain: Vec<u8>,
    pub balls: Vec<(Vec<f64>, f64)>,
    pub k0_max: f64,
    pub perimeter_delta_exact: f64,
    pub volumes_before: Vec<f64>,
    pub volumes_after: Vec<f64>,
    pub epsilon: f64,
    /// `m * K0 * |epsilon|^{(N-1)/N}`.
    pub bound: f64,
    pub bound_ok: bool,
    pub plans: Vec<SurgeryPlan>,
}

/// Report of an in-ball two-phase adjustment.
#[derive(Debug, Clone, Serialize)]
pub struct BallAdjustmentReport {
    pub center: Vec<f64>,
    pub radius: f64,
    pub i: u8,
    pub j: u8,
    pub epsilon: f64,
    pub beta: f64,
    pub perimeter_increment: f64,
    pub bound: f64,
    pub bound_ok: bool,
    /// Whether the increment is reported under the symmetrized weight
    /// (automatic: interior facets already use the half-sum rule).
    pub symmetrized: bool,
    pub plan: SurgeryPlan,
}

// ---------------------------------------------------------------------
// Interface search and the exterior-contact condition.
// ---------------------------------------------------------------------

/// Facet area between labels `a` and `b`, counting only cell pairs that
/// are both inside the grid (the clipping boundary at the grid edge is a
/// window artifact and does not count as a genuine interface).
pub fn explicit_interface_area(cluster: &GridCluster, a: u8, b: u8) -> f64 {
    let n = cluster.dims();
    let face = cluster.spacing.powi(n as i32 - 1);
    let mut count = 0usize;
    for cell in cluster.cells() {
        let p = cluster.label(&cell);
        for axis in 0..n {
            if cell[axis] + 1 >= cluster.shape[axis] {
                continue;
            }
            let mut nb = cell.clone();
            nb[axis] += 1;
            let q = cluster.label(&nb);
            if (p == a && q == b) || (p == b && q == a) {
                count += 1;
            }
        }
    }
    count as f64 * face
}

#[derive(Debug, Clone)]
struct Candidate {
    cell_hi: Vec<usize>,
    axis: usize,
    lo_label: u8,
    hi_label: u8,
}

fn interface_candidates(cluster: &GridCluster, i: u8, j: u8) -> Vec<Candidate> {
    let n = cluster.dims();
    let mut out = Vec::new();
    for cell in cluster.cells() {
        let p = cluster.label(&cell);
        for axis in 0..n {
            if cell[axis] + 1 >= cluster.shape[axis] {
                continue;
            }
            let mut nb = cell.clone();
            nb[axis] += 1;
            let q = cluster.label(&nb);
            if (p == i && q == j) || (p == j && q == i) {
                out.push(Candidate { cell_hi: nb, axis, lo_label: p, hi_label: q });
            }
        }
    }
    out
}

fn facet_centroid(cluster: &GridCluster, cand: &Candidate) -> Vec<f64> {
    let mut loc = cluster.cell_center(&cand.cell_hi);
    loc[cand.axis] = cluster.origin[cand.axis] + cand.cell_hi[cand.axis] as f64 * cluster.spacing;
    loc
}

/// Run `f` over the cartesian product of the ranges, short-circuiting on
/// `false`.
fn for_each_cell(ranges: &[(usize, usize)], f: &mut impl FnMut(&[usize]) -> bool) -> bool {
    let n = ranges.len();
    let mut cell: Vec<usize> = ranges.iter().map(|r| r.0).collect();
    if ranges.iter().any(|r| r.0 >= r.1) {
        return true;
    }
    loop {
        if !f(&cell) {
            return false;
        }
        let mut d = n;
        loop {
            if d == 0 {
                return true;
            }
            d -= 1;
            cell[d] += 1;
            if cell[d] < ranges[d].1 {
                break;
            }
            cell[d] = ranges[d].0;
        }
    }
}

/// Half-width of the largest box around the facet in which the cluster is
/// exactly the two-phase halfspace configuration (capped for speed).
fn flatness_score(cluster: &GridCluster, cand: &Candidate, cap: usize) -> usize {
    let n = cluster.dims();
    let base = &cand.cell_hi;
    let k_plane = base[cand.axis];
    let check = |cell: &[usize]| -> bool {
        let expected = if cell[cand.axis] < k_plane { cand.lo_label } else { cand.hi_label };
        cluster.label(cell) == expected
    };
    let mut w = 0usize;
    'grow: while w < cap {
        let next = w + 1;
        for d in 0..n {
            if base[d] < next || base[d] + next > cluster.shape[d] {
                break 'grow;
            }
        }
        // Check only the new shell: cells with at least one coordinate at
        // an extreme of the grown box; earlier dimensions are restricted
        // to interior values to avoid re-checking corners.
        for d in 0..n {
            for side in [base[d] - next, base[d] + next - 1] {
                let ranges: Vec<(usize, usize)> = (0..n)
                    .map(|e| {
                        if e == d {
                            (side, side + 1)
                        } else if e < d {
                            (base[e] - next + 1, base[e] + next - 1)
                        } else {
                            (base[e] - next, base[e] + next)
                        }
                    })
                    .collect();
                if !for_each_cell(&ranges, &mut |cell| check(cell)) {
                    break 'grow;
                }
            }
        }
        w = next;
    }
    w
}

/// Locate a flat interface point between chambers `i` and `j`, resolving
/// the exterior-contact condition (the chamber written first must be the
/// exterior itself or have no genuine interface with it, swapping the
/// pair if necessary).
pub fn find_interface_point(
    cluster: &GridCluster,
    i: u8,
    j: u8,
    opts: &PlanOptions,
) -> Result<InterfacePoint> {
    if i == j || i > cluster.m || j > cluster.m {
        return Err(Error::InvalidInput(format!("invalid chamber pair ({i}, {j})")));
    }
    let mut candidates = interface_candidates(cluster, i, j);
    if candidates.is_empty() {
        return Err(Error::EmptyInterface { i, j });
    }
    let admissible = |x: u8| x == 0 || explicit_interface_area(cluster, x, 0) == 0.0;
    let (oi, oj, swapped) = if admissible(i) {
        (i, j, false)
    } else if admissible(j) {
        (j, i, true)
    } else {
        return Err(Error::ConditionViolated { i, j });
    };
    if let Some((anchor, tol)) = &opts.anchor {
        candidates.retain(|c| {
            let loc = facet_centroid(cluster, c);
            let d2: f64 = loc.iter().zip(anchor).map(|(a, b)| (a - b) * (a - b)).sum();
            d2.sqrt() <= *tol
        });
        if candidates.is_empty() {
            return Err(Error::EmptyInterface { i, j });
        }
    }
    let cap = 64;
    let mut best: Option<(usize, usize)> = None; // (score, index)
    for (idx, cand) in candidates.iter().enumerate() {
        let score = flatness_score(cluster, cand, cap);
        if best.map(|(s, _)| score > s).unwrap_or(true) {
            best = Some((score, idx));
        }
    }
    let (score, idx) = best.expect("candidate list nonempty");
    let cand = &candidates[idx];
    let point = facet_centroid(cluster, cand);
    // "Up" points from the gaining chamber oi toward oj.
    let flip = cand.lo_label != oi;
    Ok(InterfacePoint {
        point,
        i: oi,
        j: oj,
        swapped,
        frame: Frame { axis: cand.axis, flip },
        cell_hi: cand.cell_hi.clone(),
        flatness_score: score,
    })
}

// ---------------------------------------------------------------------
// Working cube, flatness statistics, good set.
// ---------------------------------------------------------------------

/// Cell box of the working cube of side `a_cells` (even) anchored at the
/// interface point: the interface plane splits it in half along the frame
/// axis.
pub fn working_cube(cluster: &GridCluster, point: &InterfacePoint, a_cells: usize) -> Result<CellBox> {
    if a_cells < 2 || a_cells % 2 != 0 {
        return Err(Error::InvalidInput(format!("cube side {a_cells} must be even and >= 2")));
    }
    let n = cluster.dims();
    let half = a_cells / 2;
    let mut lo = vec![0usize; n];
    let mut hi = vec![0usize; n];
    for d in 0..n {
        let center = point.cell_hi[d];
        if center < half || center + half > cluster.shape[d] {
            return Err(Error::CubeExceedsGrid);
        }
        lo[d] = center - half;
        hi[d] = center + half;
    }
    Ok(CellBox { lo, hi })
}

/// Height of an axis coordinate in frame coordinates (positive toward the
/// giving chamber).
fn frame_height(point: &InterfacePoint, axis_coord: f64) -> f64 {
    point.frame.sign() * (axis_coord - point.point[point.frame.axis])
}

/// Convert a column profile between axis and frame coordinates (its own
/// inverse).
fn to_frame(p: &ColumnProfile, flip: bool) -> ColumnProfile {
    if !flip {
        return p.clone();
    }
    ColumnProfile {
        base: p.base.clone(),
        breakpoints: p.breakpoints.iter().rev().map(|b| -b).collect(),
        labels_between: p.labels_between.iter().rev().copied().collect(),
    }
}

/// Compute the flatness statistics of the working cube at the given side
/// and flatness parameter. `m_const` enters the foreign-boundary
/// thresholds.
pub fn flatness_stats(
    cluster: &GridCluster,
    point: &InterfacePoint,
    a_cells: usize,
    rho: f64,
    m_const: f64,
) -> Result<FlatnessStats> {
    let cube = working_cube(cluster, point, a_cells)?;
    let n = cluster.dims();
    let h = cluster.spacing;
    let face = h.powi(n as i32 - 1);
    let a_phys = a_cells as f64 * h;
    let slab = a_phys * rho;
    let (i, j) = (point.i, point.j);
    let mf = cluster.m as f64;

    let mut density_i = 0.0;
    let mut density_j = 0.0;
    let mut slab_excess = 0.0;
    let mut foreign: BTreeMap<u8, f64> = (0..=cluster.m)
        .filter(|&l| l != i && l != j)
        .map(|l| (l, 0.0))
        .collect();
    let mut misvolume = 0.0;

    let in_cube = |cell: &[usize]| (0..n).all(|d| cell[d] >= cube.lo[d] && cell[d] < cube.hi[d]);
    let mut cell = cube.lo.clone();
    loop {
        let p = cluster.label(&cell);
        // Halfspace mismatch.
        let t_center = frame_height(point, cluster.cell_center(&cell)[point.frame.axis]);
        let expected = if t_center < 0.0 { i } else { j };
        if p != expected {
            misvolume += h.powi(n as i32);
        }
        // Interior facets on the positive side of each axis.
        for axis in 0..n {
            if cell[axis] + 1 >= cube.hi[axis] {
                continue;
            }
            let mut nb = cell.clone();
            nb[axis] += 1;
            if !in_cube(&nb) {
                continue;
            }
            let q = cluster.label(&nb);
            if p == q {
                continue;
            }
            // Facet centroid height in frame coordinates.
            let t = if axis == point.frame.axis {
                frame_height(
                    point,
                    cluster.origin[axis] + nb[axis] as f64 * h,
                )
            } else {
                t_center
            };
            let in_slab = t.abs() < slab || (axis == point.frame.axis && t == 0.0);
            if in_slab {
                if p == i || q == i {
                    density_i += face;
                }
                if p == j || q == j {
                    density_j += face;
                }
            } else {
                slab_excess += face;
            }
            for l in [p, q] {
                if let Some(v) = foreign.get_mut(&l) {
                    *v += face;
                }
            }
        }
        // Advance in C order within the cube.
        let mut d = n;
        let mut done = false;
        loop {
            if d == 0 {
                done = true;
                break;
            }
            d -= 1;
            cell[d] += 1;
            if cell[d] < cube.hi[d] {
                break;
            }
            cell[d] = cube.lo[d];
        }
        if done {
            break;
        }
    }

    let norm = a_phys.powi(n as i32 - 1);
    density_i /= norm;
    density_j /= norm;

    let mut violations = Vec::new();
    if !(1.0 - rho..=1.0 + rho).contains(&density_i) {
        violations.push(format!("interface density of the gaining chamber is {density_i}"));
    }
    if !(1.0 - rho..=1.0 + rho).contains(&density_j) {
        violations.push(format!("interface density of the giving chamber is {density_j}"));
    }
    if slab_excess > rho * norm {
        violations.push(format!("boundary mass outside the slab is {slab_excess}"));
    }
    if misvolume >= rho.powi(3) * a_phys.powi(n as i32) {
        violations.push(format!("halfspace mismatch volume is {misvolume}"));
    }
    let tight = rho / (3.0 * mf * m_const * m_const) * norm;
    let loose = rho * norm;
    for (&l, &v) in &foreign {
        let limit = if l == 0 { loose } else { tight.min(loose) };
        if v >= limit {
            violations.push(format!("chamber {l} carries boundary mass {v} in the cube"));
        }
    }
    Ok(FlatnessStats {
        interface_density_i: density_i,
        interface_density_j: density_j,
        slab_excess,
        misvolume,
        foreign_boundary: foreign.into_iter().collect(),
        good_fraction: 0.0,
        pass: violations.is_empty(),
        violations,
    })
}

/// Identify the good columns of the working cube (clean `[i, j]` profiles
/// with the interface inside the slab) and update the statistics with the
/// good fraction and the column-budget checks.
pub fn good_set(
    cluster: &GridCluster,
    point: &InterfacePoint,
    a_cells: usize,
    rho: f64,
    stats: &FlatnessStats,
) -> Result<(BTreeSet<Vec<usize>>, FlatnessStats)> {
    let cube = working_cube(cluster, point, a_cells)?;
    let axis = point.frame.axis;
    let n = cluster.dims();
    let h = cluster.spacing;
    let a_phys = a_cells as f64 * h;
    let slab = a_phys * rho;
    let sections = vertical_sections(cluster, &cube, axis)?;
    let mut good = BTreeSet::new();
    let mut bad_boundary = 0.0;
    let face = h.powi(n as i32 - 1);
    for (base, profile) in &sections {
        let fp = to_frame(profile, point.frame.flip);
        let is_good = fp.labels_between == vec![point.i, point.j]
            && fp.breakpoints.len() == 1
            && fp.breakpoints[0].abs() <= slab.max(f64::EPSILON * a_phys);
        if is_good {
            good.insert(base.clone());
        } else {
            bad_boundary += fp.breakpoints.len() as f64 * face;
        }
    }
    let total = sections.len() as f64;
    let mut out = stats.clone();
    out.good_fraction = good.len() as f64 / total;
    let norm = a_phys.powi(n as i32 - 1);
    let mf = cluster.m as f64;
    let bad_area = (total - good.len() as f64) * face;
    if bad_area > (mf + 4.0) * rho * norm {
        out.violations.push(format!("bad-column area {bad_area} exceeds the good-set budget"));
        out.pass = false;
    }
    if bad_boundary > (3.0 * mf + 11.0) * rho * norm {
        out.violations
            .push(format!("boundary mass {bad_boundary} over bad columns exceeds its budget"));
        out.pass = false;
    }
    Ok((good, out))
}

// ---------------------------------------------------------------------
// Degenerate absorption branch.
// ---------------------------------------------------------------------

/// Absorb the pocket of one chamber inside the cube into a neighboring
/// chamber when its boundary is dominated by that neighbor, returning the
/// modified cluster and the (positive) perimeter drop when successful.
pub fn absorb_foreign(
    cluster: &GridCluster,
    field: &DensityField,
    cube: &CellBox,
    i: u8,
    j: u8,
    m_const: f64,
) -> Result<Option<(GridCluster, f64)>> {
    let n = cluster.dims();
    let face = cluster.spacing.powi(n as i32 - 1);
    let mf = cluster.m as f64;
    // Pick the foreign chamber with the most boundary inside the cube.
    let mut mass: BTreeMap<u8, f64> = BTreeMap::new();
    let mut cells_of: BTreeMap<u8, Vec<Vec<usize>>> = BTreeMap::new();
    let in_cube = |cell: &[usize]| (0..n).all(|d| cell[d] >= cube.lo[d] && cell[d] < cube.hi[d]);
    for cell in cluster.cells() {
        if !in_cube(&cell) {
            continue;
        }
        let p = cluster.label(&cell);
        if p == i || p == j {
            continue;
        }
        cells_of.entry(p).or_default().push(cell.clone());
        let icell: Vec<isize> = cell.iter().map(|&c| c as isize).collect();
        for axis in 0..n {
            for step in [-1isize, 1] {
                let mut nb = icell.clone();
                nb[axis] += step;
                if cluster.label_at(&nb) != p {
                    *mass.entry(p).or_insert(0.0) += 0.5 * face;
                }
            }
        }
    }
    let Some((&target, _)) = mass.iter().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()) else {
        return Ok(None);
    };
    let pocket = &cells_of[&target];
    // Decompose the pocket boundary by the label on the other side.
    let mut by_label: BTreeMap<u8, f64> = BTreeMap::new();
    let pocket_set: BTreeSet<&Vec<usize>> = pocket.iter().collect();
    for cell in pocket {
        let icell: Vec<isize> = cell.iter().map(|&c| c as isize).collect();
        for axis in 0..n {
            for step in [-1isize, 1] {
                let mut nb = icell.clone();
                nb[axis] += step;
                let q = cluster.label_at(&nb);
                if q == target {
                    let unb: Vec<usize> = nb.iter().map(|&c| c.max(0) as usize).collect();
                    if nb.iter().all(|&c| c >= 0) && pocket_set.contains(&unb) {
                        continue;
                    }
                    // Same label outside the cube: still interior to the
                    // chamber, not boundary.
                    continue;
                }
                *by_label.entry(q).or_insert(0.0) += face;
            }
        }
    }
    let total: f64 = by_label.values().sum();
    if total == 0.0 {
        return Ok(None);
    }
    let into = if target != 0
        && by_label.get(&0).copied().unwrap_or(0.0)
            >= (1.0 - 1.0 / (3.0 * m_const * m_const)) * total
    {
        0
    } else if target == 0 {
        j
    } else {
        let threshold = total / (3.0 * mf * m_const * m_const);
        let best = by_label
            .iter()
            .filter(|(&l, _)| l != target)
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap());
        match best {
            Some((&l, &v)) if v >= threshold => l,
            _ => return Ok(None),
        }
    };
    let mut out = cluster.clone();
    for cell in pocket {
        out.set_label(cell, into);
    }
    let before = cluster_perimeter(cluster, field)?.perimeter;
    let after = cluster_perimeter(&out, field)?.perimeter;
    if after < before {
        Ok(Some((out, before - after)))
    } else {
        Ok(None)
    }
}

// ---------------------------------------------------------------------
// Sub-cube and strip selection.
// ---------------------------------------------------------------------

/// Selected sub-cylinder and strip heights.
#[derive(Debug, Clone, Serialize)]
pub struct Selection {
    pub q_eps: CellBox,
    pub sigma_minus: f64,
    pub sigma_plus: f64,
    pub delta_bar: f64,
    pub k_strips: usize,
    pub ell_cells: usize,
    pub ell: f64,
}

fn differ_segments(
    a: &ColumnProfile,
    b: &ColumnProfile,
    lo: f64,
    hi: f64,
) -> Vec<(f64, f64, u8, u8)> {
    let ia = a.intervals(lo, hi);
    let ib = b.intervals(lo, hi);
    let mut out = Vec::new();
    let (mut p, mut q) = (0usize, 0usize);
    let mut t = lo;
    while p < ia.len() && q < ib.len() {
        let end = ia[p].1.min(ib[q].1);
        if end > t && ia[p].2 != ib[q].2 {
            out.push((t, end, ia[p].2, ib[q].2));
        }
        t = end;
        if ia[p].1 <= end {
            p += 1;
        }
        if q < ib.len() && ib[q].1 <= end {
            q += 1;
        }
    }
    out
}

/// Select the sub-cylinder `Q_eps`, the sparse strip height `sigma_plus`
/// and the clean section height `sigma_minus` for a transfer of weighted
/// volume `epsilon > 0`.
pub fn select_subcube_and_strips(
    cluster: &GridCluster,
    point: &InterfacePoint,
    a_cells: usize,
    rho: f64,
    m_const: f64,
    epsilon: f64,
    l_scale: f64,
) -> Result<Selection> {
    let cube = working_cube(cluster, point, a_cells)?;
    let n = cluster.dims();
    let ni = n as i32;
    let h = cluster.spacing;
    let a_phys = a_cells as f64 * h;
    let axis = point.frame.axis;
    let flip = point.frame.flip;
    let mf = cluster.m as f64;
    let half = a_phys / 2.0;
    let (wi, wj) = (point.i, point.j);

    // Quantized ell, bumped up if the strip count would vanish.
    let mut ell_cells = ((l_scale * epsilon.powf(1.0 / n as f64) / h).round() as usize)
        .clamp(1, (a_cells / 8).max(1));
    let mut delta_bar = delta_bar_value(m_const, epsilon, ell_cells as f64 * h, n as u32);
    while 2.0 * (a_phys / (6.0 * delta_bar)).floor() < 1.0 && ell_cells < (a_cells / 8).max(1) {
        ell_cells += 1;
        delta_bar = delta_bar_value(m_const, epsilon, ell_cells as f64 * h, n as u32);
    }
    let ell = ell_cells as f64 * h;
    let k_strips = (2.0 * (a_phys / (6.0 * delta_bar)).floor()) as usize;
    if k_strips < 1 {
        return Err(Error::EpsilonTooLarge {
            epsilon,
            limit: a_phys * ell.powi(ni - 1) / (12.0 * m_const),
        });
    }

    // Cached frame profiles and good columns.
    let sections = vertical_sections(cluster, &cube, axis)?;
    let frames: BTreeMap<Vec<usize>, ColumnProfile> =
        sections.iter().map(|(k, v)| (k.clone(), to_frame(v, flip))).collect();
    let slab = a_phys * rho;
    let good: BTreeSet<Vec<usize>> = frames
        .iter()
        .filter(|(_, fp)| {
            fp.labels_between == vec![wi, wj]
                && fp.breakpoints.len() == 1
                && fp.breakpoints[0].abs() <= slab.max(f64::EPSILON * a_phys)
        })
        .map(|(k, _)| k.clone())
        .collect();

    // Budgets, all in physical units with the quantized ell.
    let lnorm = ell.powi(ni - 1);
    let b10 = (1.0 + 5.0 * 2f64.powi(ni + 1) * (mf + 3.0) * rho) * lnorm;
    let b11 = 3.0 * 2f64.powi(ni + 1) * mf * rho * lnorm;
    let b13 = 3.0 * 2f64.powi(ni + 1) * (mf + 4.0) * rho * lnorm;
    let b_ul = 2f64.powi(ni + 4) * (mf + 4.0) * rho * lnorm;
    let b_lat = 2f64.powi(ni + 2) * (n as f64 - 1.0) * ell.powi(ni - 2);
    let face = h.powi(ni - 1);
    let edge = h.powi(ni - 2);

    // Evaluate one candidate placement of the inner ell-cube given by its
    // low corner in transverse cell coordinates (relative to the cube).
    let tdims: Vec<usize> = (0..n).filter(|&d| d != axis).collect();
    let member = |lo_t: &[usize], col: &[usize]| {
        lo_t.iter().zip(col).all(|(&l, &c)| c >= l && c < l + ell_cells)
    };
    let columns_of = |lo_t: &[usize]| -> Vec<Vec<usize>> {
        let ranges: Vec<(usize, usize)> = lo_t.iter().map(|&l| (l, l + ell_cells)).collect();
        let mut cols = Vec::new();
        for_each_cell(&ranges, &mut |c| {
            cols.push(c.to_vec());
            true
        });
        cols
    };
    let evaluate = |lo_t: &[usize]| -> Option<()> {
        let cols = columns_of(lo_t);
        let mut mass10 = 0.0;
        let mut mass11 = 0.0;
        let mut bad_area = 0.0;
        let mut mass_ul = 0.0;
        let mut wall = 0.0;
        for col in &cols {
            let fp = &frames[col];
            let bad = !good.contains(col);
            if bad {
                bad_area += face;
            }
            for (k, &b) in fp.breakpoints.iter().enumerate() {
                mass10 += face;
                let l0 = fp.labels_between[k];
                let l1 = fp.labels_between[k + 1];
                let foreign = (l0 != wi && l0 != wj) || (l1 != wi && l1 != wj);
                if b.abs() >= slab || foreign {
                    mass11 += face;
                }
                if bad {
                    mass_ul += face;
                }
            }
            // Vertical pieces against each transverse neighbor.
            for ti in 0..tdims.len() {
                // Positive-direction neighbor, to count each pair once.
                let mut nb = col.clone();
                nb[ti] += 1;
                let Some(fq) = frames.get(&nb) else { continue };
                let both_in = member(lo_t, &nb);
                if both_in {
                    for (t0, t1, l0, l1) in differ_segments(fp, fq, -half, half) {
                        let len = t1 - t0;
                        let foreign = (l0 != wi && l0 != wj) || (l1 != wi && l1 != wj);
                        mass10 += len * edge;
                        let outside = if foreign {
                            len
                        } else {
                            // Length of the segment outside (-slab, slab).
                            (len - (t1.min(slab) - t0.max(-slab)).max(0.0)).max(0.0)
                        };
                        mass11 += outside * edge;
                        if bad || !good.contains(&nb) {
                            mass_ul += len * edge;
                        }
                    }
                }
                // Wall crossings: breakpoints of the boundary columns on
                // the two walls normal to this transverse direction.
                if col[ti] == lo_t[ti] || col[ti] + 1 == lo_t[ti] + ell_cells {
                    wall += fp.breakpoints.len() as f64 * edge;
                }
            }
        }
        if mass10 <= b10 && mass11 <= b11 && bad_area <= b13 && mass_ul <= b_ul && wall <= b_lat {
            Some(())
        } else {
            None
        }
    };

    // Outer 2ell-cubes on a coarse grid, then inner offsets, first pass
    // wins (deterministic).
    let t_extent = a_cells;
    let mut outer_starts: Vec<usize> = Vec::new();
    let mut s = 1usize;
    while s + 2 * ell_cells <= t_extent - 1 {
        outer_starts.push(s);
        s += 2 * ell_cells;
    }
    if outer_starts.is_empty() {
        return Err(Error::NoCandidateCube);
    }
    let dim_t = tdims.len();
    let outer_ranges: Vec<(usize, usize)> = vec![(0, outer_starts.len()); dim_t];
    let mut selected: Option<Vec<usize>> = None;
    for_each_cell(&outer_ranges, &mut |outer_idx| {
        let outer_lo: Vec<usize> = outer_idx.iter().map(|&k| outer_starts[k]).collect();
        let inner_ranges: Vec<(usize, usize)> = vec![(0, ell_cells + 1); dim_t];
        let mut found = false;
        for_each_cell(&inner_ranges, &mut |off| {
            let lo_t: Vec<usize> = outer_lo.iter().zip(off).map(|(&o, &f)| o + f).collect();
            if evaluate(&lo_t).is_some() {
                selected = Some(lo_t);
                found = true;
                return false;
            }
            true
        });
        !found
    });
    let Some(lo_t) = selected else {
        return Err(Error::NoCandidateCube);
    };
    // Q_eps as a full-dimensional box in absolute grid coordinates.
    let mut q_lo = vec![0usize; n];
    let mut q_hi = vec![0usize; n];
    let mut ti = 0usize;
    for d in 0..n {
        if d == axis {
            q_lo[d] = cube.lo[d];
            q_hi[d] = cube.hi[d];
        } else {
            q_lo[d] = cube.lo[d] + lo_t[ti];
            q_hi[d] = q_lo[d] + ell_cells;
            ti += 1;
        }
    }
    let q_eps = CellBox { lo: q_lo, hi: q_hi };
    let q_cols = columns_of(&lo_t);

    // Strip selection: lowest-mass strip among (a subsample of) the
    // candidates, ties toward the lowest height.
    let span_lo = slab;
    let span_hi = half - 2.0 * delta_bar;
    if span_hi <= span_lo {
        return Err(Error::EpsilonTooLarge {
            epsilon,
            limit: a_phys * lnorm / (12.0 * m_const),
        });
    }
    let strip_mass = |s0: f64| -> f64 {
        let s1 = s0 + delta_bar;
        let mut mass = 0.0;
        for col in &q_cols {
            let fp = &frames[col];
            for &b in &fp.breakpoints {
                if b > s0 && b < s1 {
                    mass += face;
                }
            }
            for ti in 0..tdims.len() {
                let mut nb = col.clone();
                nb[ti] += 1;
                if !member(&lo_t, &nb) {
                    continue;
                }
                for (t0, t1, _, _) in differ_segments(fp, &frames[&nb], s0, s1) {
                    mass += (t1 - t0) * edge;
                }
            }
        }
        mass
    };
    let evals = k_strips.min(64);
    let mut best_sigma = span_lo;
    let mut best_mass = f64::INFINITY;
    for e in 0..evals {
        let k = e * k_strips / evals;
        let s0 = span_lo + k as f64 * (span_hi - span_lo) / k_strips as f64;
        let mass = strip_mass(s0);
        if mass < best_mass {
            best_mass = mass;
            best_sigma = s0;
        }
    }
    let sigma_plus = best_sigma;

    // Sigma minus: the cell-center height in (-a/2, -slab) crossing the
    // fewest vertical boundary pieces of the sub-cylinder.
    let mut best_sm = None;
    let mut best_cross = usize::MAX;
    for k in 0..a_cells / 2 {
        let t = -half + (k as f64 + 0.5) * h;
        if t >= -slab.max(h * 1e-9) {
            break;
        }
        let mut cross = 0usize;
        for col in &q_cols {
            for ti in 0..tdims.len() {
                let mut nb = col.clone();
                nb[ti] += 1;
                if !member(&lo_t, &nb) {
                    continue;
                }
                if frames[col].label_at(t) != frames[&nb].label_at(t) {
                    cross += 1;
                }
            }
        }
        if cross < best_cross {
            best_cross = cross;
            best_sm = Some(t);
        }
    }
    let Some(sigma_minus) = best_sm else {
        return Err(Error::NoCandidateCube);
    };

    Ok(Selection { q_eps, sigma_minus, sigma_plus, delta_bar, k_strips, ell_cells, ell })
}

// ---------------------------------------------------------------------
// Planning.
// ---------------------------------------------------------------------

struct Prepared {
    point: InterfacePoint,
    m_const: f64,
    c_const: f64,
    omega_hat: f64,
    omega_bar: f64,
    k_required: f64,
    l_scale: f64,
    rho: f64,
    a_cells: usize,
    a_phys: f64,
    eps_max: f64,
    absorbed: Option<(GridCluster, f64)>,
}

fn prepare(
    cluster: &GridCluster,
    field: &DensityField,
    point: InterfacePoint,
    opts: &PlanOptions,
) -> Result<Prepared> {
    let n = cluster.dims();
    let nf = n as f64;
    let h = cluster.spacing;
    let mf = cluster.m as f64;
    let lb = local_bounds(field, &point.point, opts.probes)?;
    let m_const = lb.m;
    let c_const = perimeter_constant(n as u32, m_const);
    let omega_hat = if lb.omega_limit > 1e-12 {
        lb.omega_limit
    } else {
        opts.k_user.powi(n as i32) / c_const.powi(n as i32)
    };
    let l_scale = match opts.scale_hint {
        Some(scale) => {
            let w = modulus_of_continuity(field, &point.point, scale * nf.sqrt() / 2.0, opts.probes)?;
            let w_eff = if w > 1e-12 { w } else { omega_hat };
            w_eff.powf(-1.0 / nf)
        }
        None => omega_hat.powf(-1.0 / nf),
    };
    let rho = (omega_hat.powf(1.0 / nf)
        / (2.0 * 2f64.powi(n as i32 + 3) * m_const * mf * l_scale.powi(n as i32 - 1)))
    .min(1.0 / (10.0 * 2f64.powi(n as i32 + 1) * (mf + 3.0)));

    // Largest admissible cube side: inside the grid, inside B(x, 1),
    // inside the caller's ball, and small enough that the modulus at the
    // cube scale stays below twice the zero-scale value.
    let geo_half = (0..n)
        .map(|d| point.cell_hi[d].min(cluster.shape[d] - point.cell_hi[d]))
        .min()
        .unwrap_or(0);
    let phys_cap = (2.0 / nf.sqrt())
        .min(2.0 * opts.max_radius / nf.sqrt())
        .min(opts.scale_hint.unwrap_or(f64::INFINITY));
    let mut a0 = (2 * geo_half).min((phys_cap / h).floor() as usize);
    a0 -= a0 % 2;
    if a0 < 8 {
        return Err(Error::NoCandidateCube);
    }
    // Shrink by bisection until the modulus condition holds.
    let omega_at = |a_cells: usize| -> Result<f64> {
        modulus_of_continuity(
            field,
            &point.point,
            a_cells as f64 * h * nf.sqrt() / 2.0,
            opts.probes,
        )
    };
    let mut omega_bar = omega_at(a0)?;
    while omega_bar >= 2.0 * omega_hat && a0 >= 16 {
        a0 /= 2;
        a0 -= a0 % 2;
        omega_bar = omega_at(a0)?;
    }
    if omega_bar >= 2.0 * omega_hat {
        return Err(Error::NoCandidateCube);
    }

    // Dyadic flatness search: eight candidates per level, largest first.
    let mut level = a0;
    let mut chosen: Option<usize> = None;
    let mut absorbed = None;
    'levels: while level >= 8 {
        let lo = (level / 2).max(8);
        let step = (((level - lo) / 8).max(2)) & !1usize;
        let mut a_try = level;
        while a_try >= lo {
            let stats = flatness_stats(cluster, &point, a_try, rho, m_const)?;
            if stats.pass {
                let (_, updated) = good_set(cluster, &point, a_try, rho, &stats)?;
                if updated.pass {
                    chosen = Some(a_try);
                    omega_bar = omega_at(a_try)?;
                    break 'levels;
                }
            } else {
                // Degenerate branch: the cube is flat except for foreign
                // boundary mass; absorbing the pocket may already decrease
                // the perimeter.
                let core_ok = stats
                    .violations
                    .iter()
                    .all(|v| v.starts_with("chamber"));
                if core_ok {
                    let cube = working_cube(cluster, &point, a_try)?;
                    if let Some(hit) =
                        absorb_foreign(cluster, field, &cube, point.i, point.j, m_const)?
                    {
                        absorbed = Some(hit);
                        break 'levels;
                    }
                }
            }
            if a_try < lo + step {
                break;
            }
            a_try -= step;
        }
        if level == 8 {
            break;
        }
        level = (level / 2).max(8);
        level -= level % 2;
    }
    if let Some(hit) = absorbed {
        return Ok(Prepared {
            point,
            m_const,
            c_const,
            omega_hat,
            omega_bar,
            k_required: c_const * omega_hat.powf(1.0 / nf),
            l_scale,
            rho,
            a_cells: 0,
            a_phys: 0.0,
            eps_max: 0.0,
            absorbed: Some(hit),
        });
    }
    let Some(a_cells) = chosen else {
        return Err(Error::NoCandidateCube);
    };
    let a_phys = a_cells as f64 * h;
    let eps_ell = (a_phys / (8.0 * l_scale)).powi(n as i32);
    let eps_strip = a_phys * (a_phys / 8.0).powi(n as i32 - 1) / (12.0 * m_const);
    let eps_qual = (a_phys * omega_hat.powf(1.0 / nf)
        / (2f64.powi(n as i32 + 7) * mf * m_const * m_const * rho))
        .powi(n as i32);
    let eps_max = eps_ell.min(eps_strip).min(eps_qual);
    Ok(Prepared {
        point,
        m_const,
        c_const,
        omega_hat,
        omega_bar,
        k_required: c_const * omega_hat.powf(1.0 / nf),
        l_scale,
        rho,
        a_cells,
        a_phys,
        eps_max,
        absorbed: None,
    })
}

/// The largest transferable `|epsilon|` (and the interface point and
/// required perimeter constant) for the given pair, without running the
/// transfer.
pub fn transfer_limit(
    cluster: &GridCluster,
    field: &DensityField,
    i: u8,
    j: u8,
    opts: &PlanOptions,
) -> Result<(InterfacePoint, f64, f64)> {
    let point = find_interface_point(cluster, i, j, opts)?;
    let prep = prepare(cluster, field, point, opts)?;
    Ok((prep.point, prep.eps_max, prep.k_required))
}

/// Build a transfer plan for a signed volume change of chamber `i`
/// against chamber `j`.
pub fn plan_transfer(
    cluster: &GridCluster,
    field: &DensityField,
    i: u8,
    j: u8,
    epsilon: f64,
    opts: &PlanOptions,
) -> Result<PlanOutcome> {
    if !epsilon.is_finite() {
        return Err(Error::InvalidInput("epsilon must be finite".into()));
    }
    let mut point = find_interface_point(cluster, i, j, opts)?;
    // Signed epsilon for the admissible first chamber.
    let eps_oi = if point.swapped { -epsilon } else { epsilon };
    let orientation_flipped = eps_oi < 0.0;
    if orientation_flipped {
        // A negative request is a positive transfer with the roles of the
        // two chambers exchanged; the exterior condition is not rechecked.
        std::mem::swap(&mut point.i, &mut point.j);
        point.frame.flip = !point.frame.flip;
    }
    let eps_w = eps_oi.abs();
    let condition_swapped = point.swapped;
    let prep = prepare(cluster, field, point, opts)?;
    if let Some((out, drop)) = prep.absorbed {
        return Ok(PlanOutcome::PerimeterDecreased { cluster: out, perimeter_drop: drop });
    }
    if eps_w > prep.eps_max {
        return Err(Error::EpsilonTooLarge { epsilon, limit: prep.eps_max });
    }
    let sel = select_subcube_and_strips(
        cluster,
        &prep.point,
        prep.a_cells,
        prep.rho,
        prep.m_const,
        eps_w,
        prep.l_scale,
    )?;
    let cube = working_cube(cluster, &prep.point, prep.a_cells)?;
    Ok(PlanOutcome::Plan(Box::new(SurgeryPlan {
        x_bar: prep.point.point.clone(),
        i: prep.point.i,
        j: prep.point.j,
        condition_swapped,
        orientation_flipped,
        frame: prep.point.frame,
        a: prep.a_phys,
        a_cells: prep.a_cells,
        rho: prep.rho,
        l_scale: prep.l_scale,
        ell: sel.ell,
        ell_cells: sel.ell_cells,
        cube,
        q_eps: sel.q_eps,
        sigma_minus: sel.sigma_minus,
        sigma_plus: sel.sigma_plus,
        delta_bar: sel.delta_bar,
        delta: 0.0,
        k_strips: sel.k_strips,
        epsilon,
        epsilon_working: eps_w,
        epsilon_max: prep.eps_max,
        m_const: prep.m_const,
        c_const: prep.c_const,
        omega_hat: prep.omega_hat,
        omega_bar: prep.omega_bar,
        k_user: opts.k_user,
        k_required: prep.k_required,
        seed: opts.seed,
    })))
}

// ---------------------------------------------------------------------
// Execution.
// ---------------------------------------------------------------------

/// Apply the stretch/translate/squeeze map to one column (frame
/// coordinates). Labels other than the working pair are preserved.
fn transform_profile(
    p: &ColumnProfile,
    wi: u8,
    wj: u8,
    sm: f64,
    sp: f64,
    delta: f64,
    half: f64,
) -> ColumnProfile {
    if delta == 0.0 {
        return p.clone();
    }
    let mut pieces = p.intervals(-half, sm);
    let s = p.label_at(sm);
    for (a, b, l) in p.intervals(sm, sm + delta) {
        let out = if l != wi && l != wj {
            l
        } else if s == wi {
            wi
        } else {
            wj
        };
        pieces.push((a, b, out));
    }
    let lo = sm + delta;
    let hi = sp + delta;
    let mut events = vec![lo, hi];
    for &bp in &p.breakpoints {
        if bp > lo && bp < hi {
            events.push(bp);
        }
        let sh = bp + delta;
        if sh > lo && sh < hi {
            events.push(sh);
        }
    }
    events.sort_by(|a, b| a.partial_cmp(b).unwrap());
    events.dedup_by(|a, b| (*a - *b).abs() < 1e-300);
    for w in events.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        if t1 <= t0 {
            continue;
        }
        let mid = 0.5 * (t0 + t1);
        let lt = p.label_at(mid);
        let out = if lt != wi && lt != wj {
            lt
        } else if p.label_at(mid - delta) == wi {
            wi
        } else {
            wj
        };
        pieces.push((t0, t1, out));
    }
    pieces.extend(p.intervals(sp + delta, half));
    ColumnProfile::from_intervals(p.base.clone(), &pieces)
}

/// Length carried by `label` within `(c0, c1)`.
fn label_length(p: &ColumnProfile, label: u8, c0: f64, c1: f64) -> f64 {
    p.intervals(c0, c1).iter().filter(|s| s.2 == label).map(|s| s.1 - s.0).sum()
}

/// Weighted volume of `label` in one column (axis coordinates), clipped
/// cell by cell with the density at cell centers.
fn column_weighted_volume(
    p_axis: &ColumnProfile,
    label: u8,
    half: f64,
    h: f64,
    f_cells: &[f64],
    col_area: f64,
) -> f64 {
    let mut v = 0.0;
    for (k, fw) in f_cells.iter().enumerate() {
        let c0 = -half + k as f64 * h;
        let c1 = c0 + h;
        let len = label_length(p_axis, label, c0, c1);
        if len > 0.0 {
            v += fw * len * col_area;
        }
    }
    v
}

/// Execute a plan: solve the translation height, rewrite the cylinder and
/// return the transformed cluster with full accounting.
pub fn transfer_volume(
    cluster: &GridCluster,
    field: &DensityField,
    plan: &SurgeryPlan,
) -> Result<TransferOutcome> {
    let n = cluster.dims();
    let ni = n as i32;
    let h = cluster.spacing;
    let axis = plan.frame.axis;
    let flip = plan.frame.flip;
    let half = plan.a / 2.0;
    let (wi, wj) = (plan.i, plan.j);
    let cube = &plan.cube;
    let col_area = h.powi(ni - 1);

    // Sub-cell corrections inside the cube would be silently replaced by
    // the profile rewrite; refuse rather than drift.
    if cluster.ledger.iter().any(|e| {
        (0..n).all(|d| e.cell[d] >= cube.lo[d] && e.cell[d] < cube.hi[d])
    }) {
        return Err(Error::InvalidInput(
            "working cube overlaps existing sub-cell volume corrections".into(),
        ));
    }

    let before = cluster_perimeter(cluster, field)?;

    if plan.epsilon == 0.0 {
        return Ok(TransferOutcome {
            cluster: cluster.clone(),
            plan: plan.clone(),
            before: before.clone(),
            after: before,
            perimeter_delta_exact: 0.0,
            delta: 0.0,
            terms: Vec::new(),
        });
    }

    let sections = vertical_sections(cluster, cube, axis)?;
    let tdims: Vec<usize> = (0..n).filter(|&d| d != axis).collect();
    let in_q = |col_rel: &[usize]| -> bool {
        tdims.iter().zip(col_rel).all(|(&d, &c)| {
            let abs = cube.lo[d] + c;
            abs >= plan.q_eps.lo[d] && abs < plan.q_eps.hi[d]
        })
    };
    let q_cols: Vec<Vec<usize>> =
        sections.keys().filter(|k| in_q(k)).cloned().collect();

    // Per-column density cache at cell centers along the axis.
    let f_cache: BTreeMap<Vec<usize>, Vec<f64>> = {
        let mut map = BTreeMap::new();
        for col in &q_cols {
            let mut cell: Vec<usize> =
                restore_axis(col, axis, 0).iter().zip(&cube.lo).map(|(b, l)| b + l).collect();
            let mut f_cells = Vec::with_capacity(cube.extent(axis));
            for k in cube.lo[axis]..cube.hi[axis] {
                cell[axis] = k;
                f_cells.push(field.f_eval(&cluster.cell_center(&cell))?);
            }
            map.insert(col.clone(), f_cells);
        }
        map
    };

    let frames: BTreeMap<Vec<usize>, ColumnProfile> = q_cols
        .iter()
        .map(|k| (k.clone(), to_frame(&sections[k], flip)))
        .collect();
    let base_volume: f64 = q_cols
        .iter()
        .map(|k| column_weighted_volume(&sections[k], wi, half, h, &f_cache[k], col_area))
        .sum();

    let gain = |delta: f64| -> f64 {
        let mut v = 0.0;
        for col in &q_cols {
            let tf = transform_profile(
                &frames[col],
                wi,
                wj,
                plan.sigma_minus,
                plan.sigma_plus,
                delta,
                half,
            );
            let ax = to_frame(&tf, flip);
            v += column_weighted_volume(&ax, wi, half, h, &f_cache[col], col_area);
        }
        v - base_volume
    };

    // Bisection on the continuous, piecewise-linear volume map.
    let m2 = plan.m_const * plan.m_const;
    let mut lo = plan.delta_bar / (4.0 * m2);
    let mut hi = plan.delta_bar;
    let target = plan.epsilon_working;
    let g_lo = gain(lo);
    let g_hi = gain(hi);
    let tol = 1e-12 * (1.0 + base_volume.abs());
    if g_lo > target + tol || g_hi < target - tol {
        return Err(Error::BisectionBracketFailure {
            lo,
            hi,
            f_lo: g_lo - target,
            f_hi: g_hi - target,
        });
    }
    let mut best = (lo, (g_lo - target).abs());
    if (g_hi - target).abs() < best.1 {
        best = (hi, (g_hi - target).abs());
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let g = gain(mid);
        let r = (g - target).abs();
        if r < best.1 {
            best = (mid, r);
        }
        if g < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let delta = best.0;

    // Final profiles: transformed inside the sub-cylinder, untouched
    // elsewhere.
    let mut final_profiles: BTreeMap<Vec<usize>, ColumnProfile> = BTreeMap::new();
    for (col, profile) in &sections {
        if in_q(col) {
            let tf = transform_profile(
                &frames[col],
                wi,
                wj,
                plan.sigma_minus,
                plan.sigma_plus,
                delta,
                half,
            );
            final_profiles.insert(col.clone(), to_frame(&tf, flip));
        } else {
            final_profiles.insert(col.clone(), profile.clone());
        }
    }
    let out_cluster = rasterize_profiles(&final_profiles, cluster, cube, axis)?;
    let after = cluster_perimeter(&out_cluster, field)?;

    let (perimeter_delta_exact, terms) = perimeter_delta(
        cluster,
        field,
        plan,
        delta,
        &sections,
        &final_profiles,
    )?;

    let mut plan_out = plan.clone();
    plan_out.delta = delta;
    Ok(TransferOutcome {
        cluster: out_cluster,
        plan: plan_out,
        before,
        after,
        perimeter_delta_exact,
        delta,
        terms,
    })
}

/// Plan and execute in one call.
pub fn transfer(
    cluster: &GridCluster,
    field: &DensityField,
    i: u8,
    j: u8,
    epsilon: f64,
    opts: &PlanOptions,
) -> Result<TransferResult> {
    if epsilon == 0.0 {
        let point = find_interface_point(cluster, i, j, opts)?;
        let before = cluster_perimeter(cluster, field)?;
        let plan = SurgeryPlan {
            x_bar: point.point.clone(),
            i: point.i,
            j: point.j,
            condition_swapped: point.swapped,
            orientation_flipped: false,
            frame: point.frame,
            a: 0.0,
            a_cells: 0,
            rho: 0.0,
            l_scale: 0.0,
            ell: 0.0,
            ell_cells: 0,
            cube: CellBox { lo: vec![0; cluster.dims()], hi: vec![1; cluster.dims()] },
            q_eps: CellBox { lo: vec![0; cluster.dims()], hi: vec![1; cluster.dims()] },
            sigma_minus: 0.0,
            sigma_plus: 0.0,
            delta_bar: 0.0,
            delta: 0.0,
            k_strips: 0,
            epsilon: 0.0,
            epsilon_working: 0.0,
            epsilon_max: 0.0,
            m_const: 1.0,
            c_const: perimeter_constant(cluster.dims() as u32, 1.0),
            omega_hat: 0.0,
            omega_bar: 0.0,
            k_user: opts.k_user,
            k_required: 0.0,
            seed: opts.seed,
        };
        return Ok(TransferResult::Transferred(Box::new(TransferOutcome {
            cluster: cluster.clone(),
            plan,
            before: before.clone(),
            after: before,
            perimeter_delta_exact: 0.0,
            delta: 0.0,
            terms: Vec::new(),
        })));
    }
    match plan_transfer(cluster, field, i, j, epsilon, opts)? {
        PlanOutcome::Plan(plan) => Ok(TransferResult::Transferred(Box::new(transfer_volume(
            cluster, field, &plan,
        )?))),
        PlanOutcome::PerimeterDecreased { cluster, perimeter_drop } => {
            Ok(TransferResult::PerimeterDecreased { cluster, perimeter_drop })
        }
    }
}

// ---------------------------------------------------------------------
// Exact perimeter accounting.
// ---------------------------------------------------------------------

struct PieceSums {
    total: f64,
    foreign: f64,
    stretch: f64,
    top: f64,
    interior: f64,
    lateral: f64,
    band_before: f64,
}

impl PieceSums {
    fn zero() -> Self {
        PieceSums {
            total: 0.0,
            foreign: 0.0,
            stretch: 0.0,
            top: 0.0,
            interior: 0.0,
            lateral: 0.0,
            band_before: 0.0,
        }
    }
}

/// Sum the weighted boundary pieces of one profile family over the
/// sub-cylinder and its neighbor ring, bucketed into the Step-style
/// accounting bands.
#[allow(clippy::too_many_arguments)]
fn sum_pieces(
    cluster: &GridCluster,
    field: &DensityField,
    plan: &SurgeryPlan,
    delta: f64,
    profiles: &BTreeMap<Vec<usize>, ColumnProfile>,
    universe: &BTreeSet<Vec<usize>>,
    q_set: &BTreeSet<Vec<usize>>,
) -> Result<PieceSums> {
    let n = cluster.dims();
    let ni = n as i32;
    let h = cluster.spacing;
    let axis = plan.frame.axis;
    let sign = plan.frame.sign();
    let half = plan.a / 2.0;
    let plane = plan.x_bar[axis];
    let cube = &plan.cube;
    let (wi, wj) = (plan.i, plan.j);
    let tdims: Vec<usize> = (0..n).filter(|&d| d != axis).collect();
    let face = h.powi(ni - 1);
    let edge = h.powi(ni - 2);
    let sm = plan.sigma_minus;
    let sp = plan.sigma_plus;
    let mut sums = PieceSums::zero();

    let add = |v: f64, t_frame: f64, foreign: bool, lateral: bool, sums: &mut PieceSums| {
        sums.total += v;
        if lateral {
            sums.lateral += v;
        } else if foreign {
            sums.foreign += v;
        } else if t_frame > sm && t_frame < sm + delta {
            sums.stretch += v;
        } else if t_frame >= sp && t_frame <= sp + delta + plan.delta_bar {
            sums.top += v;
        } else if t_frame >= sm + delta && t_frame < sp {
            sums.interior += v;
        }
        if t_frame > sm && t_frame < sp {
            sums.band_before += v;
        }
    };

    // Horizontal pieces of the sub-cylinder columns.
    for col in q_set {
        let p = &profiles[col];
        let mut cellv: Vec<usize> =
            restore_axis(col, axis, 0).iter().zip(&cube.lo).map(|(b, l)| b + l).collect();
        cellv[axis] = cube.lo[axis];
        let mut loc = cluster.cell_center(&cellv);
        for (k, &b) in p.breakpoints.iter().enumerate() {
            let below = p.labels_between[k];
            let above = p.labels_between[k + 1];
            loc[axis] = plane + b;
            let mut normal = vec![0.0; n];
            normal[axis] = 1.0;
            let w = field.facet_weight(&loc, &normal, below, above)? * face;
            let t_frame = sign * b;
            let foreign = (below != wi && below != wj) || (above != wi && above != wj);
            add(w, t_frame, foreign, false, &mut sums);
        }
    }

    // Vertical pieces between adjacent columns, at least one inside the
    // sub-cylinder.
    for col in universe {
        for (ti, &d) in tdims.iter().enumerate() {
            let mut nb = col.clone();
            nb[ti] += 1;
            if !universe.contains(&nb) {
                continue;
            }
            if !q_set.contains(col) && !q_set.contains(&nb) {
                continue;
            }
            let lateral = q_set.contains(col) != q_set.contains(&nb);
            let (pa, pb) = (&profiles[col], &profiles[&nb]);
            // Shared face location: cell center of the higher column with
            // the transverse coordinate snapped to the face plane.
            let mut cellv: Vec<usize> =
                restore_axis(&nb, axis, 0).iter().zip(&cube.lo).map(|(b, l)| b + l).collect();
            cellv[axis] = cube.lo[axis];
            let mut loc = cluster.cell_center(&cellv);
            loc[d] = cluster.origin[d] + cellv[d] as f64 * h;
            let mut normal = vec![0.0; n];
            normal[d] = 1.0;
            for (t0, t1, l0, l1) in differ_segments(pa, pb, -half, half) {
                let foreign = (l0 != wi && l0 != wj) || (l1 != wi && l1 != wj);
                // Clip by cells so the weight is evaluated at cell-center
                // heights, exactly as the grid facet sweep does.
                let k0 = (((t0 + half) / h).floor().max(0.0)) as usize;
                let k1 = (((t1 + half) / h).ceil() as usize).min(cube.extent(axis));
                for k in k0..k1 {
                    let c0 = -half + k as f64 * h;
                    let c1 = c0 + h;
                    let len = (t1.min(c1) - t0.max(c0)).max(0.0);
                    if len <= 0.0 {
                        continue;
                    }
                    loc[axis] = plane + c0 + 0.5 * h;
                    let w = field.facet_weight(&loc, &normal, l0, l1)? * len * edge;
                    let mid_axis = 0.5 * (t0.max(c0) + t1.min(c1));
                    let t_frame = sign * mid_axis;
                    add(w, t_frame, foreign, lateral, &mut sums);
                }
            }
        }
    }
    Ok(sums)
}

fn perimeter_delta(
    cluster: &GridCluster,
    field: &DensityField,
    plan: &SurgeryPlan,
    delta: f64,
    before: &BTreeMap<Vec<usize>, ColumnProfile>,
    after: &BTreeMap<Vec<usize>, ColumnProfile>,
) -> Result<(f64, Vec<TermReport>)> {
    let n = cluster.dims();
    let ni = n as i32;
    let axis = plan.frame.axis;
    let cube = &plan.cube;
    let tdims: Vec<usize> = (0..n).filter(|&d| d != axis).collect();
    let in_q = |col: &Vec<usize>| -> bool {
        tdims.iter().zip(col).all(|(&d, &c)| {
            let abs = cube.lo[d] + c;
            abs >= plan.q_eps.lo[d] && abs < plan.q_eps.hi[d]
        })
    };
    let q_set: BTreeSet<Vec<usize>> = before.keys().filter(|k| in_q(k)).cloned().collect();
    let mut universe = q_set.clone();
    for col in &q_set {
        for (ti, _) in tdims.iter().enumerate() {
            for step in [-1isize, 1] {
                let v = col[ti] as isize + step;
                if v >= 0 {
                    let mut nb = col.clone();
                    nb[ti] = v as usize;
                    if before.contains_key(&nb) {
                        universe.insert(nb);
                    }
                }
            }
        }
    }
    let b = sum_pieces(cluster, field, plan, delta, before, &universe, &q_set)?;
    let a = sum_pieces(cluster, field, plan, delta, after, &universe, &q_set)?;

    let mf = cluster.m as f64;
    let m = plan.m_const;
    let rho = plan.rho;
    let lnorm = plan.ell.powi(ni - 1);
    let a_phys = plan.a;
    let terms = vec![
        term(
            "foreign boundary in the cylinder",
            a.foreign,
            3.0 * 2f64.powi(ni + 1) * m * mf * rho * lnorm,
        ),
        term(
            "stretched band",
            a.stretch,
            2f64.powi(ni + 4) * mf * m * delta * rho * lnorm / a_phys,
        ),
        term(
            "squeezed strip and seam",
            a.top,
            5.0 * 2f64.powi(ni + 2) * mf * m * rho * lnorm * plan.delta_bar / a_phys
                + 2.0 * m * lnorm * rho,
        ),
        term(
            "translated interior band",
            a.interior,
            b.band_before
                + plan.omega_bar * (1.0 + 5.0 * 2f64.powi(ni + 1) * (mf + 3.0) * rho) * lnorm,
        ),
        term(
            "lateral walls",
            a.lateral - b.lateral,
            m * 2f64.powi(ni + 2) * (n as f64 - 1.0) * plan.ell.powi(ni - 2) * delta,
        ),
    ];
    Ok((a.total - b.total, terms))
}

fn term(name: &str, value: f64, budget: f64) -> TermReport {
    TermReport {
        name: name.into(),
        value,
        budget,
        within_budget: value <= budget + 1e-12 * (1.0 + budget.abs()),
    }
}

/// Check the transfer against the certified perimeter increment
/// `K |epsilon|^{(N-1)/N}` with `K = C omega_hat^{1/N}`.
pub fn verify_transfer_bound(outcome: &TransferOutcome) -> BoundReport {
    let n = outcome.plan.x_bar.len() as f64;
    let eps = outcome.plan.epsilon_working;
    let rhs = outcome.plan.k_required * eps.powf((n - 1.0) / n);
    let lhs = outcome.perimeter_delta_exact;
    BoundReport {
        c_const: outcome.plan.c_const,
        m_const: outcome.plan.m_const,
        omega_hat: outcome.plan.omega_hat,
        k_required: outcome.plan.k_required,
        epsilon: outcome.plan.epsilon,
        lhs,
        rhs,
        ok: lhs <= rhs + 1e-12 * (1.0 + rhs.abs()),
        terms: outcome.terms.clone(),
    }
}

// ---------------------------------------------------------------------
// Chain composition and in-ball adjustment.
// ---------------------------------------------------------------------

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Change the weighted volume of chamber `h` by `epsilon` while leaving
/// every other chamber volume unchanged, by composing pairwise transfers
/// along a shortest interface chain to the exterior inside disjoint
/// balls.
pub fn adjust_single_chamber(
    cluster: &GridCluster,
    field: &DensityField,
    h_chamber: u8,
    epsilon: f64,
    excluded_ball: Option<(Vec<f64>, f64)>,
    opts: &PlanOptions,
) -> Result<(GridCluster, AdjustmentReport)> {
    if h_chamber == 0 || h_chamber > cluster.m {
        return Err(Error::InvalidInput(format!("chamber {h_chamber} out of range")));
    }
    let volumes_before = weighted_volume(cluster, field)?;

    // Interface adjacency with the exterior condition folded in.
    let m = cluster.m;
    let mut area = vec![vec![0.0f64; m as usize + 1]; m as usize + 1];
    for p in 0..=m {
        for q in p + 1..=m {
            let v = explicit_interface_area(cluster, p, q);
            area[p as usize][q as usize] = v;
            area[q as usize][p as usize] = v;
        }
    }
    let usable = |p: u8, q: u8| -> bool {
        area[p as usize][q as usize] > 0.0
            && (p == 0 || q == 0 || area[p as usize][0] == 0.0 || area[q as usize][0] == 0.0)
    };
    // BFS shortest chain h -> 0.
    let mut prev = vec![u8::MAX; m as usize + 1];
    let mut queue = VecDeque::new();
    queue.push_back(h_chamber);
    prev[h_chamber as usize] = h_chamber;
    while let Some(p) = queue.pop_front() {
        if p == 0 {
            break;
        }
        for q in 0..=m {
            if q != p && prev[q as usize] == u8::MAX && usable(p, q) {
                prev[q as usize] = p;
                queue.push_back(q);
            }
        }
    }
    if prev[0] == u8::MAX {
        return Err(Error::DisconnectedChamber(h_chamber));
    }
    let mut chain = vec![0u8];
    while *chain.last().unwrap() != h_chamber {
        chain.push(prev[*chain.last().unwrap() as usize]);
    }
    chain.reverse();

    if epsilon == 0.0 {
        return Ok((
            cluster.clone(),
            AdjustmentReport {
                chain,
                balls: Vec::new(),
                k0_max: 0.0,
                perimeter_delta_exact: 0.0,
                volumes_before: volumes_before.clone(),
                volumes_after: volumes_before,
                epsilon,
                bound: 0.0,
                bound_ok: true,
                plans: Vec::new(),
            },
        ));
    }

    // Choose one flat interface point per consecutive pair, greedily
    // maximizing the clearance to the points already chosen and to the
    // excluded ball.
    let n = cluster.dims();
    let h = cluster.spacing;
    let mut points: Vec<Vec<f64>> = Vec::new();
    for w in chain.windows(2) {
        let cands = interface_candidates(cluster, w[0], w[1]);
        if cands.is_empty() {
            return Err(Error::EmptyInterface { i: w[0], j: w[1] });
        }
        let scored: Vec<(usize, Vec<f64>)> = cands
            .iter()
            .map(|c| (flatness_score(cluster, c, 64), facet_centroid(cluster, c)))
            .collect();
        let best_score = scored.iter().map(|s| s.0).max().unwrap();
        let mut best: Option<(f64, usize, usize)> = None; // (clearance, score, idx)
        for (idx, (score, loc)) in scored.iter().enumerate() {
            if *score < best_score {
                continue;
            }
            let mut clr = f64::INFINITY;
            for p in &points {
                clr = clr.min(dist(loc, p));
            }
            if let Some((c, r)) = &excluded_ball {
                clr = clr.min(dist(loc, c) - r);
            }
            let better = match &best {
                None => true,
                Some((bc, bs, _)) => {
                    clr > *bc + 1e-12 || ((clr - *bc).abs() <= 1e-12 && *score > *bs)
                }
            };
            if better {
                best = Some((clr, *score, idx));
            }
        }
        let (_, _, idx) = best.expect("scored candidates nonempty");
        points.push(scored[idx].1.clone());
    }

    // Clearance radius per point: balls must be pairwise disjoint and
    // avoid the excluded ball.
    let mut radii = Vec::with_capacity(points.len());
    for (k, p) in points.iter().enumerate() {
        let mut r = opts.max_radius;
        for (l, q) in points.iter().enumerate() {
            if l != k {
                r = r.min(dist(p, q) / 2.0);
            }
        }
        if let Some((c, er)) = &excluded_ball {
            r = r.min(dist(p, c) - er);
        }
        if 2.0 * r / (n as f64).sqrt() < 8.0 * h {
            return Err(Error::BallPackingFailure);
        }
        radii.push(r);
    }

    let mut cur = cluster.clone();
    let mut k0_max = 0.0f64;
    let mut total_delta = 0.0;
    let mut balls = Vec::new();
    let mut plans = Vec::new();
    for (k, w) in chain.windows(2).enumerate() {
        let mut o = opts.clone();
        o.anchor = Some((points[k].clone(), h / 4.0));
        o.max_radius = radii[k];
        match transfer(&cur, field, w[0], w[1], epsilon, &o)? {
            TransferResult::Transferred(out) => {
                cur = out.cluster;
                total_delta += out.perimeter_delta_exact;
                k0_max = k0_max.max(out.plan.k_required);
                balls.push((
                    out.plan.x_bar.clone(),
                    out.plan.a * (n as f64).sqrt() / 2.0,
                ));
                plans.push(out.plan);
            }
            TransferResult::PerimeterDecreased { .. } => {
                return Err(Error::InvalidInput(
                    "degenerate absorption triggered inside a chain transfer".into(),
                ));
            }
        }
    }
    let volumes_after = weighted_volume(&cur, field)?;
    let nf = n as f64;
    let bound = m as f64 * k0_max * epsilon.abs().powf((nf - 1.0) / nf);
    let report = AdjustmentReport {
        chain,
        balls,
        k0_max,
        perimeter_delta_exact: total_delta,
        volumes_before,
        volumes_after,
        epsilon,
        bound,
        bound_ok: total_delta <= bound + 1e-12 * (1.0 + bound),
        plans,
    };
    Ok((cur, report))
}

/// Move a flat interface cap between chambers `i` and `j` inside a ball,
/// changing the weighted volume of `i` by `epsilon`. The ball must meet
/// only the two chambers. For `j != 0` the reported increment is the one
/// under the symmetrized weight, which the interior facet rule already
/// realizes.
pub fn adjust_in_ball(
    cluster: &GridCluster,
    field: &DensityField,
    i: u8,
    j: u8,
    ball: (&[f64], f64),
    epsilon: f64,
    opts: &PlanOptions,
) -> Result<(GridCluster, BallAdjustmentReport)> {
    let (center, radius) = ball;
    for cell in cluster.cells() {
        let c = cluster.cell_center(&cell);
        if dist(&c, center) <= radius {
            let l = cluster.label(&cell);
            if l != i && l != j {
                return Err(Error::BallNotBiphase { label: l });
            }
        }
    }
    let mut o = opts.clone();
    o.anchor = Some((center.to_vec(), radius / 2.0));
    o.max_radius = o.max_radius.min(radius / 2.0);
    // Interior pairs only ever pay the half-sum facet rule, so planning
    // under the symmetrized weight keeps the whole pipeline invariant
    // under odd directional components of `g`.
    let work_field =
        if i != 0 && j != 0 { field.symmetrized() } else { field.clone() };
    match transfer(cluster, &work_field, i, j, epsilon, &o)? {
        TransferResult::Transferred(out) => {
            let n = cluster.dims() as u32;
            let beta = beta_exponent(field.alpha, n)?;
            let bound = out.plan.k_required * epsilon.abs().powf(beta);
            let increment = out.perimeter_delta_exact;
            let report = BallAdjustmentReport {
                center: center.to_vec(),
                radius,
                i,
                j,
                epsilon,
                beta,
                perimeter_increment: increment,
                bound,
                bound_ok: increment <= bound + 1e-12 * (1.0 + bound),
                symmetrized: j != 0,
                plan: out.plan.clone(),
            };
            Ok((out.cluster, report))
        }
        TransferResult::PerimeterDecreased { .. } => Err(Error::InvalidInput(
            "degenerate absorption triggered inside an in-ball adjustment".into(),
        )),
    }
}

// ---------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn uniform() -> DensityField {
        DensityField::uniform()
    }

    #[test]
    fn constants_match_closed_forms() {
        assert_eq!(perimeter_constant(2, 1.0), 70.0);
        assert_eq!(perimeter_constant(3, 1.0), 198.0);
        assert!((delta_bar_value(1.0, 1e-4, 0.1, 2) - 2e-3).abs() < 1e-18);
        assert!((min_cube_count(1.0, 1.0 / 16.0, 2) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn interface_point_on_stacked_halves() {
        let c = fixtures::stacked_halves(32, 1.0);
        let p = find_interface_point(&c, 1, 2, &PlanOptions::default()).unwrap();
        // Neither chamber meets explicit exterior cells, so no swap.
        assert!(!p.swapped);
        assert_eq!((p.i, p.j), (1, 2));
        assert_eq!(p.frame.axis, 0);
        assert!(!p.frame.flip);
        assert_eq!(p.point[0], 16.0);
    }

    #[test]
    fn empty_interface_is_reported() {
        let c = fixtures::nested_rings();
        // Chambers 1 and 3 never touch.
        assert!(matches!(
            find_interface_point(&c, 1, 3, &PlanOptions::default()),
            Err(Error::EmptyInterface { i: 1, j: 3 })
        ));
    }

    #[test]
    fn exterior_pair_is_accepted_without_swap() {
        let c = fixtures::band(32, 1.0);
        let p = find_interface_point(&c, 0, 1, &PlanOptions::default()).unwrap();
        assert!(!p.swapped);
        assert_eq!(p.i, 0);
    }

    #[test]
    fn condition_violation_when_both_touch_exterior() {
        // 1 and 2 side by side, both against explicit exterior cells.
        let c = GridCluster::new(
            vec![4, 4],
            1.0,
            vec![0.0, 0.0],
            vec![0, 0, 0, 0, 1, 1, 2, 2, 1, 1, 2, 2, 0, 0, 0, 0],
            2,
        )
        .unwrap();
        assert!(matches!(
            find_interface_point(&c, 1, 2, &PlanOptions::default()),
            Err(Error::ConditionViolated { .. })
        ));
    }

    #[test]
    fn flat_cube_passes_flatness() {
        let c = fixtures::stacked_halves(32, 1.0);
        let p = find_interface_point(&c, 1, 2, &PlanOptions::default()).unwrap();
        let s = flatness_stats(&c, &p, 16, 0.1, 1.0).unwrap();
        assert!(s.pass, "violations: {:?}", s.violations);
        assert_eq!(s.interface_density_i, 1.0);
        assert_eq!(s.interface_density_j, 1.0);
        assert_eq!(s.slab_excess, 0.0);
        assert_eq!(s.misvolume, 0.0);
        let (good, s2) = good_set(&c, &p, 16, 0.1, &s).unwrap();
        assert_eq!(good.len(), 16);
        assert_eq!(s2.good_fraction, 1.0);
    }

    #[test]
    fn bump_contributes_misvolume() {
        let mut c = fixtures::stacked_halves(32, 1.0);
        c.set_label(&[16, 16], 1); // one-cell bump of chamber 1 above the plane
        let p = find_interface_point(&c, 1, 2, &PlanOptions { anchor: Some((vec![16.0, 14.5], 0.3)), ..Default::default() })
            .unwrap();
        let s = flatness_stats(&c, &p, 16, 0.1, 1.0).unwrap();
        assert_eq!(s.misvolume, 1.0);
        // rho^3 a^N = 1e-3 * 256 = 0.256 < 1: fails.
        assert!(!s.pass);
        let s_loose = flatness_stats(&c, &p, 16, 0.3, 1.0).unwrap();
        // 0.027 * 256 = 6.9 > 1: the mismatch alone passes at rho = 0.3.
        assert!(s_loose
            .violations
            .iter()
            .all(|v| !v.contains("mismatch")));
    }

    #[test]
    fn foreign_cell_boundary_is_counted() {
        let mut c = fixtures::stacked_halves(32, 1.0);
        c.m = 3;
        c.set_label(&[18, 16], 3);
        let p = find_interface_point(&c, 1, 2, &PlanOptions { anchor: Some((vec![16.0, 16.5], 0.3)), ..Default::default() })
            .unwrap();
        let s = flatness_stats(&c, &p, 16, 0.1, 1.0).unwrap();
        let f3 = s.foreign_boundary.iter().find(|e| e.0 == 3).unwrap().1;
        assert_eq!(f3, 4.0);
    }

    #[test]
    fn foreign_column_is_excluded_from_good_set() {
        let mut c = fixtures::stacked_halves(32, 1.0);
        c.m = 3;
        c.set_label(&[18, 16], 3);
        let p = find_interface_point(&c, 1, 2, &PlanOptions { anchor: Some((vec![16.0, 16.5], 0.3)), ..Default::default() })
            .unwrap();
        let s = flatness_stats(&c, &p, 16, 0.3, 1.0).unwrap();
        let (good, s2) = good_set(&c, &p, 16, 0.3, &s).unwrap();
        assert_eq!(good.len(), 15);
        assert!((s2.good_fraction - 15.0 / 16.0).abs() < 1e-12);
    }

    #[test]
    fn flat_transfer_matches_the_slab_oracle() {
        let c = fixtures::stacked_halves(64, 1.0 / 64.0);
        let field = uniform();
        let eps = 1e-6;
        let out = match transfer(&c, &field, 1, 2, eps, &PlanOptions::default()).unwrap() {
            TransferResult::Transferred(o) => o,
            _ => panic!("expected a transfer"),
        };
        // Pure translation of a flat interface: delta = eps / ell^{N-1}.
        let oracle = eps / out.plan.ell;
        assert!(
            (out.delta - oracle).abs() < 1e-9 * oracle,
            "delta {} vs {}",
            out.delta,
            oracle
        );
        assert!(out.delta > out.plan.delta_bar / 4.0 && out.delta < out.plan.delta_bar);
        // Exact volumes.
        let vb = weighted_volume(&c, &field).unwrap();
        let va = weighted_volume(&out.cluster, &field).unwrap();
        assert!((va[0] - vb[0] - eps).abs() < 1e-12);
        assert!((va[1] - vb[1] + eps).abs() < 1e-12);
        // Locality.
        let r = out.plan.a * 2f64.sqrt() / 2.0;
        for cell in c.cells() {
            if c.label(&cell) != out.cluster.label(&cell) {
                let d = dist(&c.cell_center(&cell), &out.plan.x_bar);
                assert!(d < r, "changed cell at distance {d} > {r}");
            }
        }
        // Perimeter increment: only the lateral walls, 2 M delta in 2D.
        assert!(out.perimeter_delta_exact > 0.0);
        assert!(out.perimeter_delta_exact <= 2.0 * out.delta + 1e-15);
        let bound = verify_transfer_bound(&out);
        assert!(bound.ok, "lhs {} rhs {}", bound.lhs, bound.rhs);
    }

    #[test]
    fn zero_epsilon_is_identity() {
        let c = fixtures::stacked_halves(32, 1.0);
        let out = match transfer(&c, &uniform(), 1, 2, 0.0, &PlanOptions::default()).unwrap() {
            TransferResult::Transferred(o) => o,
            _ => panic!(),
        };
        assert_eq!(out.cluster.labels, c.labels);
        assert_eq!(out.perimeter_delta_exact, 0.0);
    }

    #[test]
    fn negative_epsilon_equals_swapped_positive() {
        let c = fixtures::stacked_halves(64, 1.0 / 64.0);
        let field = uniform();
        let eps = 5e-7;
        let a = match transfer(&c, &field, 1, 2, -eps, &PlanOptions::default()).unwrap() {
            TransferResult::Transferred(o) => o,
            _ => panic!(),
        };
        let b = match transfer(&c, &field, 2, 1, eps, &PlanOptions::default()).unwrap() {
            TransferResult::Transferred(o) => o,
            _ => panic!(),
        };
        let va = weighted_volume(&a.cluster, &field).unwrap();
        let vb = weighted_volume(&b.cluster, &field).unwrap();
        for (x, y) in va.iter().zip(&vb) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn epsilon_limit_is_enforced() {
        let c = fixtures::stacked_halves(64, 1.0 / 64.0);
        let field = uniform();
        let (_, limit, _) = transfer_limit(&c, &field, 1, 2, &PlanOptions::default()).unwrap();
        assert!(limit > 0.0);
        assert!(matches!(
            transfer(&c, &field, 1, 2, limit * 4.0, &PlanOptions::default()),
            Err(Error::EpsilonTooLarge { .. })
        ));
    }

    #[test]
    fn absorb_foreign_pocket_decreases_perimeter() {
        let mut c = fixtures::stacked_halves(16, 1.0);
        c.m = 3;
        c.set_label(&[8, 8], 3);
        let cube = CellBox { lo: vec![4, 4], hi: vec![12, 12] };
        let (out, drop) = absorb_foreign(&c, &uniform(), &cube, 1, 2, 1.0)
            .unwrap()
            .expect("pocket absorbed");
        assert_eq!(out.label(&[8, 8]), 2);
        assert!((drop - 3.0).abs() < 1e-12, "drop {drop}");
    }

    #[test]
    fn chain_adjustment_on_the_band() {
        let c = fixtures::band(64, 1.0 / 16.0);
        let field = uniform();
        let eps = 1e-6;
        let (out, report) = adjust_single_chamber(&c, &field, 1, eps, None, &PlanOptions::default())
            .unwrap();
        assert_eq!(report.chain, vec![1, 0]);
        assert_eq!(report.balls.len(), 1);
        let vb = weighted_volume(&c, &field).unwrap();
        let va = weighted_volume(&out, &field).unwrap();
        assert!((va[0] - vb[0] - eps).abs() < 1e-12);
        assert!(report.bound_ok);
    }

    #[test]
    fn ball_adjustment_rejects_third_labels() {
        let (c, _) = fixtures::quadrant(64);
        let err = adjust_in_ball(
            &c,
            &uniform(),
            1,
            2,
            (&[32.0, 32.0], 8.0),
            1e-6,
            &PlanOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::BallNotBiphase { label: 3 }));
    }

    #[test]
    fn ball_adjustment_stays_in_the_ball() {
        let (c, (center, radius)) = fixtures::vertical_interface_ball(64);
        let field = uniform();
        let eps = 1e-7;
        let (out, report) =
            adjust_in_ball(&c, &field, 1, 2, (&center, radius), eps, &PlanOptions::default())
                .unwrap();
        assert!(report.bound_ok);
        for cell in c.cells() {
            if c.label(&cell) != out.label(&cell) {
                assert!(dist(&c.cell_center(&cell), &center) <= radius);
            }
        }
        let vb = weighted_volume(&c, &field).unwrap();
        let va = weighted_volume(&out, &field).unwrap();
        assert!((va[0] - vb[0] - eps).abs() < 1e-12);
    }
}
