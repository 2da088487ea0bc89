//! Numerical toolbox for isoperimetric m-clusters with a double density.
//!
//! A cluster is a finite family of essentially disjoint chambers
//! `E_1, ..., E_m` in `R^N` (here: labeled cells of an axis-aligned grid,
//! `N = 2` or `3`), with the complement acting as the exterior chamber
//! `E_0`. Volumes are weighted by a positive density `f(x)`, perimeters by
//! a direction-dependent density `g(x, nu)`, and the cluster perimeter is
//! `(sum_i P(E_i) + P(union E_i)) / 2`, which is the right notion when
//! `g(x, -nu) != g(x, nu)`.
//!
//! The crate makes the constructive side of the epsilon-epsilon^beta
//! property executable at desk scale:
//!
//! * [`grid`] — labeled grids, boundary facets with normals, vertical
//!   sections and the exact column-profile model used inside surgery
//!   cylinders;
//! * [`density`] — density families, local bounds `M_x` and moduli of
//!   continuity `omega_x(t)`, and the exponent `beta(alpha, N)`;
//! * [`measures`] — weighted volume vectors and cluster perimeters;
//! * [`surgery`] — pairwise volume transfer at a two-chamber interface
//!   (stretch/translate/squeeze in a thin cylinder), its composition into
//!   single-chamber adjustments, and two-phase in-ball adjustments;
//! * [`infiltration`] — density-zero radius search and absorption of
//!   foreign material near a two-chamber interface, with a strict
//!   perimeter decrease;
//! * [`analysis`] — derived-constant calculators, `C_per[t]` sweeps and
//!   the truncation-based boundedness check;
//! * [`io`] — PGM and raw+JSON grid formats, JSON density configs;
//! * [`cli`] — the batch front end behind the `isocluster` binary.
//!
//! See the `examples/` directory for one runnable example per capability.

pub mod analysis;
pub mod cli;
pub mod density;
mod error;
pub mod expr;
pub mod fixtures;
pub mod grid;
pub mod infiltration;
pub mod io;
pub mod measures;
pub mod surgery;

pub use error::Error;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
