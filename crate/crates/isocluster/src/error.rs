use thiserror::Error;

/// Errors surfaced by the pipelines. The geometric variants mirror the
/// failure modes of the constructions: they signal that a discrete input
/// does not support the requested operation, not a bug.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no interface facet between chambers {i} and {j}")]
    EmptyInterface { i: u8, j: u8 },

    #[error("chambers {i} and {j} both share boundary with the exterior; neither ordering is admissible")]
    ConditionViolated { i: u8, j: u8 },

    #[error("no sub-cube satisfies the boundary-mass budgets")]
    NoCandidateCube,

    #[error("epsilon {epsilon} too large for this plan (limit {limit})")]
    EpsilonTooLarge { epsilon: f64, limit: f64 },

    #[error("volume solve bracket ({lo}, {hi}) does not straddle the target (residuals {f_lo}, {f_hi})")]
    BisectionBracketFailure { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("chamber {0} is not connected to the exterior in the interface adjacency graph")]
    DisconnectedChamber(u8),

    #[error("cannot place disjoint surgery balls for the transfer chain")]
    BallPackingFailure,

    #[error("ball contains a third chamber (label {label})")]
    BallNotBiphase { label: u8 },

    #[error("no radius passes the density-zero test above the 3-cell resolution floor")]
    NoValidRadius,

    #[error("neither infiltration case inequality holds (gamma1 {gamma1}, gamma2 {gamma2}, d {d})")]
    CasePartitionFailure { gamma1: f64, gamma2: f64, d: f64 },

    #[error("cube exceeds the grid extent")]
    CubeExceedsGrid,

    #[error("profiles do not cover the requested cube")]
    ProfileCubeMismatch,

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
