use thiserror::Error;

/// Errors raised by the synthesis, certification and simulation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite entry in {0}")]
    NonFiniteInput(&'static str),

    #[error("matrix is not symmetric (asymmetry {asymmetry:e})")]
    NonSymmetricInput { asymmetry: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("no stabilizing Riccati solution: {0}")]
    NoStabilizingSolution(String),

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("elasticity dominance violated: c1 + c2 = {sum} > sqrt(2)")]
    ElasticityDominanceViolated { sum: f64 },

    #[error("gamma {gamma} too small for mode {n}: residue denominator is {denominator:e}")]
    GammaTooSmallForMode { n: usize, gamma: f64, denominator: f64 },

    #[error("alpha {alpha:e} exceeds the feasible maximum {max:e} for mode {n}")]
    InfeasibleAlpha { n: usize, alpha: f64, max: f64 },

    #[error("gamma {gamma} too small for the residue bound (binding mode {n})")]
    GammaTooSmallForResidue { n: usize, gamma: f64 },

    #[error("residue certificate infeasible at gamma {gamma} (binding mode {n})")]
    ResidueInfeasible { n: usize, gamma: f64 },

    #[error("Riccati solution is not positive definite (min eigenvalue {min_eigenvalue:e})")]
    PNotPositiveDefinite { min_eigenvalue: f64 },

    #[error("no feasible gamma found below {limit:e}")]
    BracketingFailed { limit: f64 },

    #[error("state became non-finite at t = {time}")]
    NonFiniteState { time: f64 },

    #[error("eigenvalue iteration did not converge")]
    NoConvergence,
}

impl Error {
    /// True for errors that mean "this gamma / design is not achievable",
    /// as opposed to bad input or a numerical breakdown.
    pub fn is_infeasibility(&self) -> bool {
        matches!(
            self,
            Error::NoStabilizingSolution(_)
                | Error::GammaTooSmallForMode { .. }
                | Error::InfeasibleAlpha { .. }
                | Error::GammaTooSmallForResidue { .. }
                | Error::ResidueInfeasible { .. }
                | Error::PNotPositiveDefinite { .. }
                | Error::BracketingFailed { .. }
        )
    }

    /// Stable identifier used in CLI messages.
    pub fn name(&self) -> &'static str {
        match self {
            Error::NonFiniteInput(_) => "NonFiniteInput",
            Error::NonSymmetricInput { .. } => "NonSymmetricInput",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::NoStabilizingSolution(_) => "NoStabilizingSolution",
            Error::InvalidParameter { .. } => "InvalidParameter",
            Error::ElasticityDominanceViolated { .. } => "ElasticityDominanceViolated",
            Error::GammaTooSmallForMode { .. } => "GammaTooSmallForMode",
            Error::InfeasibleAlpha { .. } => "InfeasibleAlpha",
            Error::GammaTooSmallForResidue { .. } => "GammaTooSmallForResidue",
            Error::ResidueInfeasible { .. } => "ResidueInfeasible",
            Error::PNotPositiveDefinite { .. } => "PNotPositiveDefinite",
            Error::BracketingFailed { .. } => "BracketingFailed",
            Error::NonFiniteState { .. } => "NonFiniteState",
            Error::NoConvergence => "NoConvergence",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
