use thiserror::Error;

/// Errors raised by the lattice laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point {0} lies outside the unit interval [0, 1)")]
    Domain(f64),

    #[error("derivative undefined at partition point {0}")]
    Singularity(f64),

    #[error("invalid map definition: {0}")]
    InvalidMap(String),

    #[error("invalid collision scheme: {0}")]
    InvalidScheme(String),

    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("dominant eigenvalue vanished: the hole absorbed all mass")]
    VanishingEigenvalue,

    #[error("hole under-resolved: delta * N = {0} < 4")]
    Resolution(f64),

    #[error("operation requires isolated_neighborhood mode")]
    Mode,

    #[error("insufficient survivors: {survivors} left at step {step}, need {required}")]
    InsufficientSurvivors {
        survivors: usize,
        step: usize,
        required: usize,
    },

    #[error("insufficient hits in the conditioning event: {found} < {required}")]
    InsufficientHits { found: usize, required: usize },

    #[error("every trajectory hit the hole at step 0; check delta")]
    AllHitImmediately,

    #[error("map is not rational affine: {0}")]
    NonRational(String),

    #[error("zero normalizer in extremal-index formula")]
    ZeroNormalizer,

    #[error("formula input inconsistency: {0}")]
    FormulaInput(String),

    #[error("conditioning unavailable: {0}")]
    ConditioningUnavailable(String),

    #[error("horizon of {0} steps exceeds the 1e9 guard")]
    HorizonOverflow(u64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
