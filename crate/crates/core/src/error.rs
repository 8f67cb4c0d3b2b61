use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric: max asymmetry {asymmetry:e} exceeds {tolerance:e}")]
    NonSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("eigensolver did not converge: achieved residual {residual:e}")]
    NoConvergence { residual: f64 },

    #[error("matrix is not positive definite: pivot {pivot:e} at row {index}")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("matrix is singular (estimated condition number {condition:e})")]
    Singular { condition: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("ensemble is empty")]
    EmptyEnsemble,

    #[error("ensemble is identically zero")]
    ZeroEnsemble,

    #[error("input is empty")]
    EmptyInput,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("capacitance matrix of sample {sample} is singular (condition estimate {condition:e})")]
    SingularCapacitance { sample: usize, condition: f64 },

    #[error("Neumann series may diverge for sample {sample}: contraction estimate {norm:.6} >= 1")]
    DivergenceRisk { sample: usize, norm: f64 },

    #[error("perturbed system of sample {sample} is singular")]
    SingularSample { sample: usize },

    #[error("invalid mesh size h = {0}")]
    InvalidH(f64),

    #[error("element {0} has zero area")]
    DegenerateElement(usize),

    #[error("dimension {n} exceeds the dense Hessian limit {limit}; use operator products instead")]
    TooLarge { n: usize, limit: usize },

    #[error("line search failed at iteration {iteration} after {trials} trials")]
    LineSearchFailed { iteration: usize, trials: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
