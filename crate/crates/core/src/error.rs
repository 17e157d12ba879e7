use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("gram matrix of level {level} is not symmetric positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NonSpdGram { level: usize, min_eigenvalue: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("composite map {from}->{to} disagrees with the product of connectors (residual {residual:e})")]
    CompositionViolation { from: usize, to: usize, residual: f64 },

    #[error("level maps do not commute with connectors (residual {residual:e} > {tolerance:e})")]
    DiagramViolation { residual: f64, tolerance: f64 },

    #[error("form on level {level} is singular (smallest weighted singular value {min_singular_value:e})")]
    SingularForm { level: usize, min_singular_value: f64 },

    #[error("levelwise solutions do not form a thread (residual {residual:e} > {tolerance:e})")]
    CompatibilityViolation { residual: f64, tolerance: f64 },

    #[error("form on level {level} is not antisymmetric (residual {residual:e})")]
    NotAntisymmetric { level: usize, residual: f64 },

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("no convergence after {iterations} iterations (last change {last_change:e}, contraction estimate {contraction:.3})")]
    NoConvergence {
        iterations: usize,
        last_change: f64,
        contraction: f64,
    },

    #[error("evaluation failed: {0}")]
    EvaluationFailure(String),

    #[error("sampled norm {observed:e} exceeds bound {bound:e}")]
    BoundViolation { observed: f64, bound: f64 },

    #[error("expression error: {0}")]
    Expression(String),

    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// Wraps a failure raised while evaluating a right-hand side along a trajectory.
    pub(crate) fn during_evaluation(self) -> Self {
        match self {
            e @ Error::EvaluationFailure(_) => e,
            other => Error::EvaluationFailure(other.to_string()),
        }
    }
}
