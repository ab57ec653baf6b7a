use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate edge {edge}: consecutive nodes coincide")]
    DegenerateEdge { edge: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("antipodal tangents at node {node}: curvature binormal is singular")]
    AntipodalTangents { node: usize },

    #[error("segment layout does not match rod: {0}")]
    LayoutMismatch(String),

    #[error("newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NewtonDivergence { iterations: usize, residual: f64 },

    #[error("target ({x}, {y}, {z}) is outside the two-arc workspace")]
    Unreachable { x: f64, y: f64, z: f64 },

    #[error("inverse kinematics failed to converge (residual {residual:e} m)")]
    IkDivergence { residual: f64 },

    #[error("at least {needed} samples are required, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("PCC inertia matrix is not positive definite")]
    SingularInertia,

    #[error("actuation scaling matrix is singular")]
    SingularLambda,

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid value at `{key}`: {message}")]
    Validation { key: String, message: String },

    #[error("unknown generator `{0}`")]
    UnknownGenerator(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse classification used by the command-line exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::NewtonDivergence { .. }
            | Error::IkDivergence { .. }
            | Error::AntipodalTangents { .. }
            | Error::SingularInertia
            | Error::SingularLambda => ErrorKind::Numerical,
            Error::Io(_) => ErrorKind::Io,
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn validation(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            key: key.into(),
            message: message.into(),
        }
    }
}
