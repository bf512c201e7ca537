use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("covariance is not positive definite: eigenvalue {index} = {eigenvalue:e}")]
    CovarianceNotPositiveDefinite { index: usize, eigenvalue: f64 },

    #[error("matrix is not symmetric: |a[{row}][{col}] - a[{col}][{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },

    #[error("matrix is singular")]
    Singular,

    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("road-coordinate singularity: 1 - kappa * e_y = {0:e}")]
    RoadSingularity(f64),

    #[error("slip angle undefined at wheel {wheel}: longitudinal wheel speed is zero")]
    SlipUndefined { wheel: usize },

    #[error("control component {index} = {value} outside its bounds")]
    ControlOutOfBounds { index: usize, value: f64 },

    #[error("steering angle {0} rad is at a tangent singularity")]
    SteeringSingular(f64),

    #[error("trim search did not converge; final residual {residual:e}")]
    TrimNotConverged { residual: f64 },

    #[error("quadratic program is infeasible; certificate row {row}")]
    QpInfeasible { row: usize },

    #[error("quadratic program hit the iteration cap ({iterations})")]
    QpMaxIterations { iterations: usize },

    #[error("piecewise-affine policy has no regions")]
    EmptyPolicy,

    #[error("schema violation at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("{flagged} of {total} samples were frozen by step-size underflow (limit 10%)")]
    TooManyFlagged { flagged: usize, total: usize },

    #[error("time grid mismatch: {0}")]
    GridMismatch(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad input rather than by a numerical failure
    /// during computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::CovarianceNotPositiveDefinite { .. }
                | Error::NotSymmetric { .. }
                | Error::InvalidParameter { .. }
                | Error::EmptyPolicy
                | Error::Schema { .. }
                | Error::GridMismatch(_)
                | Error::Json(_)
        )
    }
}
