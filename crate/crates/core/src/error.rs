use thiserror::Error;

/// Errors produced by the clustering engine and its I/O layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("axis {axis} is out of range for an order-{order} array")]
    AxisOutOfRange { axis: usize, order: usize },

    #[error("scale matrix for dimension {dim} is not positive definite")]
    NotPositiveDefinite { dim: usize },

    #[error("scale matrix for group {group}, dimension {dim} is not positive definite after regularization")]
    RegularizationFailed { group: usize, dim: usize },

    #[error("singular leading minor of order {order} in triangular solve")]
    SingularMinor { order: usize },

    #[error("need at least {groups} observations, got {observations}")]
    TooFewObservations { observations: usize, groups: usize },

    #[error("component {group} collapsed at iteration {iteration} (n_g = {size:e})")]
    EmptyComponent {
        group: usize,
        iteration: usize,
        size: f64,
    },

    #[error("observation {obs} has zero density under every component")]
    ZeroDensity { obs: usize },

    #[error("non-finite value in observation {obs}")]
    NonFinite { obs: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("every fit in the scan failed")]
    AllFitsFailed,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
