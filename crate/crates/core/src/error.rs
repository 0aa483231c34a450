use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An outcome object violates the invariants of its type.
    #[error("invalid object: {0}")]
    InvalidObject(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Singular designs, failed decompositions, degenerate spectra.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Kernel or covariate weights summed to zero at a query point.
    #[error("zero effective weight: {0}")]
    ZeroWeight(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    /// Nuisance fitting failed inside one cross-fitting fold.
    #[error("fold {fold}: {source}")]
    Fold { fold: usize, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::InvalidObject(_)
            | Error::DimensionMismatch(_)
            | Error::Data(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => 3,
            Error::Numerical(_) | Error::ZeroWeight(_) => 4,
            Error::Fold { source, .. } => source.exit_code(),
        }
    }

    /// Short machine-readable category name.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidObject(_) => "invalid_object",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Numerical(_) => "numerical",
            Error::ZeroWeight(_) => "zero_weight",
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::Fold { .. } => "fold",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
