use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {value}")]
    InvalidParameter { name: &'static str, value: String },

    #[error("all log-weights are -inf{}", .index.map(|i| format!(" (data point {i})")).unwrap_or_default())]
    DegenerateWeights { index: Option<usize> },

    #[error("factorization of {what} failed: {detail}")]
    Factorization { what: &'static str, detail: String },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("singular bandwidth matrix: {0}")]
    SingularBandwidth(String),

    #[error("degenerate ensemble: {0}")]
    DegenerateEnsemble(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("sweep {sweep} of chain {chain}: {source}")]
    Chain {
        chain: usize,
        sweep: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{failed} of {total} fits failed")]
    TooManyFailures { failed: usize, total: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(name: &'static str, value: impl std::fmt::Display) -> Self {
        Error::InvalidParameter {
            name,
            value: value.to_string(),
        }
    }

    /// True for failures of the numerical machinery rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Factorization { .. }
            | Error::DegenerateWeights { .. }
            | Error::SingularBandwidth(_)
            | Error::TooManyFailures { .. } => true,
            Error::Chain { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
