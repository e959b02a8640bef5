use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("number of factors K={k} is outside the supported range 1..={max}")]
    FactorCount { k: u32, max: u32 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid group sizes: {0}")]
    GroupSizes(String),

    #[error("treatment group {group} is empty")]
    EmptyGroup { group: usize },

    #[error("treatment group {group} has {size} unit(s): {reason}")]
    TooFewReplicates {
        group: usize,
        size: usize,
        reason: &'static str,
    },

    #[error("design is not balanced (group sizes {sizes:?}); use the general covariance path")]
    Unbalanced { sizes: Vec<usize> },

    #[error("no residual degrees of freedom: N={n_units} but 2^K={params}")]
    NoResidualDf { n_units: usize, params: usize },

    #[error("variance undefined: need at least 2 units, got {0}")]
    TooFewUnits(usize),

    #[error("unit index {index} out of range for {len} units")]
    UnitIndex { index: usize, len: usize },

    #[error("non-finite value {value} at {location}")]
    NonFinite { value: f64, location: String },

    #[error("refusing to enumerate {count} assignments (limit {limit})")]
    EnumerationTooLarge { count: String, limit: u64 },

    #[error("alpha must lie strictly between 0 and 1, got {0}")]
    Alpha(f64),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn group_sizes(msg: impl Into<String>) -> Self {
        Error::GroupSizes(msg.into())
    }
}
