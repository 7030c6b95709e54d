use thiserror::Error;

pub type Result<T, E = TomoError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TomoError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what} length mismatch: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("protocol fingerprint mismatch: protocol {protocol}, counts record {counts}")]
    FingerprintMismatch { protocol: String, counts: String },

    #[error(
        "protocol is informationally incomplete for this state: \
         {deficient} of {required} informative directions carry no information"
    )]
    InformationallyIncomplete { deficient: usize, required: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TomoError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        TomoError::InvalidArgument(msg.into())
    }

    /// True for errors caused by bad input rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            TomoError::Numerical(_) | TomoError::InformationallyIncomplete { .. }
        )
    }
}
