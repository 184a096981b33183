use thiserror::Error;

/// Errors produced by the attention library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttnError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("precision mismatch: expected {expected}, found {found}")]
    Precision {
        expected: &'static str,
        found: String,
    },

    #[error("dimension product overflows the index space: {0:?}")]
    DimOverflow([usize; 4]),

    #[error("non-finite value at element {index}")]
    NonFinite { index: usize },

    #[error("malformed golden-vector data: {0}")]
    Malformed(String),

    #[error("invalid cu_seqlens: {0}")]
    CuSeqlens(String),

    #[error("unsupported injection config {0} for this operation")]
    Config(&'static str),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("allocation of {bytes} bytes failed")]
    Alloc { bytes: usize },

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for AttnError {
    fn from(err: std::io::Error) -> Self {
        AttnError::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, AttnError>;
