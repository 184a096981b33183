use masked3d::AttnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("tolerance breach: {0}")]
    Tolerance(String),
    #[error("golden case {case}: {detail}")]
    Mismatch { case: String, detail: String },
    #[error("golden file {path}: {source}")]
    GoldenFile { path: String, source: AttnError },
    #[error(transparent)]
    Attn(#[from] AttnError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

impl BenchError {
    /// Process exit code: 2 for usage errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;
