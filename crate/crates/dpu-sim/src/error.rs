use thiserror::Error;

#[derive(Error, Debug)]
pub enum DpuError {
    /// Mismatched grids, invalid geometry, bad quantizer settings.
    #[error("configuration error: {0}")]
    Config(String),
    /// Caller misuse: empty inputs, wrong sequence lengths, stage ordering.
    #[error("usage error: {0}")]
    Usage(String),
    /// Malformed external files (IDX containers, manifests, frame dirs).
    #[error("format error: {0}")]
    Format(String),
    /// Training loss became non-finite.
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DpuError>;
