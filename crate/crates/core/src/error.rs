use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// Not enough usable data, or a rank-deficient system.
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("malformed layout: {0}")]
    MalformedLayout(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("denoiser error: {0}")]
    Denoiser(String),
    #[error("size guard exceeded: {0}")]
    SizeGuard(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable short code for machine consumers (the CLI prints it verbatim).
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::InvalidCamera(_) => "invalid_camera",
            Error::InvalidConfig(_) => "invalid_config",
            Error::InvalidInput(_) => "invalid_input",
            Error::Degenerate(_) => "degenerate_input",
            Error::MalformedLayout(_) => "malformed_layout",
            Error::Format(_) => "format",
            Error::Denoiser(_) => "denoiser",
            Error::SizeGuard(_) => "size_guard",
            Error::Io(_) => "io",
            Error::Json(_) => "parse",
        }
    }
}
