use std::fmt;
use std::path::Path;

pub type CliResult<T> = Result<T, CliError>;

/// A failure reported as `error code=<code> message=<text>` on stderr.
#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new("io", message)
    }

    pub fn parse(path: &Path, e: impl fmt::Display) -> Self {
        Self::new("parse", format!("{}: {e}", path.display()))
    }

    pub fn context(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }

    /// Process exit status; stable per code.
    pub fn exit_code(&self) -> i32 {
        match self.code {
            "usage" => 2,
            "parse" => 3,
            "io" => 4,
            "invalid_input" | "invalid_config" | "invalid_camera" | "dimension_mismatch" | "malformed_layout" => 5,
            "degenerate_input" => 6,
            "denoiser" => 7,
            "format" | "size_guard" => 8,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let one_line = self.message.split_whitespace().collect::<Vec<_>>().join(" ");
        write!(f, "error code={} message={}", self.code, one_line)
    }
}

impl From<worldcache::Error> for CliError {
    fn from(e: worldcache::Error) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::new("parse", e.to_string())
    }
}
