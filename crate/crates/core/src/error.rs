use thiserror::Error;

/// Errors produced by the selection-model library.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A normalizing constant or truncation mass is numerically zero.
    #[error("singular region: {0}")]
    SingularRegion(String),

    /// Weights cannot be normalized (for example a zero reference weight).
    #[error("non-normalizable weights: {0}")]
    NonNormalizable(String),

    /// A rejection loop exceeded its attempt cap.
    #[error("pathological selection: no acceptance after {attempts} attempts")]
    PathologicalSelection { attempts: u64 },

    /// The sampler rejected every proposal during a warmup window.
    #[error("adaptation failure in chain {chain}: {message}")]
    AdaptationFailure { chain: usize, message: String },

    /// Malformed input rows, reported by 1-based line number.
    #[error("parse error: {}", format_lines(.0))]
    Parse(Vec<(usize, String)>),

    #[error("io error: {0}")]
    Io(String),
}

fn format_lines(lines: &[(usize, String)]) -> String {
    lines
        .iter()
        .map(|(line, msg)| format!("line {line}: {msg}"))
        .collect::<Vec<_>>()
        .join("; ")
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
