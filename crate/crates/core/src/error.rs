use std::path::PathBuf;

/// Errors raised by ingestion, evaluation, calibration and estimation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema violation in `{field}`: {message}")]
    Schema { field: String, message: String },

    #[error("{path}:{line}: malformed record: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: {source}")]
    AtLine {
        path: PathBuf,
        line: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    Dimension {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("inconsistent values: {0}")]
    Consistency(String),

    #[error("degenerate lane: {0}")]
    DegenerateLane(String),

    #[error("ground truth required: {0}")]
    MissingGroundTruth(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("no predicted lanes in {0}")]
    NoPredictedLanes(String),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("eigen iteration did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    NonConvergence { sweeps: usize, off_norm: f64 },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),

    #[error("expected a {expected} artifact, got {actual}")]
    WrongArtifact { expected: String, actual: String },

    #[error("artifact fingerprint {artifact} does not match manifest fingerprint {manifest}")]
    FingerprintMismatch { artifact: String, manifest: String },

    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersion { expected: u32, found: u32 },

    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn dimension(what: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            what: what.into(),
            expected,
            actual,
        }
    }
}

impl Error {
    /// The underlying error when wrapped with a record location.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtLine { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
