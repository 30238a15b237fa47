use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    // --- ingestion ---
    #[error("invalid record S{subject:03}R{run:02}: {reason}")]
    InvalidRecord { subject: u32, run: u32, reason: String },
    #[error("fetch failed for {url}: {reason}")]
    Fetch { url: String, reason: String },
    #[error("corrupt download {path}: expected sha256 {expected}, got {actual}")]
    CorruptDownload {
        path: PathBuf,
        expected: String,
        actual: String,
    },
    #[error("truncated EDF at byte offset {offset}: {reason}")]
    Truncated { offset: usize, reason: String },
    #[error("malformed EDF header: {0}")]
    MalformedHeader(String),
    #[error("unsupported EDF layout: {0}")]
    UnsupportedLayout(String),
    #[error("malformed annotation list in data record {record}: {reason}")]
    Annotation { record: usize, reason: String },
    #[error("recording S{subject:03}R{run:02} carries no annotation events")]
    NoEvents { subject: u32, run: u32 },
    #[error("subject {0} listed more than once")]
    DuplicateSubject(u32),
    #[error("dataset is empty: {0}")]
    EmptyDataset(String),
    #[error("bad epoch container: {0}")]
    Container(String),

    // --- numerics ---
    #[error("filter design error: {0}")]
    Design(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("layer {index} ({kind}): {source}")]
    Layer {
        index: usize,
        kind: &'static str,
        #[source]
        source: Box<Error>,
    },
    /// `at` is `"batch N"` or `"validation"`.
    #[error("training diverged at epoch {epoch}, {at}: loss = {loss}")]
    Divergence { epoch: usize, at: String, loss: f64 },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_layer(self, index: usize, kind: &'static str) -> Self {
        Error::Layer {
            index,
            kind,
            source: Box::new(self),
        }
    }

    /// Strips `Layer` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Layer { source, .. } => source.root(),
            other => other,
        }
    }
}
