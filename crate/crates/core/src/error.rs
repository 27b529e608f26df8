use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed JSON at line {line}, column {column}: {message}")]
    MalformedJson {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("schema violation: {0}")]
    SchemaViolation(String),

    #[error("invariant violation in {context}: {message}")]
    InvariantViolation { context: String, message: String },

    #[error("{weights} model weights given for {models} prediction sets")]
    WeightLengthMismatch { weights: usize, models: usize },

    #[error("no prediction sets to fuse")]
    EmptyModelList,

    #[error("cannot fuse an empty cluster")]
    EmptyCluster,

    #[error("average precision is undefined without ground-truth instances")]
    ZeroGroundTruth,

    #[error("label id {label_id} is not in the label space ({count} labels)")]
    UnknownLabel { label_id: usize, count: usize },

    #[error("detection for video {0:?} which is absent from the ground truth")]
    UnknownVideo(String),

    #[error("override {source_label:?} -> {target:?}: target label does not exist")]
    BadOverrideTarget {
        source_label: String,
        target: String,
    },

    #[error("video id {0:?} already exists in the primary dataset")]
    VideoIdCollision(String),

    #[error("infeasible configuration: {0}")]
    InfeasibleConfig(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub(crate) fn invariant(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvariantViolation {
            context: context.into(),
            message: message.into(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        use serde_json::error::Category;
        match err.classify() {
            Category::Data => Error::SchemaViolation(err.to_string()),
            Category::Syntax | Category::Eof | Category::Io => Error::MalformedJson {
                line: err.line(),
                column: err.column(),
                message: err.to_string(),
            },
        }
    }
}
