use std::path::PathBuf;

use thiserror::Error;

use crate::ClassId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid JSON in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("invariant violated ({invariant}) for {subject}: {detail}")]
    Invariant {
        invariant: &'static str,
        subject: String,
        detail: String,
    },

    #[error("class index {index} out of range (class count {class_count})")]
    ClassOutOfRange { index: u32, class_count: u32 },

    #[error("duplicate image id {0:?}")]
    DuplicateImage(String),

    #[error("unknown image id {0:?}")]
    UnknownImage(String),

    #[error("key sets differ: {only_old} id(s) only in old version, {only_new} only in new (first: {first:?})")]
    KeySetMismatch {
        only_old: usize,
        only_new: usize,
        first: String,
    },

    #[error("image {image_id:?}: class {class} already in {existing} set, cannot record as {requested} without override")]
    MergeConflict {
        image_id: String,
        class: ClassId,
        existing: &'static str,
        requested: &'static str,
    },

    #[error("no prediction for image {image_id:?} (model {model_id:?})")]
    MissingPrediction { image_id: String, model_id: String },

    #[error("duplicate prediction for image {image_id:?} (model {model_id:?})")]
    DuplicatePrediction { image_id: String, model_id: String },

    #[error("prediction rows mix models {0:?} and {1:?}")]
    MixedModels(String, String),

    #[error("prediction for {prediction:?} checked against record {record:?}")]
    ImageMismatch { prediction: String, record: String },

    #[error("no single label for image {0:?}")]
    MissingLabel(String),

    #[error("invalid vote: {0}")]
    InvalidVote(String),

    #[error("item ({image_id:?}, {class}) is already finalized")]
    AlreadyFinalized { image_id: String, class: ClassId },

    #[error("invalid decision: {0}")]
    InvalidDecision(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("classes {0} and {1} have no common ancestor")]
    NoCommonAncestor(ClassId, ClassId),

    #[error("class {0} is not mapped to a taxonomy node")]
    UnmappedClass(ClassId),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("image decode failed for {path}: {message}")]
    Decode { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
