//! Shared error type for the toolkit.
//!
//! Every fallible operation returns [`Result`]. Each variant carries a stable
//! machine-readable code (see [`Error::code`]) so front-ends can report
//! failures on a single parsable line without string-matching messages.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Unified error type for dataset handling, evaluation, and training.
#[derive(Debug, Error)]
pub enum Error {
    /// Vector or matrix dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A clip listed in the manifest has no row in the embedding file.
    #[error("missing embedding for clip '{0}'")]
    MissingEmbedding(String),

    /// An embedding file contains a clip id the manifest does not list.
    #[error("unknown clip id '{0}' in embedding file")]
    UnknownClipId(String),

    /// A clip id was requested that the dataset does not contain.
    #[error("no such clip '{0}'")]
    NoSuchClip(String),

    /// Binary embedding file failed structural validation.
    #[error("malformed embedding file: {0}")]
    MalformedEmbeddingFile(String),

    /// Clip manifest failed structural or semantic validation.
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),

    /// A checkpoint file failed structural validation.
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    /// Cosine similarity is undefined for a zero vector.
    #[error("zero vector has no cosine similarity")]
    ZeroVector,

    /// A gallery or candidate pool was empty.
    #[error("empty gallery: {0}")]
    EmptyGallery(String),

    /// An evaluation was requested over zero items.
    #[error("empty evaluation set: {0}")]
    EmptyEvaluation(String),

    /// Cutoff k exceeds the number of ranked candidates.
    #[error("k = {k} exceeds candidate count {n}")]
    KExceedsGallery { k: usize, n: usize },

    /// A label required by the operation is absent.
    #[error("missing label: {0}")]
    MissingLabel(String),

    /// A configuration value is out of range or inconsistent.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// An input argument violates the operation's contract.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The requested task cannot run on this dataset.
    #[error("task not runnable: {0}")]
    TaskNotRunnable(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable code for this error, used by CLI output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::MissingEmbedding(_) => "missing_embedding",
            Error::UnknownClipId(_) => "unknown_clip_id",
            Error::NoSuchClip(_) => "no_such_clip",
            Error::MalformedEmbeddingFile(_) => "malformed_embedding_file",
            Error::MalformedManifest(_) => "malformed_manifest",
            Error::MalformedCheckpoint(_) => "malformed_checkpoint",
            Error::ZeroVector => "zero_vector",
            Error::EmptyGallery(_) => "empty_gallery",
            Error::EmptyEvaluation(_) => "empty_evaluation",
            Error::KExceedsGallery { .. } => "k_exceeds_gallery",
            Error::MissingLabel(_) => "missing_label",
            Error::InvalidConfig(_) => "invalid_config",
            Error::InvalidInput(_) => "invalid_input",
            Error::TaskNotRunnable(_) => "task_not_runnable",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
