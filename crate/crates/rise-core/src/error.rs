//! Error type shared by every module in the crate.

use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes of the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A file referenced by a manifest (or the manifest itself) does not exist.
    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    /// An underlying read/write failed.
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// The manifest is structurally invalid.
    #[error("bad manifest: {0}")]
    Manifest(String),

    /// A value in a data file could not be parsed.
    #[error("parse error in {path} line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Row/column counts disagree with the declared shape.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Two sequences that must be aligned have different lengths.
    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    /// A gold label index is out of range or a label name is invalid.
    #[error("bad label: {0}")]
    BadLabel(String),

    /// A split token is not one of train/dev/test.
    #[error("bad split token: {0}")]
    BadSplit(String),

    /// Two examples share the same id.
    #[error("duplicate example id: {0}")]
    DuplicateId(String),

    /// A required split has no examples.
    #[error("empty {0} split")]
    EmptySplit(&'static str),

    /// An operation needs an input collection that is empty.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// A logit vector has fewer than two entries.
    #[error("degenerate vector: need at least 2 entries, got {0}")]
    DegenerateVector(usize),

    /// The dev split contains no misclassified examples, so no threshold
    /// can be estimated; pass an explicit threshold instead.
    #[error("no misclassified examples on the dev split; supply an explicit threshold")]
    NoMisclassifications,

    /// Cross-model hardness was asked for with zero models.
    #[error("empty model set")]
    EmptyModelSet,

    /// Cosine of a zero-norm vector is undefined.
    #[error("zero vector has no direction; cosine undefined")]
    ZeroVector,

    /// The bundle lacks feature vectors required by the operation.
    #[error("missing features: {0}")]
    MissingFeatures(&'static str),

    /// Training produced a non-finite loss.
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    /// A top-k cutoff is outside [1, C].
    #[error("bad k: {0}")]
    BadK(String),

    /// Chance agreement is 1, so Cohen's kappa is undefined.
    #[error("degenerate marginals: chance agreement is 1")]
    DegenerateMarginals,

    /// A rank vector is constant, so the correlation is undefined.
    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    /// A configuration value violates its constraints.
    #[error("bad config: {0}")]
    BadConfig(String),

    /// A cross-file reference (e.g. an example id) could not be resolved.
    #[error("missing entry: {0}")]
    MissingEntry(String),

    /// JSON (de)serialization failed.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
