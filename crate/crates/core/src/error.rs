use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("I/O failure on {}: {source}", path.display())]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest {}: {reason}", path.display())]
    BadManifest { path: PathBuf, reason: String },

    #[error("shape mismatch for `{what}`: expected {expected}, found {found}")]
    ShapeMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite entry in `{layer_id}` at flat index {index}")]
    NonFiniteEntry { layer_id: String, index: usize },

    #[error("invalid layer id `{0}`")]
    InvalidLayerId(String),

    #[error("bad IDX magic 0x{found:08x} (expected 0x{expected:08x})")]
    BadMagic { expected: u32, found: u32 },

    #[error("truncated IDX file {}: need {needed} bytes, have {available}", path.display())]
    TruncatedFile {
        path: PathBuf,
        needed: usize,
        available: usize,
    },

    #[error("class {class} has {available} samples, {requested} requested")]
    InsufficientClassSamples {
        class: usize,
        available: usize,
        requested: usize,
    },

    #[error("rescale factor must be finite and > 0, got {0}")]
    NonPositiveFactor(f64),

    #[error("degenerate matrix `{0}`: every eigenvalue is below the rank cutoff")]
    DegenerateMatrix(String),

    #[error("requested {k} items but only {available} are available")]
    KTooLarge { k: usize, available: usize },

    #[error("bad parameters: {0}")]
    BadParams(String),

    #[error("need at least {needed} eigenvalues, have {available}")]
    TooFewEigenvalues { needed: usize, available: usize },

    #[error("empty sample")]
    EmptySample,

    #[error("empty power-law tail")]
    EmptyTail,

    #[error("xmin must be > 0, got {0}")]
    ZeroXmin(f64),

    #[error("degenerate tail: all values equal xmin")]
    DegenerateTail,

    #[error("loss diverged (non-finite) at step {step}")]
    DivergedLoss { step: u64 },

    #[error("token {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },

    #[error("degenerate probability: non-finite logits")]
    DegenerateProbability,

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("missing accuracy at step {step}")]
    MissingAccuracy { step: u64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::IoFailure { path, source }
        }
    }

    /// True for errors caused by bad or missing inputs rather than numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::MissingFile(_)
                | Error::BadManifest { .. }
                | Error::ShapeMismatch { .. }
                | Error::NonFiniteEntry { .. }
                | Error::InvalidLayerId(_)
                | Error::BadMagic { .. }
                | Error::TruncatedFile { .. }
                | Error::InsufficientClassSamples { .. }
                | Error::NonPositiveFactor(_)
                | Error::KTooLarge { .. }
                | Error::BadParams(_)
                | Error::TokenOutOfRange { .. }
                | Error::ArchitectureMismatch(_)
                | Error::DimensionMismatch { .. }
                | Error::MissingAccuracy { .. }
        )
    }
}
