//! Error type shared by every pipeline stage.
//!
//! Each variant maps to a stable machine-readable code (see [`Error::code`])
//! which the command-line front end prints on failure.

use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("text contains reserved marker word `{marker}`")]
    ReservedMarkerPresent { marker: String },
    #[error("record `{id}` has no documentation")]
    MissingDoc { id: String },
    #[error("corpus combination requires missing source `{0}`")]
    MissingSource(String),
    #[error("corpus is empty or target size {target} is below the minimum {minimum}")]
    CorpusEmpty { target: usize, minimum: usize },
    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: u32, size: usize },
    #[error("input already contains sentinel id {0}")]
    SentinelInInput(u32),
    #[error("malformed denoising example: {0}")]
    MalformedExample(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no position contributes to the loss")]
    AllMasked,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("loss diverged at step {step}")]
    Diverged { step: usize },
    #[error("mixture is empty or has a task with zero examples: {0}")]
    EmptyMixture(String),
    #[error("checkpoint version `{found}` is not supported (expected `{expected}`)")]
    VersionMismatch { found: String, expected: String },
    #[error("vocabulary fingerprint mismatch: checkpoint {found}, vocabulary {expected}")]
    VocabMismatch { found: String, expected: String },
    #[error("input of length {len} exceeds model maximum {max}")]
    InputTooLong { len: usize, max: usize },
    #[error("lex error at byte {pos}: unexpected character {ch:?}")]
    Lex { pos: usize, ch: char },
    #[error("parse error at token {pos}: {message}")]
    Parse { pos: usize, message: String },
    #[error("length mismatch: {candidates} candidates vs {references} references")]
    LengthMismatch { candidates: usize, references: usize },
    #[error("no items to evaluate")]
    Empty,
    #[error("invalid metric weights: {0}")]
    InvalidWeights(String),
    #[error("label {0} is not 0 or 1")]
    BadLabel(i64),
    #[error("gradient check failed: max relative error {max_relative_error:e} >= {tolerance:e}")]
    GradCheckFailed { max_relative_error: f64, tolerance: f64 },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Stable upper-case code for machine-readable error reporting.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "IO_FAILURE",
            Error::Format(_) => "FORMAT_ERROR",
            Error::ReservedMarkerPresent { .. } => "RESERVED_MARKER_PRESENT",
            Error::MissingDoc { .. } => "MISSING_DOC",
            Error::MissingSource(_) => "MISSING_SOURCE",
            Error::CorpusEmpty { .. } => "CORPUS_EMPTY",
            Error::IdOutOfRange { .. } => "ID_OUT_OF_RANGE",
            Error::SentinelInInput(_) => "SENTINEL_IN_INPUT",
            Error::MalformedExample(_) => "MALFORMED_EXAMPLE",
            Error::ShapeMismatch(_) => "SHAPE_MISMATCH",
            Error::AllMasked => "ALL_MASKED",
            Error::InvalidConfig(_) => "INVALID_CONFIG",
            Error::Diverged { .. } => "DIVERGED",
            Error::EmptyMixture(_) => "EMPTY_MIXTURE",
            Error::VersionMismatch { .. } => "VERSION_MISMATCH",
            Error::VocabMismatch { .. } => "VOCAB_MISMATCH",
            Error::InputTooLong { .. } => "INPUT_TOO_LONG",
            Error::Lex { .. } => "LEX_ERROR",
            Error::Parse { .. } => "PARSE_ERROR",
            Error::LengthMismatch { .. } => "LENGTH_MISMATCH",
            Error::Empty => "EMPTY",
            Error::InvalidWeights(_) => "INVALID_WEIGHTS",
            Error::BadLabel(_) => "BAD_LABEL",
            Error::GradCheckFailed { .. } => "GRAD_CHECK_FAILED",
        }
    }
}
