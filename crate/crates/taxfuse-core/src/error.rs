//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // Wrapped errors keep their text in the message and deliberately do not
    // expose a `source`; chain-style printers would repeat it otherwise.
    #[error("io error: {0}")]
    Io(std::io::Error),

    #[error("json error: {0}")]
    Json(serde_json::Error),

    #[error("image error: {0}")]
    Image(image::ImageError),

    #[error("png decode error: {0}")]
    PngDecode(String),

    #[error("invalid config: {0}")]
    Config(String),

    /// One or more taxonomy invariants failed; the report lists each one.
    #[error("taxonomy validation failed:\n{0}")]
    Validation(crate::label_space::ValidationReport),

    #[error("unknown class name {name:?} in space {space:?}")]
    UnknownClassName { space: String, name: String },

    #[error("class id {id} out of range for space {space:?}")]
    UnknownClassId { space: String, id: u32 },

    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("embedding contains a non-finite component")]
    NonFinite,

    #[error("cannot normalize a zero-norm embedding")]
    ZeroNorm,

    #[error("text to encode is empty")]
    EmptyText,

    #[error("degenerate box {x0},{y0},{x1},{y1}")]
    DegenerateBox { x0: u32, y0: u32, x1: u32, y1: u32 },

    #[error("box {x0},{y0},{x1},{y1} exceeds image bounds {width}x{height}")]
    BoxOutOfBounds {
        x0: u32,
        y0: u32,
        x1: u32,
        y1: u32,
        width: u32,
        height: u32,
    },

    #[error("run-length data sums to {got}, expected {expected}")]
    RleLengthMismatch { expected: u64, got: u64 },

    #[error("size mismatch: {context} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    SizeMismatch {
        context: String,
        want_w: u32,
        want_h: u32,
        got_w: u32,
        got_h: u32,
    },

    #[error("empty candidate set for region classification")]
    EmptyCandidates,

    #[error("no description set for class {class:?}")]
    MissingContext { class: String },

    #[error("feature bank mismatch: {0}")]
    BankMismatch(String),

    #[error("malformed data file {path:?}: {reason}")]
    MalformedFile { path: String, reason: String },

    #[error("encoder backend {backend:?} failed: {reason}")]
    Backend { backend: String, reason: String },

    #[error("no precomputed feature for box key {key:?}")]
    MissingFeature { key: String },

    #[error("adapter protocol error: {0}")]
    Protocol(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Image(e)
    }
}
