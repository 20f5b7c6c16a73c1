use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed annotation: {0}")]
    MalformedAnnotation(String),
    #[error("unknown class label {0:?}")]
    UnknownClass(String),
    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(String),
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("missing image dimensions")]
    MissingDimensions,
    #[error("zero-width component")]
    ZeroWidthComponent,
    #[error("no measurable leaf in image {0}")]
    NoMeasurableLeaf(String),
    #[error("duplicate image id {0}")]
    DuplicateId(String),
    #[error("invalid width {value} for image {id}")]
    InvalidWidth { id: String, value: f64 },
    #[error("missing prediction for image {0}")]
    MissingPrediction(String),
    #[error("zero ground-truth width for image {0}")]
    ZeroGroundTruth(String),
    #[error("width unavailable for image {0}")]
    WidthUnavailable(String),
    #[error("empty input")]
    EmptyInput,
    #[error("too few samples: need at least {need}, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("class {class} has {got} items, at least {need} required")]
    ClassTooSmall { class: String, got: usize, need: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown tile reference {0}")]
    UnknownTile(String),
    #[error("unknown source image {0}")]
    UnknownImage(String),
    #[error("no class has ground truth")]
    NoGroundTruth,
    #[error("{path}: raster is {actual_w}x{actual_h}, annotation says {expected_w}x{expected_h}")]
    ImageSizeMismatch {
        path: PathBuf,
        expected_w: u32,
        expected_h: u32,
        actual_w: u32,
        actual_h: u32,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when the error signals a bug in the toolkit rather than bad input.
    pub fn is_internal(&self) -> bool {
        matches!(self, Error::Invariant(_))
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
