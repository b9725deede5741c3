use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("elevation table is not strictly monotone")]
    NonMonotoneElevations,
    #[error("layer count {0} is not even")]
    OddLayerCount(usize),
    #[error("bad range: {0}")]
    BadRange(String),
    #[error("bad azimuth table: {0}")]
    BadAzimuths(String),
    #[error("geometry has no cells")]
    EmptyGeometry,
    #[error("point {index} lies at the sensor origin")]
    OriginPoint { index: usize },
    #[error("point {index} has non-finite coordinates")]
    NonFinitePoint { index: usize },
    #[error("invalid distance image: {0}")]
    InvalidImage(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("input {h}x{w} is too small (need at least 8x16)")]
    InputTooSmall { h: usize, w: usize },
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("tensor `{name}` does not match the network configuration")]
    ShapeMismatchVsConfig { name: String },

    #[error("valid set is empty")]
    EmptyValidSet,
    #[error("tap {0} out of range (0..=3)")]
    TapOutOfRange(usize),
    #[error("class id {0} is out of range")]
    BadClassId(u8),

    #[error("need at least {needed} rows, got {rows}")]
    TooFewRows { rows: usize, needed: usize },
    #[error("prediction and ground truth share no valid cells")]
    EmptyOverlap,
    #[error("duplicate vote: subject `{subject}`, scene `{scene}`, method `{method}`")]
    DuplicateVote {
        subject: String,
        scene: String,
        method: String,
    },
    #[error("score {0} is outside 1..=5")]
    BadScore(u8),
    #[error("unknown method alias `{0}`")]
    UnknownAlias(String),

    #[error("degenerate primitive: {0}")]
    DegeneratePrimitive(String),
    #[error("malformed file: {0}")]
    MalformedFile(String),
    #[error("training with this loss requires a pre-trained extractor")]
    MissingExtractor,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset carries no usable labels")]
    MissingLabels,

    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable identifier used in machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonMonotoneElevations => "NonMonotoneElevations",
            Error::OddLayerCount(_) => "OddLayerCount",
            Error::BadRange(_) => "BadRange",
            Error::BadAzimuths(_) => "BadAzimuths",
            Error::EmptyGeometry => "EmptyGeometry",
            Error::OriginPoint { .. } => "OriginPoint",
            Error::NonFinitePoint { .. } => "NonFinitePoint",
            Error::InvalidImage(_) => "InvalidImage",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::NonScalarLoss(_) => "NonScalarLoss",
            Error::BadConfig(_) => "BadConfig",
            Error::InputTooSmall { .. } => "InputTooSmall",
            Error::CorruptFile(_) => "CorruptFile",
            Error::ShapeMismatchVsConfig { .. } => "ShapeMismatchVsConfig",
            Error::EmptyValidSet => "EmptyValidSet",
            Error::TapOutOfRange(_) => "TapOutOfRange",
            Error::BadClassId(_) => "BadClassId",
            Error::TooFewRows { .. } => "TooFewRows",
            Error::EmptyOverlap => "EmptyOverlap",
            Error::DuplicateVote { .. } => "DuplicateVote",
            Error::BadScore(_) => "BadScore",
            Error::UnknownAlias(_) => "UnknownAlias",
            Error::DegeneratePrimitive(_) => "DegeneratePrimitive",
            Error::MalformedFile(_) => "MalformedFile",
            Error::MissingExtractor => "MissingExtractor",
            Error::EmptyDataset => "EmptyDataset",
            Error::MissingLabels => "MissingLabels",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::ShapeMismatch(msg.into())
}
