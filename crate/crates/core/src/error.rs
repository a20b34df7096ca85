use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("projective denominator {denominator:e} too close to zero")]
    DegenerateProjection { denominator: f64 },
    #[error("insufficient points: need {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("no consensus: best model had {inliers} inliers")]
    NoConsensus { inliers: usize },
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),
    #[error("point ({x}, {y}) outside the mesh")]
    OutOfBounds { x: f64, y: f64 },
    #[error("too few features: found {found}, need at least {needed}")]
    TooFewFeatures { found: usize, needed: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("frame index mismatch: keypoints for {keypoints}, flow for {flow}")]
    IndexMismatch { keypoints: usize, flow: usize },
    #[error("too few points for clustering: got {got}, need {needed}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("objective became non-finite")]
    NonFiniteObjective,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad kernel file: {0}")]
    BadKernelFile(String),
    #[error("bad flow file: {0}")]
    BadFlowFile(String),
    #[error("no centered crop of at least 10% of the frame is valid in every frame")]
    MinimalCrop,
    #[error("sequence too short: {got} frames, need {needed}")]
    TooShort { needed: usize, got: usize },
    #[error("bad base image {path:?}: {reason}")]
    BadBaseImage { path: PathBuf, reason: String },
    #[error("config: {0}")]
    Config(String),
    #[error("frame {index}: {source}")]
    Frame {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("{path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image {path:?}: {reason}")]
    Image { path: PathBuf, reason: String },
}

impl Error {
    /// Tags an error with the frame (or frame pair) it came from.
    pub fn at_frame(self, index: usize) -> Self {
        match self {
            e @ Error::Frame { .. } => e,
            e => Error::Frame {
                index,
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
