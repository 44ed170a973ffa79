use crate::mapmodel::LandmarkId;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("alignment needs at least 2 corresponding landmarks, got {0}")]
    TooFewCorrespondences(usize),

    #[error("duplicate landmark id {0}")]
    DuplicateId(LandmarkId),

    #[error("unknown landmark id {id} in map '{frame}'")]
    UnknownId { id: LandmarkId, frame: String },

    #[error("correspondence is not one-to-one: landmark {0} appears twice")]
    NotOneToOne(LandmarkId),

    #[error("all {0} points are collinear, no triangulation exists")]
    Collinear(usize),

    #[error("landmarks {0} and {1} share the same coordinates")]
    DuplicatePoint(LandmarkId, LandmarkId),

    #[error("triangle ({0}, {1}, {2}) has two edges of equal length")]
    EdgeTie(LandmarkId, LandmarkId, LandmarkId),

    #[error("fusion failed: no consensus ({reason})")]
    NoConsensus { reason: String },

    #[error("map file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FusionError>;
