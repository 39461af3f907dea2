use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate quaternion")]
    DegenerateQuaternion,

    #[error("nonempty scene required")]
    EmptyScene,

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("PLY parse error at byte {offset}: {message}")]
    Ply { offset: usize, message: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not symmetric positive definite")]
    NotSpd,

    #[error("k = {k} exceeds the number of candidate points ({n})")]
    KnnTooLarge { k: usize, n: usize },

    #[error(
        "only {occupied} occupied voxels for {requested} requested anchors; request fewer anchors or a finer grid"
    )]
    TooFewVoxels { occupied: usize, requested: usize },

    #[error("at least 4 anchors are required, got {0}")]
    TooFewAnchors(usize),

    #[error("antipodal anchor rotations (blended quaternion norm {0:e})")]
    AntipodalRotations(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{stage} stage failed at iteration {iteration}: {source}")]
    Stage {
        stage: &'static str,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str, iteration: usize) -> Self {
        Error::Stage {
            stage,
            iteration,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
