use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate correspondences: {0}")]
    DegenerateCorrespondences(String),
    #[error("point maps to the line at infinity")]
    CornerAtInfinity,
    #[error("singular matrix")]
    SingularMatrix,
    #[error("singular TPS system (control sites are collinear or repeated)")]
    SingularSystem,
    #[error("insufficient texture: {found} matched cells, need at least {required}")]
    InsufficientTexture { found: usize, required: usize },
    #[error("no consensus: {inliers} inliers, need at least {required}")]
    NoConsensus { inliers: usize, required: usize },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("sliding window needs {needed} frames of history, have {available}")]
    MissingHistory { needed: usize, available: usize },
    #[error("folded mesh: quad {quad} has a triangle with non-positive area")]
    FoldedMesh { quad: usize },
    #[error("empty overlap")]
    EmptyOverlap,
    #[error("frame count mismatch: {reference} reference frames vs {target} target frames")]
    CountMismatch { reference: usize, target: usize },
    #[error("frame size mismatch at {path}: expected {expected:?}, found {found:?}")]
    SizeMismatch {
        path: PathBuf,
        expected: (u32, u32),
        found: (u32, u32),
    },
    #[error("failed to decode {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("frame {frame}: {source}")]
    AtFrame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn at_frame(self, frame: usize) -> Self {
        match self {
            e @ Error::AtFrame { .. } => e,
            e => Error::AtFrame {
                frame,
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, skipping frame-index wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtFrame { source, .. } => source.root(),
            e => e,
        }
    }

    /// True for errors raised by the motion estimators.
    pub fn is_estimation_failure(&self) -> bool {
        matches!(
            self.root(),
            Error::InsufficientTexture { .. }
                | Error::NoConsensus { .. }
                | Error::DegenerateCorrespondences(_)
                | Error::CornerAtInfinity
                | Error::SingularMatrix
                | Error::SingularSystem
        )
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        if self.is_estimation_failure() {
            3
        } else {
            2
        }
    }
}
