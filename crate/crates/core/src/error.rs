use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("grid shape mismatch: expected {expected:?} (w, h), found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("quaternion norm {norm} is not unit within 1e-6")]
    NonUnitQuaternion { norm: f64 },

    #[error("metric scale must be positive and finite, got {0}")]
    InvalidScale(f64),

    #[error("no valid points to compute a scene scale")]
    DegenerateScale,

    #[error("no jointly valid points with usable ratio for median alignment")]
    DegenerateAlignment,

    #[error("metric mask selects no elements")]
    EmptyMask,

    #[error("view {view} has no `{grid}` grid")]
    MissingGrid { view: usize, grid: &'static str },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported bundle format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("bundle file missing: {0}")]
    MissingFile(PathBuf),

    #[error("size mismatch in {path}: expected {expected} bytes, found {actual}")]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("bad grid header in {path}: {reason}")]
    BadHeader { path: PathBuf, reason: String },

    #[error("view 0 pose must be the identity (deviation {deviation:e})")]
    NonIdentityFirstPose { deviation: f64 },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
