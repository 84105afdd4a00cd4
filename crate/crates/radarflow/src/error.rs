//! Error type shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong while ingesting data or running the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("empty LiDAR frame")]
    EmptyLidarFrame,

    #[error("unknown sensor id {0}")]
    UnknownSensor(usize),

    #[error("improper rotation for sensor {sensor}: determinant {det}")]
    ImproperRotation { sensor: usize, det: f64 },

    #[error("sensor {sensor} extrinsic rotation is not orthonormal (max deviation {deviation:.3e})")]
    NotOrthonormal { sensor: usize, deviation: f64 },

    #[error("invalid ego state: {0}")]
    InvalidEgoState(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("radar point at sensor origin (sensor-relative range {range:.3e} m)")]
    AtSensorOrigin { range: f64 },

    #[error("no reference frame: Chamfer target is empty")]
    NoReferenceFrame,

    #[error("empty scene: no bodies and no ground plane")]
    EmptyScene,

    #[error("unknown preset '{name}'; available presets: {catalog}")]
    UnknownPreset { name: String, catalog: String },

    #[error("point count mismatch in {context}: expected {expected}, got {actual}")]
    CountMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("need at least two frames, found {0}")]
    NeedTwoFrames(usize),

    #[error("{0}")]
    Data(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
