use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("singular camera: |det M| = {det:e} is at or below 1e-12")]
    SingularCamera { det: f64 },

    #[error("point is behind the camera (projective depth {depth:e})")]
    BehindCamera { depth: f64 },

    #[error("rig needs at least 2 cameras, got {count}")]
    TooFewCameras { count: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("degenerate line configuration (condition number {condition:e})")]
    DegenerateConfiguration { condition: f64 },

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("no voxel is visible in every camera")]
    EmptySupport,

    #[error("degenerate box: {w}x{h} pixels")]
    DegenerateBox { w: f64, h: f64 },

    #[error("inverted box: reprojected top ({top}) is not above bottom ({bottom})")]
    InvertedBox { top: f64, bottom: f64 },

    #[error("non-finite value produced by `{op}`")]
    NonFiniteValue { op: &'static str },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("invalid scene configuration: {0}")]
    InvalidConfig(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
