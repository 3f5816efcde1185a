use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the geometry, diffusion, network and meshing stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("non-triangular face at line {line} ({corners} corners)")]
    NonTriangularFace { line: usize, corners: usize },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("non-manifold edge ({0}, {1}) used by {2} triangles")]
    NonManifoldEdge(usize, usize, usize),

    #[error("open boundary: edge ({0}, {1}) used by a single triangle")]
    OpenBoundary(usize, usize),

    #[error("surface is disconnected; per-component genus {0:?}")]
    Disconnected(Vec<usize>),

    #[error("degenerate bounding box")]
    DegenerateBounds,

    #[error("too many points for a frame: {0} > 1024")]
    TooManyPoints(usize),

    #[error("frame metadata mismatch: {0}")]
    MetaMismatch(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("timestep {t} outside 1..={max}")]
    StepOutOfRange { t: usize, max: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("bad magic in {0}")]
    BadMagic(String),

    #[error("unsupported version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },

    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("length mismatch: {0}")]
    Length(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("deformation rejected after {0} attempts")]
    DeformRejected(usize),

    #[error("zero enclosed volume")]
    ZeroVolume,

    #[error("polycube extraction failed: {0}")]
    Snap(String),

    #[error("segmentation failed: {0}")]
    Segmentation(String),

    #[error("parameterization failed: {0}")]
    Parameterization(String),

    #[error("point location failed for node {0}")]
    PointLocation(usize),

    #[error("pillowing failed: {0}")]
    Pillow(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing input: {0}")]
    MissingInput(PathBuf),

    #[error("stage `{stage}` failed (artifacts: {}): {source}", join_paths(.artifacts))]
    Stage {
        stage: String,
        artifacts: Vec<PathBuf>,
        #[source]
        source: Box<Error>,
    },
}

fn join_paths(paths: &[PathBuf]) -> String {
    let parts: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
    parts.join(", ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
