use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A point lies (numerically) on the camera's principal plane, `|m3·p| <= eps`.
    #[error("degenerate depth at point {index}: |m3·p| = {depth:e}")]
    DegenerateDepth { index: usize, depth: f64 },

    /// The bordered TPS system could not be solved reliably.
    #[error("singular TPS system (reciprocal condition estimate {rcond:e})")]
    SingularSystem { rcond: f64 },

    /// The left 3x3 block of the projection matrix is not invertible.
    #[error("camera matrix has singular left 3x3 block (det = {det:e})")]
    SingularA { det: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("landmark scheme mismatch: expected {expected}, got {got}")]
    SchemeMismatch { expected: String, got: String },

    #[error("no landmarks selected for evaluation")]
    NoLandmarks,

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("mesh is not edge-manifold; offending edges: {edges:?}")]
    NonManifold { edges: Vec<(usize, usize)> },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("training diverged at epoch {epoch}: loss {loss:e} vs initial {initial:e}")]
    Diverged { epoch: usize, loss: f64, initial: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("image: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag, used by the CLI's JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DegenerateDepth { .. } => "degenerate_depth",
            Error::SingularSystem { .. } => "singular_system",
            Error::SingularA { .. } => "singular_camera",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::SchemeMismatch { .. } => "scheme_mismatch",
            Error::NoLandmarks => "no_landmarks",
            Error::Parse { .. } => "parse",
            Error::NonManifold { .. } => "non_manifold",
            Error::InvalidMesh(_) => "invalid_mesh",
            Error::Diverged { .. } => "diverged",
            Error::Checkpoint(_) => "checkpoint",
            Error::Image(_) => "image",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::LengthMismatch {
            what,
            expected,
            got,
        })
    }
}
