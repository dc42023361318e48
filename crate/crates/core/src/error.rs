use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic {
        expected: &'static str,
        found: Vec<u8>,
    },
    #[error("unsupported {format} version {version}")]
    UnsupportedVersion { format: &'static str, version: u32 },
    #[error("truncated {0} section")]
    Truncated(String),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("kinematic graph is not a tree")]
    NotATree,
    #[error("skin weights of vertex {vertex} sum to {sum}")]
    WeightSum { vertex: usize, sum: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("cannot resample a single frame")]
    SingleFrame,
    #[error("frame {frame} out of range for {frames} frames")]
    FrameOutOfRange { frame: usize, frames: usize },
    #[error("empty candidate list for segment {0}")]
    EmptyCandidates(usize),
    #[error("axis undefined for segment {0}")]
    AxisUndefined(usize),
    #[error("no incident faces for vertex {0}")]
    NoIncidentFaces(usize),
    #[error("angular sampling aliased at frame {0}")]
    AngularAliasing(usize),
    #[error("no quiet segment found")]
    NoQuietSegment,
    #[error("segment {0} has no usable candidate")]
    NoUsableCandidate(usize),
    #[error("not a rotation matrix (orthonormality error {0:e})")]
    NotRotation(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("zero-norm timestep {0}")]
    ZeroNorm(usize),
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("dead codes present but batch is empty")]
    EmptyBatch,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the filesystem rather than by the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}
