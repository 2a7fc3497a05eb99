use thiserror::Error;

use crate::codec::DecodeError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rotation is not orthonormal with det +1 (deviation {deviation:e})")]
    NotOrthonormal { deviation: f64 },
    #[error("zero-norm quaternion")]
    ZeroQuaternion,
    #[error("requested {k} neighbours from {n} points")]
    TooFewPoints { k: usize, n: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("gaussian graph needs at least {need_kernels} kernels and {need_nodes} ED nodes, got {kernels} kernels and {nodes} nodes")]
    GraphTooSmall {
        kernels: usize,
        nodes: usize,
        need_kernels: usize,
        need_nodes: usize,
    },
    #[error("image size mismatch: expected {}×{}, got {}×{}", expected.0, expected.1, got.0, got.1)]
    SizeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("dual-quaternion blend degenerated (real-part norm {norm:e})")]
    DegenerateBlend { norm: f64 },
    #[error("normal equations singular after {retries} damping escalations")]
    SingularSystem { retries: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite energy at iteration {iteration}, first offending kernel {kernel}")]
    NonFiniteEnergy { iteration: usize, kernel: usize },
    #[error("symbol {symbol} has zero frequency")]
    ZeroFrequency { symbol: u32 },
    #[error("{distinct} distinct symbols exceed the {capacity}-slot frequency table")]
    TableOverflow { distinct: usize, capacity: usize },
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("image error: {0}")]
    Image(String),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
