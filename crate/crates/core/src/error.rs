use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{dim}={value} not divisible by {divisor}")]
    InputSize {
        dim: &'static str,
        value: usize,
        divisor: usize,
    },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("degenerate class weights: {0}")]
    DegenerateWeights(String),

    #[error("checkpoint: bad magic {0:02x?}")]
    BadMagic([u8; 4]),

    #[error("checkpoint: unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint: shape mismatch for parameter `{name}`: expected {expected:?}, found {found:?}")]
    ParamShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("checkpoint: missing parameter `{0}`")]
    MissingParam(String),

    #[error("checkpoint: payload CRC mismatch (stored {stored:08x}, computed {computed:08x})")]
    CrcMismatch { stored: u32, computed: u32 },

    #[error("checkpoint: malformed file: {0}")]
    Malformed(String),

    #[error("missing file for `{id}`: {path}")]
    MissingFile { id: String, path: PathBuf },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }
}
