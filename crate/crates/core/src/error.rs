use thiserror::Error;

use emoc_autodiff::AutodiffError;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("malformed WAV: {0}")]
    MalformedWav(String),
    #[error("unsupported WAV codec (format tag {format_tag}, {bits} bits)")]
    UnsupportedCodec { format_tag: u16, bits: u16 },
    #[error("unsupported sample rate {0} Hz (expected 16000)")]
    UnsupportedRate(u32),
    #[error("unsupported channel count {0} (expected mono)")]
    UnsupportedChannels(u16),
    #[error("clip of {samples} samples is shorter than one {window}-sample window")]
    ClipTooShort { samples: usize, window: usize },

    #[error("unknown emotion category {0:?}")]
    UnknownEmotion(String),
    #[error("zero-norm vector in similarity for {0}")]
    ZeroNorm(String),
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("non-finite loss component {0}")]
    NonFiniteLoss(&'static str),
    #[error("intensity {0} outside [0, 1]")]
    InvalidIntensity(f64),
    #[error("invalid intensity cell: {0}")]
    InvalidCell(String),
    #[error("empty audio: no frames to process")]
    EmptyAudio,
    #[error("Calm has no intensity direction")]
    CalmHasNoDirection,
    #[error("invalid configuration: {0}")]
    InvalidSpec(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn parse(path: impl AsRef<std::path::Path>, msg: impl Into<String>) -> Self {
        CoreError::Parse {
            path: path.as_ref().display().to_string(),
            msg: msg.into(),
        }
    }
}
