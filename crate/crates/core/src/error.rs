use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input is empty or shorter than one frame")]
    EmptyInput,
    #[error("unsupported sample rate {0} Hz (only 16000 Hz is accepted)")]
    BadSampleRate(u32),
    #[error("invalid sample at index {index}: {value}")]
    BadSample { index: usize, value: f64 },
    #[error("invalid frame config: {0}")]
    BadFrameConfig(String),
    #[error("unsupported wav format: {0}")]
    BadWav(String),
    #[error("noise ({noise} samples) is shorter than the clean signal ({clean} samples)")]
    NoiseTooShort { clean: usize, noise: usize },
    #[error("clean signal has no active frames")]
    SilentClean,
    #[error("noise signal has zero power over the active frames")]
    SilentNoise,

    #[error("duplicate symbol {symbol:?} in language {language:?}")]
    DuplicateSymbol { language: String, symbol: String },
    #[error("language {0:?} already present in phoneme space")]
    LanguageExists(String),
    #[error("unknown phoneme unit {language:?}/{symbol:?}")]
    UnknownUnit { language: String, symbol: String },
    #[error("invalid posteriorgram: {0}")]
    InvalidPpg(String),
    #[error("phoneme space mismatch: expected checksum {expected:016x}, found {found:016x}")]
    SpaceMismatch { expected: u64, found: u64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("convolution kernel width must be odd, got {0}")]
    EvenKernel(usize),
    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("bad model config: {0}")]
    BadConfig(String),
    #[error("too few frames: need at least {need}, have {have}")]
    TooFewFrames { need: usize, have: usize },

    #[error("malformed {format} data: {msg}")]
    Format { format: &'static str, msg: String },
    #[error("missing checkpoint: {}", .0.display())]
    MissingCheckpoint(PathBuf),
    #[error("evaluation split {0:?} is empty")]
    EmptySplit(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(format: &'static str, msg: impl Into<String>) -> Self {
        Error::Format {
            format,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input data or files, as opposed to
    /// violated internal invariants.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::ShapeMismatch(_))
    }
}
