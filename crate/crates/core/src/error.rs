use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("backward root must be scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("unknown mark `{0}`")]
    UnknownMark(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("trajectory too short: need at least {need} points, got {got}")]
    TooShort { need: usize, got: usize },

    #[error("length mismatch: expected {expected} points, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("rule `{rule}` leaves the {side} set empty")]
    EmptySide { rule: String, side: &'static str },

    #[error("mask must hide exactly {expected} steps, got {got}")]
    MaskCardinality { expected: usize, got: usize },

    #[error("generation retries exhausted: {0}")]
    RetriesExhausted(String),

    #[error("frozen encoder parameters changed during training (hash {before} -> {after})")]
    EncoderMutated { before: String, after: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("non-finite gradient for sample `{0}`")]
    NonFiniteGradient(String),

    #[error("empty class: {0}")]
    EmptyClass(&'static str),

    #[error("insufficient calibration data: need at least {need} scores, got {got}")]
    InsufficientCalibration { need: usize, got: usize },

    #[error("episode has {got} steps, window needs {need}")]
    EpisodeTooShort { need: usize, got: usize },

    #[error("bandwidth must be positive, got {0}")]
    Bandwidth(f64),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("parse: {0}")]
    Parse(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable code, used by the CLI on exit.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "E_SHAPE",
            Error::NonFinite(_) => "E_NONFINITE",
            Error::NonScalarRoot(_) => "E_NONSCALAR_ROOT",
            Error::UnknownMark(_) => "E_UNKNOWN_MARK",
            Error::Invalid(_) => "E_INVALID",
            Error::TooShort { .. } => "E_TOO_SHORT",
            Error::LengthMismatch { .. } => "E_LENGTH",
            Error::EmptySide { .. } => "E_EMPTY_SIDE",
            Error::MaskCardinality { .. } => "E_MASK",
            Error::RetriesExhausted(_) => "E_RETRIES",
            Error::EncoderMutated { .. } => "E_ENCODER_MUTATED",
            Error::NonFiniteLoss { .. } => "E_NONFINITE_LOSS",
            Error::NonFiniteGradient(_) => "E_NONFINITE_GRAD",
            Error::EmptyClass(_) => "E_EMPTY_CLASS",
            Error::InsufficientCalibration { .. } => "E_CALIBRATION",
            Error::EpisodeTooShort { .. } => "E_EPISODE_SHORT",
            Error::Bandwidth(_) => "E_BANDWIDTH",
            Error::Checkpoint(_) => "E_CHECKPOINT",
            Error::Parse(_) => "E_PARSE",
            Error::Io(_) => "E_IO",
            Error::Json(_) => "E_JSON",
            Error::Csv(_) => "E_CSV",
        }
    }
}
