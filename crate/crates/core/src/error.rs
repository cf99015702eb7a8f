use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("episode finished: step called after done")]
    EpisodeFinished,

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("update rejected: non-finite gradient")]
    RejectUpdate,

    #[error("policy diverged: {0}")]
    PolicyDivergence(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty input")]
    EmptyInput,

    #[error("negative lagrange multiplier: {0}")]
    NegativeLambda(f64),

    #[error("non-finite measured cost: {0}")]
    NonFiniteCost(f64),

    #[error("training diverged at iteration {iteration}: {detail}")]
    TrainingDivergence { iteration: usize, detail: String },

    #[error("invalid reference point: {0}")]
    InvalidRef(String),

    #[error("malformed wav header: {0}")]
    MalformedHeader(String),

    #[error("unsupported wav encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("empty segment")]
    EmptySegment,

    #[error("segment out of range: [{start}, {end}] s in a clip of {duration} s")]
    OutOfRange { start: f64, end: f64, duration: f64 },

    #[error("undefined level: rms must be positive, got {0}")]
    UndefinedLevel(f64),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint version mismatch: expected {expected}, found {found}")]
    CheckpointVersion { expected: String, found: String },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("invalid command: {field}: {reason}")]
    InvalidCommand { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
