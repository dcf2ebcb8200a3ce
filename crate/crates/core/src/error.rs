//! Error types shared across the pipeline stages.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: invalid {field}: {message}")]
    Validation {
        line: u64,
        field: &'static str,
        message: String,
    },
    #[error("session for station `{found}` passed while aggregating `{expected}`")]
    ForeignSession { expected: String, found: String },
    #[error("empty date range {start}..={end}")]
    EmptyRange { start: String, end: String },
    #[error("poi endpoint `{endpoint}` failed after {attempts} attempts: {message}")]
    PoiEndpoint {
        endpoint: String,
        attempts: u32,
        message: String,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("window length {0} is below the minimum of 2")]
    WindowTooShort(usize),
    #[error("window and mask lengths differ ({window} vs {mask})")]
    LengthMismatch { window: usize, mask: usize },
    #[error("every position of the window is masked")]
    AllMasked,
}

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding request for `{key}` failed after {attempts} attempts: {message}")]
    Transport {
        key: String,
        attempts: u32,
        message: String,
    },
    #[error("provider returned width {got}, configured width is {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("provider returned {got} embeddings for {expected} prompts")]
    CountMismatch { expected: usize, got: usize },
    #[error("embedding for `{0}` contains non-finite values")]
    NonFinite(String),
    #[error("credential environment variable `{0}` is not set")]
    MissingCredential(String),
}

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache {path}: bad magic at byte offset 0")]
    BadMagic { path: String },
    #[error("cache {path}: unsupported version {version}")]
    Version { path: String, version: u32 },
    #[error("cache {path}: width {found} does not match requested {expected}")]
    Width {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("cache {path}: truncated record at byte offset {offset}")]
    Truncated { path: String, offset: u64 },
    #[error("cache {path}: invalid key at byte offset {offset}")]
    BadKey { path: String, offset: u64 },
    #[error("embedding width {got} does not match cache width {expected}")]
    PutWidth { expected: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("corpus is empty")]
    Empty,
    #[error("duplicate corpus key `{0}`")]
    DuplicateKey(String),
    #[error("embedding width {got} does not match corpus width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("K must be at least 1")]
    ZeroK,
    #[error("corpus manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("retrieval supplied no neighbours")]
    NoNeighbours,
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("station index {index} out of range for {count} stations")]
    StationOutOfRange { index: usize, count: usize },
    #[error("non-finite activation in {0}")]
    NonFinite(&'static str),
    #[error("every position of the window is masked")]
    AllMasked,
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("window length {0} is below the minimum of 2")]
    WindowTooShort(usize),
    #[error("ratio {0} outside (0, 1)")]
    Ratio(f64),
    #[error("no gaps in the supplied masks; use random (LS) masks instead")]
    NoGaps,
    #[error("target fraction {0} outside (0, 0.5]")]
    Target(f64),
    #[error("cannot place a gap without overlap: {0}")]
    Infeasible(String),
    #[error("need at least 2 samples to split, got {0}")]
    TooFewSamples(usize),
    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("standard deviation must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("no masked positions to score")]
    EmptyTargets,
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty index set")]
    EmptyIndexSet,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("sample is empty")]
    EmptySample,
    #[error("no valid forecast origins")]
    NoOrigins,
    #[error("station `{0}` is not known to the model")]
    UnknownStation(String),
}

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("window has no observed entries")]
    AllMasked,
    #[error("donor pool is empty")]
    EmptyPool,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("unknown baseline `{0}`")]
    UnknownKind(String),
}
