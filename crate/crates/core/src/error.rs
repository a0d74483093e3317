use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("malformed line {0}")]
    MalformedLine(usize),
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sample count {count} out of range for {n} points")]
    CountOutOfRange { count: usize, n: usize },
    #[error("start index {start} out of range for {n} points")]
    StartOutOfRange { start: usize, n: usize },
    #[error("k = {k} exceeds the maximum of {max}")]
    KTooLarge { k: usize, max: usize },
    #[error("k = {k} is below the minimum of {min}")]
    KTooSmall { k: usize, min: usize },
    #[error("downsampling leaves no points")]
    EmptyAfterDownsample,
    #[error("alpha must be positive and finite, got {0}")]
    BadAlpha(f64),
    #[error("invalid degree window [{d_min}, {d_max}] for {n} points")]
    BadDegreeWindow { d_min: usize, d_max: usize, n: usize },
    #[error("node {node} requests degree {degree} but only {available} neighbours exist")]
    DegreeExceedsN { node: usize, degree: usize, available: usize },
    #[error("loss must be a 1x1 node, got {rows}x{cols}")]
    NotScalarLoss { rows: usize, cols: usize },
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("need at least {min} points, got {n}")]
    TooFewPoints { n: usize, min: usize },
    #[error("ground truth has {gt} points but the finest stage needs {needed}")]
    GtTooSmall { gt: usize, needed: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
