use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {shapes}")]
    Shape { op: &'static str, shapes: String },
    #[error("{op}: input outside domain ({detail})")]
    Domain { op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("sequence length must be at least 1 (sample {0})")]
    ZeroLength(String),
    #[error("cannot fuse an empty list of distributions")]
    EmptyFusion,
    #[error("triplet mining needs a batch of at least 3, got {0}")]
    BatchTooSmall(usize),
    #[error("triplet index {index} out of range for batch of {len}")]
    TripletIndex { index: usize, len: usize },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}: field `{field}` {message}")]
    Field {
        line: usize,
        field: String,
        message: String,
    },
    #[error("label {value} outside range [{lo}, {hi}]")]
    LabelOutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss in component `{0}`")]
    NonFiniteLoss(&'static str),
    #[error("all modalities missing for sample {0}")]
    AllMissing(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, shapes: &[&[usize]]) -> Self {
        let shapes = shapes
            .iter()
            .map(|s| format!("{s:?}"))
            .collect::<Vec<_>>()
            .join(" and ");
        Error::Shape { op, shapes }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
