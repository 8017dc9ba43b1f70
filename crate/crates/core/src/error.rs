use thiserror::Error;

pub type Result<T> = std::result::Result<T, FlowError>;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("{context}: channel count {channels} must be even")]
    OddChannels { context: String, channels: usize },

    #[error("{context}: spatial size {height}x{width} must have even sides")]
    OddSpatial {
        context: String,
        height: usize,
        width: usize,
    },

    #[error("invalid axis {axis} for tensor of rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },

    #[error("division guard: divisor magnitude {magnitude:e} below 1e-12")]
    DivisionGuard { magnitude: f64 },

    #[error("log guard: argument {value:e} below 1e-12")]
    LogGuard { value: f64 },

    #[error("singular matrix in {context}: |det| = {det:e}")]
    SingularMatrix { context: String, det: f64 },

    #[error("SVD did not converge after {sweeps} sweeps (off-diagonal mass {mass:e})")]
    SvdNoConvergence { sweeps: usize, mass: f64 },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("label index {index} out of range for {classes} classes")]
    InvalidLabel { index: usize, classes: usize },

    #[error("unknown label name {name:?}")]
    UnknownLabelName { name: String },

    #[error("model is {model}conditional but a label was {given}")]
    ConditionMismatch {
        model: &'static str,
        given: &'static str,
    },

    #[error("non-finite loss at batch index {batch_index}")]
    NonFiniteLoss { batch_index: usize },

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("{path}: bad IDX magic at byte {offset}: {detail}")]
    IdxFormat {
        path: String,
        offset: usize,
        detail: String,
    },

    #[error("{path}: row {row}: {detail}")]
    CsvFormat {
        path: String,
        row: usize,
        detail: String,
    },

    #[error("{path}: {detail}")]
    PgmFormat { path: String, detail: String },

    #[error("image {locator} too small: {height}x{width} (minimum 8x8)")]
    ImageTooSmall {
        locator: String,
        height: usize,
        width: usize,
    },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("latent parts mismatch: {0}")]
    LatentParts(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl FlowError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        FlowError::Io {
            path: path.into(),
            source,
        }
    }
}
