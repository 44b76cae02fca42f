use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Network description whose layers do not compose.
    #[error("network spec error at layer {layer}: {msg}")]
    Spec { layer: usize, msg: String },

    /// Runtime shape disagreement while running the network.
    #[error("shape mismatch in {layer}: expected {expected:?}, got {got:?}")]
    Shape {
        layer: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("tensor shape {shape:?} does not match data length {len}")]
    TensorLength { shape: Vec<usize>, len: usize },

    /// Two per-element collections that should share a layout do not.
    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("invalid value for `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("failed to load {path}: {msg}")]
    Load { path: PathBuf, msg: String },

    #[error("partition infeasible: {0}")]
    Partition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn load(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Load {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
