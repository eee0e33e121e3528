use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("interpolation ratio {0} is outside [0, 1]")]
    LambdaOutOfRange(f64),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("backward already ran on this graph; rebuild the forward pass")]
    BackwardRepeated,
    #[error("parameter {0} has no gradient")]
    MissingGradient(usize),
    #[error("optimizer state does not match parameters: {0}")]
    OptimizerMismatch(String),
    #[error("token id {token} is out of vocabulary (size {vocab_size})")]
    TokenOutOfVocab { token: u32, vocab_size: usize },
    #[error("empty token sequence")]
    EmptySequence,
    #[error("layer {layer} does not exist (encoder has {depth} hidden layers)")]
    LayerOutOfRange { layer: usize, depth: usize },
    #[error("vocabulary mismatch: model has {model}, dataset has {dataset}")]
    VocabMismatch { model: usize, dataset: usize },
    #[error("class count mismatch: model has {model}, dataset has {dataset}")]
    ClassMismatch { model: usize, dataset: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset carries no {0} annotations")]
    MissingAnnotations(&'static str),
    #[error("group assignment has no flag for example {0}")]
    MissingAssignment(u64),
    #[error("invalid probe task: {0}")]
    Probe(String),
    #[error("report: {0}")]
    Report(String),
    #[error("malformed {format} input at record {record}: {message}")]
    Format {
        format: &'static str,
        record: usize,
        message: String,
    },
    #[error("{context}: {source}")]
    Run {
        context: String,
        #[source]
        source: Box<Error>,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(format: &'static str, record: usize, message: impl Into<String>) -> Self {
        Error::Format {
            format,
            record,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Run {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// True when the error stems from user-supplied configuration rather than
    /// a failure during execution.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Run { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
