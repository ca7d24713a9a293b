use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("unbalanced brackets in record starting at line {0}")]
    UnbalancedBrackets(usize),
    #[error("empty label in record starting at line {0}")]
    EmptyLabel(usize),
    #[error("tree children are not contiguous: {0}")]
    NonContiguousChildren(String),
    #[error("replay stalled: no node has all of its children available ({0})")]
    ReplayStalled(String),

    #[error("empty corpus")]
    EmptyCorpus,
    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("malformed line {0}")]
    MalformedLine(usize),
    #[error("malformed tagset file: {0}")]
    MalformedTagset(String),

    #[error("index {index} out of range for table with {len} entries")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value encountered: {0}")]
    NonFiniteValue(String),
    #[error("malformed model file: {0}")]
    MalformedModel(String),

    #[error("composition needs at least one child")]
    EmptyChildList,
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("unknown POS tag {0:?}")]
    UnknownPosTag(String),
    #[error("missing forward cache")]
    MissingForwardCache,

    #[error("gold tag sequence violates BIOES constraints")]
    InvalidGoldPath,
    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("constituents do not cover the whole sentence")]
    IncompleteCoverage,
    #[error("models were trained with different tagsets")]
    TagsetMismatch,
    #[error("no models given")]
    NoModels,
    #[error("sentence {0}: gold and predicted trees have different token counts")]
    LengthMismatch(usize),
    #[error("phrase dump is empty")]
    EmptyCorpusDump,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
