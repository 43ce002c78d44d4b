use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the engine, the model and the pure training/metrics code.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {message}")]
    Shape { op: &'static str, message: String },
    #[error("{op}: input {value} outside the function's domain")]
    Domain { op: &'static str, value: f64 },
    #[error("token id {id} outside vocabulary of size {size}")]
    Vocabulary { id: usize, size: usize },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("backward already ran on this tape; record a new forward pass first")]
    TapeConsumed,
    #[error("backward needs a one-element loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("non-finite value produced at epoch {epoch}, batch {batch}: {detail}")]
    NumericFault { epoch: usize, batch: usize, detail: String },
    #[error("AUC undefined: labels contain a single class")]
    UndefinedAuc,
    #[error("recovery ratio undefined: F({0},{0}) is not positive")]
    ZeroDiagonal(String),
    #[error("report schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("unknown fusion kind `{0}`; expected one of mca_scf, vgcf, tgcf, mcf, early, late, attentive, text_only, image_only")]
    UnknownFusionKind(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
