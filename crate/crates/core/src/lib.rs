//! Prefix-tuning and contextual dynamic prompting for task-oriented dialog
//! response generation, at desk scale.
//!
//! The crate bundles a small reverse-mode autodiff engine, a frozen
//! encoder-decoder transformer, three prompt-generation strategies, a
//! trainer that only ever updates prompt-encoder parameters, the dialog
//! metric suite, and the blinded annotation store used for human comparison.

pub mod annotation;
pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod model;
pub mod par;
pub mod params;
pub mod prompt;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Graph, NodeId};
pub use model::{Backbone, ModelConfig, PrefixMode};
pub use prompt::{PrefixTensor, PromptEncoder, Strategy};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        expected: String,
        actual: String,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("input too long: {len} tokens exceeds limit {max}")]
    TooLong { len: usize, max: usize },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("corpus error in dialog {dialog}: {path}: {message}")]
    Corpus {
        dialog: String,
        path: String,
        message: String,
    },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("evaluation: {0}")]
    Eval(String),
    #[error("annotation: {0}")]
    Annotation(#[from] annotation::AnnotationError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
