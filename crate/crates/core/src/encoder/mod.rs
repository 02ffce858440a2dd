//! The trainable CoT feature extractor.
//!
//! Text is hashed into sparse n-gram features, passed through one tanh hidden
//! layer and a linear output layer, and trained with a triplet margin loss so
//! that two responses of the source model land closer together than a source
//! response and a benign one.

mod features;
mod gradcheck;
mod io;
mod loss;
mod model;
mod train;
mod triplets;

use thiserror::Error;

pub use features::{tokenize, Featurizer, SparseVector, DEFAULT_FEATURE_DIM};
pub use gradcheck::{grad_check, grad_check_with, triplet_losses, GradCheckReport};
pub use io::{ModelMeta, MODEL_FORMAT_VERSION};
pub use loss::{euclidean, triplet_loss, triplet_loss_grad};
pub use model::{EncoderParams, FeatureVector, Gradients, ParamRef};
pub use train::{batch_gradient, train, TrainConfig, TrainingLog};
pub use triplets::{sample_triplets, Triplet};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("text has no tokens")]
    EmptyText,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need at least 2 source samples per query, corpus has {0}")]
    TooFewSamples(u32),
    #[error("at least one benign corpus is required")]
    NoBenign,
    #[error("corpus mismatch: {0}")]
    CorpusMismatch(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at epoch {epoch}: {detail}")]
    NonFinite { epoch: usize, detail: String },
    #[error("gradient check needs a non-empty batch")]
    EmptyBatch,
    #[error("triplet {index} is not strictly hinge-active (loss {loss})")]
    HingeInactive { index: usize, loss: f64 },
    #[error("model file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}
