//! Cause classification for railroad accident narratives.

pub mod baselines;
pub mod corpus;
pub mod embed;
pub mod eval;
pub mod io_util;
pub mod models;
pub mod nn;
pub mod synth;
pub mod text;
pub mod vectorize;

pub use corpus::{AccidentRecord, GeneralCause, LabelScheme, SpecificCategory};
pub use embed::EmbeddingMatrix;
pub use eval::{ConfusionMatrix, MetricsReport};
pub use models::{Architecture, ModelSpec, TrainConfig, TrainedModel};
pub use nn::Tensor;
pub use text::{TokenSequence, Vocabulary};
pub use vectorize::{SparseVector, TfIdfModel};
