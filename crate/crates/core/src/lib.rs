//! Knowledge-graph augmented fake-news classification.
//!
//! News titles are encoded by a two-layer stacked bidirectional LSTM. Named
//! entities in the title are linked to a knowledge graph through an alias
//! gazetteer and represented by their ComplEx embeddings; the mean entity
//! vector is concatenated with the title vector and scored by a small
//! feed-forward classifier.
//!
//! The numeric modules are generic over [`Scalar`] (`f32` or `f64`). The
//! aliases at the crate root fix the scalar to `f64`, which is what the
//! checkpoints store and what the gradient checks run in.

mod binio;
pub mod classifier;
pub mod complex_embedding;
pub mod dataset_pipeline;
pub mod entity_linker;
pub mod error;
pub mod kg_store;
pub mod scalar;
pub mod text_encoder;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// ComplEx model over double precision.
pub type ComplEx = complex_embedding::ComplExModel<f64>;
/// Stacked biLSTM parameters over double precision.
pub type BiLstm = text_encoder::BiLstmParams<f64>;
/// Fusion classifier over double precision.
pub type Classifier = classifier::ClassifierParams<f64>;
/// Full title + entity model over double precision.
pub type NewsModel = classifier::NewsModel<f64>;
