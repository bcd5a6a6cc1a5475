//! Knowledge graph embeddings for exploratory semantic queries.
//!
//! The pipeline runs in three stages:
//!
//! 1. [`graph`]: ingest tab-separated triples into an integer-coded
//!    [`KnowledgeGraph`] and augment it with one inverse triple per fact.
//! 2. [`model`] and [`train`]: fit a CP_h model, where each entity owns a
//!    head-role and a tail-role vector and a triple is scored by
//!    `⟨h, t⁽²⁾, r⟩ + ⟨t, h⁽²⁾, r⁽ᵃ⁾⟩`.
//! 3. [`semquery`]: answer similarity, biased-similarity, analogy and
//!    browsing queries with dot products and vector differences over the
//!    head-role vectors.
//!
//! Model math is generic over [`Scalar`] (`f32` or `f64`). Training uses
//! `f64`; [`store`] persists `f32`.

pub mod eval;
pub mod graph;
pub mod matrix;
pub mod model;
pub mod scalar;
pub mod semquery;
pub mod store;
pub mod train;

pub use eval::{evaluate_link_prediction, LinkMetrics};
pub use graph::{
    augment, ingest_entity_types, ingest_triples, split_holdout, EntityId, GraphError,
    KnowledgeGraph, RelationId, Triple, Vocabulary,
};
pub use matrix::Matrix;
pub use model::{
    init_model, prob_valid, score_directed, score_full, trilinear, EmbeddingModel, ModelConfig,
    ModelError, Optimizer,
};
pub use scalar::Scalar;
pub use semquery::{
    analogy_query, dir, mean_vector, sim, similar_entities, similar_with_bias, BrowseSession,
    QueryError, QuerySpec, RankedList, Similarity,
};
pub use store::{load_model, save_model, StoreError};
pub use train::{loss_and_grads, train};

/// Training-precision model.
pub type Model64 = EmbeddingModel<f64>;
/// On-disk and serving precision model.
pub type Model32 = EmbeddingModel<f32>;
pub type RankedList32 = RankedList<f32>;
pub type RankedList64 = RankedList<f64>;
pub type BrowseSession32 = BrowseSession<f32>;
