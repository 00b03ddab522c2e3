//! Popularity forecasting toolkit for non-personalized recommendation.
//!
//! The pipeline buckets interaction logs into fixed-length windows on a global
//! timeline, builds per-item popularity series, and emits leakage-free
//! train/validation/test samples ([`ingest`]). Samples are compared with a
//! fused similarity of trend shape (dynamic time warping), short-term momentum
//! and metadata embeddings ([`similarity`]); the fused score drives triplet
//! mining ([`mining`]) for a contrastive projection head ([`contrastive`]).
//! Pluggable scorers rank items with templated explanations ([`scoring`]) and
//! the ranked lists are evaluated with HR@K, NDCG@K and Jaccard@K ([`eval`]).
//!
//! Data-parallel loops go through [`exec::Exec`], which uses rayon when the
//! `parallel` feature is enabled and runs sequentially otherwise. Results are
//! identical in both modes.

pub mod contrastive;
pub mod error;
pub mod eval;
pub mod exec;
pub mod ingest;
pub mod mining;
pub mod scoring;
pub mod similarity;
pub mod synthetic;

pub use error::{Error, Result};
pub use exec::Exec;
