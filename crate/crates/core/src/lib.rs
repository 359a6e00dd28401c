//! Multi-behavior recommendation via hyper meta-graph contrastive learning.
//!
//! The pipeline, end to end:
//!
//! 1. [`ingest`] — parse interaction logs, filter users/items by target-behavior
//!    support, index entities into dense ids.
//! 2. [`hmg`] — per user, build the cascade of hyper meta-graphs: rooted trees
//!    whose root-to-leaf paths chain the user's behaviors towards each item in
//!    chronological order, one graph per behavior level.
//! 3. [`encoders`] — graph neural encoders (SG/GCN/GIN/TAG) turning each graph
//!    into a behavior-pattern embedding.
//! 4. [`contrastive`] — InfoNCE discrimination between adjacent levels, with the
//!    positive pair produced by cross-encoding (no graph augmentation).
//! 5. [`recommender`] — fusion of level embeddings, bilinear scoring against the
//!    item table, joint contrastive + recommendation objective, training loop.
//! 6. [`eval`] — leave-one-out splits, Recall@K / NDCG@K, report generation.
//!
//! [`autodiff`] supplies the dense-tensor reverse-mode machinery underneath,
//! and [`synth`] generates planted-pattern logs for experiments and tests.

pub mod autodiff;
pub mod contrastive;
pub mod encoders;
pub mod eval;
pub mod hmg;
pub mod ingest;
pub mod recommender;
pub mod synth;
