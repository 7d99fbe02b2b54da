//! Ensemble-normalised "surprise" similarity over precomputed embeddings.
//!
//! The surprise of a key `k` for a query `q` relative to an ensemble `E` is the
//! probability that a random member of `E` is less similar to `q` than `k` is.
//! On top of that score the crate provides zero-shot classification, a
//! focal-loss few-shot adapter trainer, surprise-assignment clustering and an
//! experiment harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifier;
pub mod clustering;
pub mod config;
pub mod error;
pub mod fewshot;
pub mod io;
pub mod mixed;
pub mod report;
pub mod similarity;
pub mod stats;
pub mod synthetic;

pub use classifier::{build_queries, classify, evaluate, Evaluation, LabelSet, Prediction};
pub use clustering::{adjusted_rand, kmeans, surprise_assign, v_measure, ClusterResult};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use fewshot::{AdapterModel, TrainConfig, TrainingPair};
pub use mixed::{crossover_weight, mixed_surprise, MixConfig, MixedScorer, RescaleMap, RescaleScope, WeightMode};
pub use similarity::{pairwise_matrix, similarity, EmbeddingRecord, EmbeddingSet, ScoreMatrix, SimilarityKind};
pub use stats::{estimate_stats, surprise, surprise_matrix, QueryStats, StatsEstimator};
