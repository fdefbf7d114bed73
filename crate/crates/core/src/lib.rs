//! Unsupervised re-ranking of top-L ranked lists through hypergraph,
//! Cartesian-product, and connected-component contextual stages.
//!
//! The entry point is [`run_rfe`]: given one ranked list per collection
//! object it returns refined lists and an [`RfeIndex`] that can answer
//! queries for objects outside the collection via [`query_unseen`].

pub mod cartesian;
pub mod components;
pub mod error;
pub mod hypergraph;
pub mod io;
pub mod metrics;
pub mod normalize;
pub mod pipeline;
pub mod rank;
pub mod sparse;
pub mod synthetic;

pub use components::{EmbeddingMatrix, RankFactor};
pub use error::{Result, RfeError};
pub use hypergraph::HypergraphState;
pub use metrics::{MetricReport, QueryMode, RelevanceOracle};
pub use normalize::SigmoidParams;
pub use pipeline::{query_unseen, run_aggregation, run_rfe, run_rfe_traced, RfeConfig, RfeIndex, RfeRun, Stage};
pub use rank::{default_depth, RankedList, RankedListSet};
pub use sparse::SparseScoreMatrix;
