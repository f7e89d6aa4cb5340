//! Tiered cascaded ranking for knowledge-graph link prediction.
//!
//! A cheap embedding model scores every query/candidate pair. Each later,
//! more expensive tier reranks only a pruned subset of candidates per query
//! by convex reweighting with the running scores, and leaves every other
//! candidate untouched.
//!
//! | Module | Role |
//! |--------|------|
//! | [`kg`] | datasets, queries, filtered-evaluation index |
//! | [`kge`] | TransE / ComplEx / RESCAL / RotatE scorers and trainer |
//! | [`matrix`] | dense score matrices, normalization, synthetic tiers, cost model |
//! | [`ensemble`] | additive reweighting and weight tuning |
//! | [`cascade`] | pruning strategies, quantile regressor, tierwise reranking |
//! | [`eval`] | filtered MRR and hits@k |
//! | [`analysis`] | rank correlation, margins, score skew, Pareto tables |

pub mod analysis;
pub mod cascade;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod kg;
pub mod kge;
pub mod matrix;
mod rng;

pub use error::{Error, Result};
