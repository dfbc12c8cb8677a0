//! Offline evaluation of recommendation algorithms with item reweighting.
//!
//! Historical interaction data is shaped by whatever recommender was in
//! production when it was collected. Evaluating a new algorithm on that data
//! with the classical leave-one-out protocol rewards agreement with the old
//! recommender. This crate implements the protocol, a reweighting of the
//! per-user item-selection probabilities that pulls the item marginal back to
//! a reference date, and a simulator that reproduces the bias on synthetic
//! interaction histories.
//!
//! Modules, bottom-up:
//!
//! - [`dataset`]: interaction logs and immutable bipartite snapshots with
//!   dual (user- and item-major) sparse indexes.
//! - [`recommend`]: constant and collaborative-filtering recommenders.
//! - [`protocol`]: pair sampling, stochastic and exhaustive evaluation, Wald
//!   confidence intervals.
//! - [`debias`]: weighted item distributions, the KL objective, its gradient
//!   and the weight optimizer.
//! - [`simulate`]: synthetic histories with organic growth and campaigns.
//! - [`rng`]: the seeded generator and labeled sub-seed derivation.

pub mod dataset;
pub mod debias;
pub mod protocol;
pub mod recommend;
pub mod rng;
pub mod simulate;

pub use dataset::{
    degree_histogram, load_log, remove_item_view, snapshot_at, DatasetError, Interaction,
    InteractionLog, ItemId, ProfileView, Snapshot, Source, UserId,
};
pub use debias::{
    item_distribution, kl_divergence, kl_gradient, optimize_weights, pair_distribution,
    select_active_items, ActiveSet, DebiasError, ItemDistribution, OptimizerConfig,
    WeightVector,
};
pub use protocol::{
    draw_pair, evaluate_exhaustive, evaluate_stochastic, quality, wald_ci, EvaluationResult,
    ProtocolError, SamplingConfig,
};
pub use recommend::{
    constant_recommender, cosine_cf_scores, naive_cf_scores, top_k, CosineVariant,
    RecommendationList, Recommender, RecommenderSpec, ScoreVector,
};
pub use simulate::{Campaign, SimulationConfig, SimulationError};
