//! Off-policy evaluation for contextual bandits with large action spaces.
//!
//! The crate provides five value estimators (DM, IPS, DR, MIPS, MDR), a
//! synthetic environment with factored categorical action embeddings, exact
//! oracles and analytic variance formulas, and a replication harness that
//! compares estimator bias, variance, and MSE as the action space grows.

pub mod env;
pub mod error;
pub mod estimators;
pub mod model;
pub mod oracle;
pub mod regression;
pub mod svg;
pub mod sweep;

pub use env::{derive_seed, EnvConfig, Environment};
pub use error::{OpeError, Result};
pub use estimators::{
    compute_marginal_weights, compute_vanilla_weights, estimate_dm, estimate_dr, estimate_ips,
    estimate_mdr, estimate_mips, Estimate, WeightKind, WeightVector,
};
pub use model::{
    check_common_support, marginal_embedding_dist, DatasetMeta, EmbedDistTable, LoggedDataset,
    LoggedSample, PolicyMatrix, PolicyTag, SupportCheck,
};
pub use oracle::{
    analytic_variance_dr, analytic_variance_ips, check_no_direct_effect, monte_carlo_eval,
    replication_estimates, true_value, variance_gap_mdr, EstimatorName, EstimatorReport, EvalPlan,
    EvalReport, OracleValue, QhatSpec, VarianceGap, VisitationMode,
};
pub use regression::{
    fit_reward_model, marginalize_by_enumeration, marginalize_model, FeatureConfig,
    MarginalizedModel, RewardModel,
};
pub use sweep::{
    emit_report, parse_config, run_sweep, QhatMode, ResultRow, ResultTable, SweepConfig,
};
