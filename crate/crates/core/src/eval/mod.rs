//! Reference values for testing and regret accounting.
//!
//! Exact evaluation runs the backward recursion on augmented states;
//! Monte-Carlo oracles simulate the same quantities from the model.

mod exact;
mod experiment;
mod mc;
mod policy;
mod report;

pub use experiment::{
    run_experiment, EngineKind, EngineSettings, ExperimentConfig, ExperimentSummary,
    LearnerSettings, ModelSource, OracleSettings, RegretShape, SeedSummary,
};
pub use report::{regret_svg, SeedCurve};
pub use exact::{exact_policy_value, RegretOracle, SequencePolicyEvaluator};
pub use mc::{
    mc_k_decomposition, mc_k_value, mc_policy_value, rollout_horizon, KDecomposition, McEstimate,
    MC_TAIL_TOL,
};
pub use policy::{AugmentedPolicy, CommittedSequencePolicy, FnPolicy};
