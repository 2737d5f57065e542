//! Tabular simulated-interaction toolkit: finite MDPs with frozen
//! connectivity, simulated user behaviors, reward recovery from scored
//! trajectories, and the plus-construction optimizer that retargets a
//! system's transition structure at the recovered objective.

pub mod error;
pub mod eval;
pub mod graph;
pub mod irl;
pub mod iso;
pub mod mdp;
pub mod persist;
pub mod reward;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod trajectory;

pub use error::{CoreError, Result};
pub use eval::{expected_start_value, policy_evaluation, policy_transition_matrix};
pub use graph::ConnectivityGraph;
pub use irl::{
    dm_irl, empirical_feature_counts, empirical_start_frequency, forward_occupancy, maxent_irl,
    recovery_quality, MaxEntConfig, RecoveryReport,
};
pub use iso::{
    build_mdp_plus, extract_transition, induced_plus_policy, iso_iteration, iso_loop,
    plus_policy_value, solve_mdp_plus, IsoConfig, IterationRecord, MdpPlus, PlusSolution,
    Recoverer,
};
pub use mdp::{
    FiniteMdp, InitialDistribution, PolicyTable, TransitionTable, ValidationReport, Violation,
};
pub use persist::{
    load_dataset, save_dataset, save_labeled_dataset, to_document_json, FeatureMapDoc,
    PolicyDocument, SystemDocument,
};
pub use reward::{FeatureMap, RewardModel};
pub use rng::{derive_seed, sample_categorical, seeded_rng, trajectory_rng};
pub use sim::{
    adversarial_policy, label_dataset, sample_dataset, sample_trajectory, soft_solution,
    soft_value_iteration, BehaviorKind, BehaviorSpec, DatasetSpec, SoftSolution,
};
pub use stats::{median, pearson, quantile, spearman};
pub use trajectory::{discounted_feature_sum, LabeledTrajectory, Trajectory};
