//! Prior imitation (Phase 1) and PPO fine-tuning (Phase 2) of the step policy.

mod gae;
mod phase1;
mod ppo;

pub use gae::compute_gae;
pub use phase1::{cross_entropy, policy_marginals, pretrain_phase1, Phase1Config, Phase1Output};
pub use ppo::{
    categorical_kl, clipped_surrogate, collect_trajectory, kl_to_reference, train_phase2,
    MetricsRow, Phase2Output, PpoConfig, Trajectory, TrajectoryStep, TrainSetup,
};
