//! Joint optimization: per-step supervised loss for the enhancer, REINFORCE
//! with a moving-average baseline for the policy, both under ADAM.

mod adam;
mod objective;
mod reward;
mod train;

pub use adam::{adam_step, AdamMoments, AdamState, OptimizerConfig};
pub use objective::{enhancement_gradient, enhancement_loss, reinforce_gradient};
pub use reward::{terminal_reward, update_baseline, BaselineState, RewardSpec};
pub use train::{
    train, CsvLog, History, IterationStats, Observers, Schedule, TrainConfig, TrainObserver,
    TrainState,
};
