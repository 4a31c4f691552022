//! Tabular learner, stage rule, and trainers.

pub mod model;
pub mod stage;
pub mod trainer;

pub use model::{softmax, Gradients, TabularMDM};
pub use stage::{advance_stage, next_reveal_count, reveal_count_distribution, reveal_count_for_ratio, stage_of, KSchedule};
pub use trainer::{mask_after_prompt, vanilla_train_step, ChainState, PumaBuffer, PumaTrainer, StepStats};
