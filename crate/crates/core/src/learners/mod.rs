//! Training strategies sharing one network, optimizer and replay buffer.

mod config;
mod learner;
mod plan;

pub use config::{Ablation, LearnerConfig, Method, Mining};
pub use learner::Learner;
pub use plan::StepPlan;
