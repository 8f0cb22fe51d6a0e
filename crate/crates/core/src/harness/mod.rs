//! Gradient checking, synthetic tasks, training and length-generalization
//! evaluation.

pub mod gradcheck;
pub mod task;
pub mod train;

pub use gradcheck::{gradcheck, GradcheckReport, ModelKind};
pub use task::{make_task, TaskKind, TaskSpec, PAD_LABEL};
pub use train::{eval_length_generalization, train, Model, TrainConfig, TrainOutcome};
