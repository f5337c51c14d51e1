//! Joint training of the flat and graph modules, prediction and
//! checkpointing.

mod checkpoint;
mod model;
mod optim;
mod trainer;

pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, MAGIC, VERSION};
pub use model::{Decisions, Forward, Hyperparams, LossVars, Model, Targets};
pub use optim::{AdamState, GradBuffer, Optimizer, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use trainer::{EpochMetrics, StepLoss, TrainSummary, Trainer};
