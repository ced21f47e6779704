//! Adam, the training loop, checkpoints and the ablation harness.

mod ablation;
mod adam;
mod checkpoint;
mod train;

pub use ablation::{ablation_variants, evaluate, run_ablation, AblationReport, AblationRow};
pub use adam::OptimizerState;
pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use train::{epoch_order, read_loss_curve, train, write_loss_curve, StepRecord, TrainConfig, Trainer};
