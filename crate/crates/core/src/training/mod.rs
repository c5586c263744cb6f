//! The objective, the optimiser, the epoch loop, checkpoints and the ablation harness.

mod ablation;
mod adam;
mod checkpoint;
mod gradcheck;
mod loss;
mod trainer;

pub use ablation::{ablation_configs, ablation_table, run_ablation, run_ablation_with, AblationResult};
pub use adam::{adam_step, clip_grad_norm, AdamState};
pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use gradcheck::{gradient_suite, ComponentCheck, GRADCHECK_STEP, GRADCHECK_TOLERANCE};
pub use loss::{mae_loss, total_loss, LossBreakdown};
pub use trainer::{init_seed, model_config_for, train, EpochRecord, History, TrainOutcome, EVAL_BATCH};
