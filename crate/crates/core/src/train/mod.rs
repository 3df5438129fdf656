//! MSE objective, Adam, the training loop, checkpoints and ablations.

mod ablation;
mod adam;
mod checkpoint;
mod config;
mod loss;
mod trainer;

pub use ablation::{block_sweep, run_ablation, AblationCurve, Variant};
pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, Progress, FORMAT_VERSION,
    MAGIC,
};
pub use config::TrainConfig;
pub use loss::mse_loss;
pub use trainer::{
    epoch_checkpoint_name, render_log, run, split_indices, train, LogRow, Subset, TrainOutput, TrainSummary, Trainer,
    LOG_HEADER,
};
