//! Run configuration, checkpoints, the training loop and the top-level
//! commands behind the CLI.

mod checkpoint;
mod commands;
mod config;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint,
    CheckpointIndex, TensorEntry, CHECKPOINT_MAGIC,
};
pub use commands::{
    annotate, cmd_decode, cmd_eval, cmd_gen, cmd_report, cmd_train, render_summary, threads_from_env,
    EvalFiles, THREADS_ENV,
};
pub use config::{DataConfig, Paths, RunConfig, Seeds, TrainConfig};
pub use train::{read_log, train, LogLine, TrainOutcome, Trainer, CHECKPOINT_FILE, LOG_FILE};

#[cfg(test)]
mod tests;
