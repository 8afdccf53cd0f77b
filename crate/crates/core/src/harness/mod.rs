//! Training, checkpoints, evaluation, sweeps and plotting.

pub mod checkpoint;
pub mod config;
pub mod evaluate;
pub mod plot;
pub mod sweep;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{Ablation, RunConfig, TrainConfig};
pub use evaluate::{evaluate, evaluate_model, prepare_data, run, run_stages, Report, RunOutcome, Stages};
pub use sweep::{sweep, SweepConfig, SweepGrid, SweepRow};
pub use train::{init_model, train_stage1, train_stage2, LogRecord, TrainLog};
