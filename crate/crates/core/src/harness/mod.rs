//! Training loop, configuration, evaluation, metrics and checkpoints.

mod checkpoint;
mod config;
mod metrics;
mod trainer;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for_task, save_checkpoint, MAGIC,
};
pub use config::{Ablation, Algo, TrainConfig};
pub use metrics::{metrics_csv, read_metrics_csv, steps_to_threshold, write_metrics_csv, MetricsRow, CSV_HEADER};
pub use trainer::{
    eval_seed, evaluate, run_ablation, train, Controller, FnController, InvocationCounts, TrainOutcome, Trainer,
    CHECKPOINT_FILE, CONFIG_FILE, METRICS_FILE,
};
