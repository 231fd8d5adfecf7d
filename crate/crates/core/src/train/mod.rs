//! Training: schedules, optimizer, loop, metrics and checkpoints.

pub mod checkpoint;
pub mod metrics;
pub mod schedule;
pub mod sgd;
pub mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use metrics::Evaluation;
pub use schedule::{dropout_rate_for_block, lr_at, DecayMode};
pub use sgd::{sgd_update, Sgd};
pub use trainer::{evaluate, metrics_csv, train, train_with, MetricsRecord, TrainConfig};
