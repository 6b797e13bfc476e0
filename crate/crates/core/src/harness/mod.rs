//! Training, the set-wise evaluation protocol, metrics, checkpoints and the
//! ablation runner.

pub mod ablation;
mod checkpoint;
mod config;
mod evaluate;
pub mod metrics;
mod partition;
pub mod plot;
mod train;

pub use ablation::{ablation_run, default_arms, parse_ablation_config, Arm, MedianRow, MetricsReport, MetricsRow};
pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{LrDecay, RunConfig};
pub use evaluate::{evaluate, evaluate_partition, CroppedModel, Evaluation, SetScorer};
pub use metrics::{average_ranks, median, pearson, spearman};
pub use partition::{partition_test, ImageRef, Partition};
pub use train::{steps_per_epoch, train, train_with, EpochStats};
