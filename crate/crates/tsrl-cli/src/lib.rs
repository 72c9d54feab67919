//! Experiment harness around `tsrl-core`: run configs, checkpoints, metrics
//! files, and the train / eval / aggregate / plot / gradcheck commands.

pub mod aggregate;
pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod gradcheck;
pub mod metrics;
pub mod plot;
pub mod train;

pub use aggregate::{aggregate_runs, cmd_aggregate, AggregateRow};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, LoadedCheckpoint};
pub use config::RunConfig;
pub use eval::cmd_eval;
pub use gradcheck::{cmd_gradcheck, run_suite, GradcheckReport};
pub use metrics::{read_metrics, MetricsFile, MetricsWriter};
pub use plot::cmd_plot;
pub use train::{cmd_train, TrainOutcome};
