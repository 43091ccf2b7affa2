//! Experiment harness behind the `diopt` binary: dataset generation and
//! labeling, training, evaluation, sweeps, and CSV reporting.

mod cli;
pub mod ops;
pub mod report;

pub use cli::{ablate_files, eval_files, init_threads, is_usage_error, out_dir, run, train_files, Cli, Command, ConfigArgs, TrainMethod};
