//! Experiment runner: every subcommand reads one JSON config and writes its
//! artifacts under a run directory named by the config hash.

pub mod commands;
pub mod config;
mod error;
mod stats_input;

pub use commands::{
    cmd_calibrate, cmd_compose_wild, cmd_evaluate, cmd_flag_noise, cmd_report, cmd_synth, cmd_train, Run, Stamped,
};
pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
