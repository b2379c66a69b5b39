//! Configuration-driven experiment runner for `safebac`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod replay;
pub mod run;

pub use config::{Experiment, ExperimentConfig};
pub use error::{CliError, CliResult};
pub use replay::{replay, ReplayReport};
pub use run::{run, run_config, RunOptions, RunOutput, Summary};
