//! Command-line driver: fit, score, eval, diagnose and synth subcommands.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{cmd_diagnose, cmd_eval, cmd_fit, cmd_score, cmd_synth};
pub use config::{Overrides, RunConfig};
pub use error::{CliError, CliResult};
