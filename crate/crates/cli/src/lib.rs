//! Config parsing and the `run`, `eval`, `compare` and `export-samples`
//! commands behind the `ocp-adaptive` binary.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{cmd_compare, cmd_eval, cmd_export_samples, cmd_run, output_root, run_dir, OUT_ENV};
pub use config::{parse_config, parse_config_str, RunConfig};
pub use error::{CliError, Result};
