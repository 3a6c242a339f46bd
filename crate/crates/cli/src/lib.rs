//! Library side of the `dfl` command: configuration, the subcommands and
//! report rendering.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

pub use commands::{cmd_compare, cmd_defaults, cmd_report, cmd_run, cmd_validate, RunManifest, RunOptions, RunOutcome};
pub use config::RunConfig;
pub use error::{CmdResult, Failure};
pub use report::{NodeView, ReportFormat};
