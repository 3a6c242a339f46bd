use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dfl_cli::config::SEED_ENV;
use dfl_cli::{cmd_compare, cmd_defaults, cmd_report, cmd_run, cmd_validate, CmdResult, ReportFormat, RunOptions};

/// Decentralized federated learning simulator.
#[derive(Parser)]
#[command(name = "dfl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its run directory.
    Run {
        /// TOML configuration; defaults apply to missing keys.
        #[arg(long, short)]
        config: Option<PathBuf>,
        /// Dotted-key override, e.g. `--set hyper.learning_rate=0.1`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Check a schedule against a graph.
    ValidateSchedule {
        /// Graph file, or `reference`.
        #[arg(long, default_value = "reference")]
        graph: String,
        /// Schedule file, or A, B, C.
        #[arg(long)]
        schedule: String,
    },
    /// Render the per-node table, series files and chart for a metrics file.
    Report {
        /// metrics.csv, metrics.json or a run directory.
        metrics: PathBuf,
        #[arg(long, default_value = "text")]
        format: ReportFormat,
        /// Output directory (default: `report/` beside the metrics).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize several run directories side by side.
    Compare {
        #[arg(required = true, num_args = 2..)]
        dirs: Vec<PathBuf>,
    },
    /// Print the documented default configuration.
    Defaults,
}

fn dispatch(cmd: Command) -> CmdResult<u8> {
    let mut out = std::io::stdout().lock();
    match cmd {
        Command::Run { config, overrides } => {
            let opts = RunOptions { config, overrides, env_seed: std::env::var(SEED_ENV).ok() };
            cmd_run(&opts, &mut out).map(|_| 0)
        }
        Command::ValidateSchedule { graph, schedule } => cmd_validate(&graph, &schedule, &mut out),
        Command::Report { metrics, format, out: dir } => cmd_report(&metrics, format, dir.as_deref(), &mut out).map(|_| 0),
        Command::Compare { dirs } => cmd_compare(&dirs, &mut out).map(|_| 0),
        Command::Defaults => cmd_defaults(&mut out).map(|_| 0),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let _ = std::io::stdout().flush();
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
