use std::ops::Range;
use std::path::PathBuf;
use std::process::ExitCode;

use autosem_cli::commands::{self, parse_seed_range, RunOptions};
use autosem_core::Mode;
use clap::{Parser, Subcommand};

/// Auxiliary-task selection and mixing-ratio search for multi-task training.
#[derive(Parser)]
#[command(name = "autosem", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run both stages and write logs, report and utility table.
    Run {
        /// TOML run configuration.
        config: PathBuf,
        /// Overrides `mode`: full, no_stage1 or no_stage2.
        #[arg(long)]
        mode: Option<Mode>,
        /// Overrides `seed` and drops explicit per-stage seeds.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory; defaults to `$AUTOSEM_OUT/<name>` or `<output.root>/<name>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write into a non-empty run directory.
        #[arg(long)]
        force: bool,
        /// Run each seed of `a..b` in its own worker process under `seed-<k>/`.
        #[arg(long, value_parser = parse_seed_range, conflicts_with = "seed")]
        seeds: Option<Range<u64>>,
    },
    /// Write the Beta density of each task's utility as CSV.
    PlotUtilities {
        /// Stage-1 log, or the run directory holding it.
        log: PathBuf,
        #[arg(long, default_value_t = 100)]
        grid: usize,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a recorded run and check its logs are reproduced exactly.
    Replay {
        /// Run directory, or any file inside it.
        path: PathBuf,
    },
    /// Check a config file and print its normalized form.
    ValidateConfig { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Run { config, mode, seed, out, force, seeds } => {
            commands::run(&RunOptions { config, mode, seed, out, force, seeds })
        }
        Cmd::PlotUtilities { log, grid, out } => commands::plot_utilities(&log, grid, out.as_deref()),
        Cmd::Replay { path } => commands::replay(&path),
        Cmd::ValidateConfig { config } => commands::validate_config(&config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("autosem: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
