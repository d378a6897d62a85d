//! `yieldgraph`: aggregate rasters, synthesize data, train, evaluate and
//! benchmark county-level yield models.
//!
//! Every subcommand reads `key = value` settings from `--config FILE` and
//! from trailing `--key value` flags (flags win), refuses a non-empty
//! output directory without `--force`, and writes the resolved settings to
//! `config.txt` in its output directory.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Common;
use config::{CliError, EXIT_INPUT};

#[derive(Parser)]
#[command(name = "yieldgraph", version, about = "County-level crop yield prediction with graph and recurrent models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Plain-text `key = value` settings file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Settings as `--key value` pairs.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    settings: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Raster-to-county aggregation. Keys: raster_dir, weights, manifest,
    /// landcover (optional ASCII grid of agland fractions), year, out.
    Aggregate(CommonArgs),
    /// Seeded synthetic dataset. Keys: n_counties, n_years, seed, first_year,
    /// missing_yield_frac, unlabeled_counties, missing_cell_frac, out.
    Synth(CommonArgs),
    /// Train one model. Keys: data, kind, crop, test_year, preset (published or
    /// desk), out, and any model setting (schedule, batch_size, epochs, ...).
    Train(CommonArgs),
    /// Score a checkpoint on its test year. Keys: checkpoint, data, early, out.
    Evaluate(CommonArgs),
    /// Methods × seeds comparison table. Keys: data, kinds, seeds, test_year,
    /// crop, preset, epochs, early, out.
    Benchmark(CommonArgs),
}

fn threads_from_env() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("YIELDGRAPH_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::input(format!("YIELDGRAPH_THREADS must be a positive integer, got `{v}`")))?;
        yieldgraph::par::init_thread_pool(n);
    }
    Ok(())
}

/// `--force` and `--config` may also appear among the trailing settings.
fn split_args(args: CommonArgs) -> Result<Common, CliError> {
    let mut common = Common {
        config: args.config,
        force: args.force,
        overrides: Vec::new(),
    };
    let mut it = args.settings.into_iter();
    while let Some(t) = it.next() {
        if t == "--force" {
            common.force = true;
        } else if t == "--config" {
            let p = it.next().ok_or_else(|| CliError::input("`--config` needs a path"))?;
            common.config = Some(PathBuf::from(p));
        } else if let Some(p) = t.strip_prefix("--config=") {
            common.config = Some(PathBuf::from(p));
        } else {
            common.overrides.push(t);
        }
    }
    Ok(common)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (run, args): (fn(&Common) -> Result<(), CliError>, CommonArgs) = match cli.command {
        Command::Aggregate(a) => (commands::aggregate, a),
        Command::Synth(a) => (commands::synth, a),
        Command::Train(a) => (commands::train, a),
        Command::Evaluate(a) => (commands::evaluate_cmd, a),
        Command::Benchmark(a) => (commands::benchmark, a),
    };
    match split_args(args).and_then(|c| threads_from_env().and_then(|_| run(&c))) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.code == 0 { EXIT_INPUT } else { e.code })
        }
    }
}
