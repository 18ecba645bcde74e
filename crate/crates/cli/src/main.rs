//! `crossid`: simulation, ingestion, shift audit, training and reporting.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage error
//! (bad flags, missing input files, refused output collisions).

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use output::UsageError;

#[derive(Parser, Debug)]
#[command(name = "crossid", version, about = "Cross-camera identification with disentangled adaptation")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Seed; overrides the seed in the generator spec or config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, or output file for mmd-test.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    /// Log filter, e.g. `info`, `debug`, `crossid_core=trace`.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic multi-camera dataset with ground-truth latents.
    Simulate(commands::SimulateArgs),
    /// Link detections into per-camera trajectories by adjacent-frame Dice overlap.
    Associate(commands::AssociateArgs),
    /// Pairwise MMD permutation tests between cameras.
    MmdTest(commands::MmdTestArgs),
    /// Train one task with the configured target camera held out.
    Train(commands::TrainArgs),
    /// Leave-one-camera-out suite over every camera and method.
    Loco(commands::LocoArgs),
    /// Evaluate a checkpoint on a target camera's labeled samples.
    Evaluate(commands::EvaluateArgs),
    /// Render the accuracy table and confusion heatmaps of a loco report.
    Report(commands::ReportArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.global.log_level)
        .format_timestamp(None)
        .init();

    let start = Instant::now();
    let g = &cli.global;
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(g, a),
        Command::Associate(a) => commands::associate(g, a),
        Command::MmdTest(a) => commands::mmd_test(g, a),
        Command::Train(a) => commands::train(g, a),
        Command::Loco(a) => commands::loco(g, a),
        Command::Evaluate(a) => commands::evaluate(g, a),
        Command::Report(a) => commands::report(g, a),
    };
    match result {
        Ok(artifacts) => {
            for p in &artifacts {
                output::emit(&format!("wrote {}\n", p.display()));
            }
            log::info!("done in {:.2}s", start.elapsed().as_secs_f64());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
