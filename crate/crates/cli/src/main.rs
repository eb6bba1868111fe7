mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ventrate_core::seed::DEFAULT_SEED;

#[derive(Debug, Parser)]
#[command(name = "ventrate", version, about = "Fish ventilation-rate estimation from mouth-state detections")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Global seed; every randomized step derives its own stream from it.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Frame rate override.
    #[arg(long, global = true)]
    pub fps: Option<f64>,
    /// Key-value file with subcommand parameters.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Parameter override `key=value`; repeatable, wins over --config.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Detect,
    Track,
    Rates,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic pen: stream.jsonl, truth.jsonl, camera.csv.
    Synth {
        #[arg(long)]
        n_fish: Option<usize>,
        #[arg(long)]
        vr_median: Option<f64>,
        /// Detector noise preset: none or moderate.
        #[arg(long)]
        noise: Option<String>,
    },
    /// Track a detection stream into tracks.jsonl.
    Track { stream: PathBuf },
    /// Estimate per-track rates and the pen report.
    Estimate {
        tracks: PathBuf,
        #[arg(long)]
        source_id: Option<String>,
    },
    /// Score predictions against a truth file.
    Eval {
        #[arg(long, value_enum)]
        mode: EvalMode,
        /// Stream (detect) or tracks file (track, rates).
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Estimates for the predicted tracks (rates mode).
        #[arg(long)]
        estimates: Option<PathBuf>,
    },
    /// Corruption experiment over several pens.
    Corrupt {
        #[arg(long)]
        kind: Option<String>,
        /// Pen as `name=role:tracks.jsonl`, role normal, high or other.
        #[arg(long = "pen", required = true)]
        pens: Vec<String>,
    },
    /// Keep every n-th frame of a tracks file.
    Downsample {
        tracks: PathBuf,
        #[arg(long, default_value_t = 2)]
        factor: u32,
    },
    /// Compare two pens' estimated rates.
    Compare { a: PathBuf, b: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let g = &cli.global;
    let result = match cli.command {
        Command::Synth { n_fish, vr_median, noise } => commands::synth(g, n_fish, vr_median, noise),
        Command::Track { stream } => commands::track(g, &stream),
        Command::Estimate { tracks, source_id } => commands::estimate(g, &tracks, source_id),
        Command::Eval {
            mode,
            preds,
            truth,
            estimates,
        } => commands::eval(g, mode, &preds, &truth, estimates.as_deref()),
        Command::Corrupt { kind, pens } => commands::corrupt(g, kind, &pens),
        Command::Downsample { tracks, factor } => commands::downsample(g, &tracks, factor),
        Command::Compare { a, b } => commands::compare(g, &a, &b),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
