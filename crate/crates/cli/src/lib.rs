//! The `sccor` command-line tool. The binaries are thin wrappers over
//! [`main`].
//!
//! Exit codes: 0 success, 1 a check failed, 2 usage or input error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Failure;

#[derive(Parser, Debug)]
#[command(name = "sccor", version, about = "Shadow-consistent correspondence tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score predicted shadow masks against ground truth.
    Eval {
        /// Prediction root, laid out as `<video>/<frame>.png`.
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth root with the same layout.
        #[arg(long)]
        gt: PathBuf,
        /// Flow root holding `<video>/<frame>_to_<next>.flo`. Without it,
        /// flow is estimated by block matching on the ground truth.
        #[arg(long)]
        flows: Option<PathBuf>,
        /// Where to write the report.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = sccor::metrics::DEFAULT_BETA2)]
        beta2: f64,
        #[arg(long, default_value_t = sccor::metrics::DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Train the toy extractor on synthetic clips.
    TrainToy {
        /// Flat `key=value` config; the bundled default is used when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// `key=value` applied over the config. Repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Shorthand for `--override seed=N`; wins over both.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for `report.txt` and `losses.csv`.
        #[arg(long, default_value = "toy-run")]
        out: PathBuf,
    },
    /// Compare analytical gradients with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Percentage of source shadow cells whose best match lies in the target
    /// shadow.
    CorrRatio {
        feat_a: PathBuf,
        feat_b: PathBuf,
        mask_a: PathBuf,
        mask_b: PathBuf,
    },
    /// Write the synthetic benchmark clips as images and flow files.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn with_seed(mut overrides: Vec<String>, seed: Option<u64>) -> Vec<String> {
    overrides.extend(seed.map(|s| format!("seed={s}")));
    overrides
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Eval {
            pred,
            gt,
            flows,
            out,
            beta2,
            threshold,
        } => commands::eval(&pred, &gt, flows.as_deref(), out.as_deref(), beta2, threshold),
        Command::TrainToy {
            config,
            overrides,
            seed,
            out,
        } => commands::train_toy(config.as_deref(), &with_seed(overrides, seed), &out),
        Command::Gradcheck { seed, trials } => commands::gradcheck(seed, trials),
        Command::CorrRatio {
            feat_a,
            feat_b,
            mask_a,
            mask_b,
        } => commands::corr_ratio(&feat_a, &feat_b, &mask_a, &mask_b),
        Command::GenData {
            config,
            overrides,
            seed,
            out,
        } => commands::gen_data(config.as_deref(), &with_seed(overrides, seed), &out),
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
