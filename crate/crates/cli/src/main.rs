//! `nrkg`: data generation, graph building, training, evaluation and export.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nrkg::eval::SweepAxis;

#[derive(Parser, Debug)]
#[command(
    name = "nrkg",
    version,
    about = "Numerical reasoning over cross-modal knowledge graphs"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Seed for every random choice; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Flat TOML config (a synthetic spec for `gen`).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory; nothing is written elsewhere.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Overrides one config key.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Generate synthetic records with a known ground truth.
    Gen,
    /// Build the cross-modal graph from records and dump it as JSON.
    BuildKg {
        /// Records file (CSV or JSON lines).
        #[arg(long, value_name = "FILE")]
        records: Option<PathBuf>,
    },
    /// Train one fold and save its checkpoint.
    Train {
        /// Records file (CSV or JSON lines).
        #[arg(long, value_name = "FILE")]
        records: Option<PathBuf>,
        /// Number of folds the records are split into [default: 6].
        #[arg(long)]
        folds: Option<usize>,
        /// Fold to train; `cv` with the same seed trains the same model.
        #[arg(long)]
        fold: Option<usize>,
    },
    /// k-fold cross-validation.
    Cv {
        /// Records file (CSV or JSON lines).
        #[arg(long, value_name = "FILE")]
        records: Option<PathBuf>,
        /// Number of folds [default: 6].
        #[arg(long)]
        folds: Option<usize>,
        /// Also score link prediction for this relation.
        #[arg(long)]
        link_relation: Option<String>,
        /// Monte Carlo trials of the random baselines [default: 100].
        #[arg(long)]
        baseline_trials: Option<usize>,
        /// Folds trained at once; 0 reads NRKG_THREADS or uses every core.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Cross-validate once per value of one hyperparameter.
    Sweep {
        /// Records file (CSV or JSON lines).
        #[arg(long, value_name = "FILE")]
        records: Option<PathBuf>,
        /// Hyperparameter to vary.
        #[arg(long, value_enum)]
        axis: Option<AxisArg>,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Option<Vec<f64>>,
        /// Number of folds [default: 6].
        #[arg(long)]
        folds: Option<usize>,
        /// Folds trained at once; 0 reads NRKG_THREADS or uses every core.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Predict targets of new records with a trained checkpoint.
    Predict {
        /// Checkpoint written by `train` or `cv`.
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// The graph the checkpoint was trained on: a `build-kg` dump or its records.
        #[arg(long, value_name = "FILE")]
        graph: Option<PathBuf>,
        /// Records to predict.
        #[arg(long, value_name = "FILE")]
        records: Option<PathBuf>,
    },
    /// Rank candidate tokens for the records a checkpoint did not train on.
    Linkpred {
        /// Checkpoint written by `train` or `cv`.
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// The full graph: a `build-kg` dump or records.
        #[arg(long, value_name = "FILE")]
        graph: Option<PathBuf>,
        /// Relation whose tokens are ranked.
        #[arg(long)]
        relation: Option<String>,
        /// Monte Carlo trials of the random baselines [default: 100].
        #[arg(long)]
        baseline_trials: Option<usize>,
    },
    /// Write the projected embedding of every node as TSV.
    Export {
        /// Checkpoint written by `train` or `cv`.
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// A `build-kg` dump or records.
        #[arg(long, value_name = "FILE")]
        graph: Option<PathBuf>,
    },
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum AxisArg {
    GammaA,
    GammaB,
    MaskFraction,
}

impl From<AxisArg> for SweepAxis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::GammaA => SweepAxis::GammaA,
            AxisArg::GammaB => SweepAxis::GammaB,
            AxisArg::MaskFraction => SweepAxis::MaskFraction,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let usage = e.downcast_ref::<commands::UsageError>().is_some();
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
