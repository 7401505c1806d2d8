//! Command-line front end.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use config::{data_root, DatasetSpec, RunConfig, Settings};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0:#}")]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

#[derive(Debug, Parser)]
#[command(name = "rankforge", version, about = "Cold-start learning-to-rank recommenders")]
pub struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load a dataset, encode its descriptors and export it as generic CSV.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Write train/validation/test fold masks.
    Split {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        split: SplitArgs,
    },
    /// Train a model on one fold.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        fold: FoldArgs,
    },
    /// Score a fold's test users with a model or a memory baseline.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        fold: FoldArgs,
        /// Model file (default <out>/model.json).
        #[arg(long)]
        model_file: Option<String>,
        /// Comma-separated NDCG cutoffs.
        #[arg(long)]
        ks: Option<String>,
    },
    /// Per-user wins and losses of report A over report B with McNemar p-values.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        a: Option<String>,
        #[arg(long)]
        b: Option<String>,
        #[arg(long)]
        ks: Option<String>,
    },
    /// Select (mu1, mu2) by inner cross-validation on a fold's training part.
    Gridsearch {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        fold: FoldArgs,
        /// Grid preset: movielens or meta-mining.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        mu1_grid: Option<String>,
        #[arg(long)]
        mu2_grid: Option<String>,
        #[arg(long)]
        inner_folds: Option<String>,
        #[arg(long)]
        valid_fraction: Option<String>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// INI config files, applied in order before the flags.
    #[arg(long)]
    config: Vec<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    seed: Option<String>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// ml100k, ml1m or generic.
    #[arg(long)]
    dataset: Option<String>,
    /// Dataset directory (default $RANKFORGE_DATA/<dataset>).
    #[arg(long)]
    data_dir: Option<String>,
    #[arg(long)]
    ratings: Option<String>,
    #[arg(long)]
    user_features: Option<String>,
    #[arg(long)]
    item_features: Option<String>,
    /// Rescale generic scores linearly so the largest becomes this value.
    #[arg(long)]
    rescale_to: Option<String>,
}

#[derive(Debug, Args)]
struct SplitArgs {
    /// matrix-completion, user-cold-start or full-cold-start.
    #[arg(long)]
    kind: Option<String>,
    /// Share of users used for training.
    #[arg(long)]
    fraction: Option<String>,
    /// One fold per user instead of a fraction split.
    #[arg(long)]
    leave_one_out: bool,
    #[arg(long)]
    item_fraction: Option<String>,
    #[arg(long)]
    train_items: Option<String>,
    #[arg(long)]
    valid_items: Option<String>,
    /// Share of training users held out for early stopping.
    #[arg(long)]
    valid_fraction: Option<String>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// ub, fb, lm, lmw, lm-mf or lm-mf-reg.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    max_trees: Option<String>,
    #[arg(long)]
    patience: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    truncation: Option<String>,
    #[arg(long)]
    max_leaves: Option<String>,
    #[arg(long)]
    min_leaf_fraction: Option<String>,
    #[arg(long)]
    rank: Option<String>,
    #[arg(long)]
    mu1: Option<String>,
    #[arg(long)]
    mu2: Option<String>,
    #[arg(long)]
    neighbors: Option<String>,
}

#[derive(Debug, Args)]
struct FoldArgs {
    /// Directory of fold files (default folds).
    #[arg(long)]
    folds: Option<String>,
    #[arg(long)]
    fold: Option<String>,
}

fn put(s: &mut Settings, key: &str, v: &Option<String>) -> Result<(), CliError> {
    match v {
        Some(v) => s.set(key, v.clone()),
        None => Ok(()),
    }
}

impl Common {
    fn settings(&self) -> Result<Settings, CliError> {
        let mut s = Settings::default();
        for path in &self.config {
            s.merge(&Settings::load(path)?);
        }
        put(&mut s, "out", &self.out)?;
        put(&mut s, "seed", &self.seed)?;
        Ok(s)
    }
}

impl DataArgs {
    fn apply(&self, s: &mut Settings) -> Result<(), CliError> {
        put(s, "dataset", &self.dataset)?;
        put(s, "data-dir", &self.data_dir)?;
        put(s, "ratings", &self.ratings)?;
        put(s, "user-features", &self.user_features)?;
        put(s, "item-features", &self.item_features)?;
        put(s, "rescale-to", &self.rescale_to)
    }
}

impl SplitArgs {
    fn apply(&self, s: &mut Settings) -> Result<(), CliError> {
        put(s, "kind", &self.kind)?;
        put(s, "fraction", &self.fraction)?;
        if self.leave_one_out {
            s.set("leave-one-out", "true")?;
        }
        put(s, "item-fraction", &self.item_fraction)?;
        put(s, "train-items", &self.train_items)?;
        put(s, "valid-items", &self.valid_items)?;
        put(s, "valid-fraction", &self.valid_fraction)
    }
}

impl ModelArgs {
    fn apply(&self, s: &mut Settings) -> Result<(), CliError> {
        put(s, "method", &self.method)?;
        put(s, "eta", &self.eta)?;
        put(s, "max-trees", &self.max_trees)?;
        put(s, "patience", &self.patience)?;
        put(s, "sigma", &self.sigma)?;
        put(s, "truncation", &self.truncation)?;
        put(s, "max-leaves", &self.max_leaves)?;
        put(s, "min-leaf-fraction", &self.min_leaf_fraction)?;
        put(s, "rank", &self.rank)?;
        put(s, "mu1", &self.mu1)?;
        put(s, "mu2", &self.mu2)?;
        put(s, "neighbors", &self.neighbors)
    }
}

impl FoldArgs {
    fn apply(&self, s: &mut Settings) -> Result<(), CliError> {
        put(s, "folds", &self.folds)?;
        put(s, "fold", &self.fold)
    }
}

fn dispatch(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Ingest { common, data } => {
            let mut s = common.settings()?;
            data.apply(&mut s)?;
            commands::ingest(&RunConfig::resolve(&s)?)
        }
        Command::Split { common, data, split } => {
            let mut s = common.settings()?;
            data.apply(&mut s)?;
            split.apply(&mut s)?;
            commands::split(&RunConfig::resolve(&s)?)
        }
        Command::Train {
            common,
            data,
            model,
            fold,
        } => {
            let mut s = common.settings()?;
            data.apply(&mut s)?;
            model.apply(&mut s)?;
            fold.apply(&mut s)?;
            commands::train(&RunConfig::resolve(&s)?)
        }
        Command::Evaluate {
            common,
            data,
            model,
            fold,
            model_file,
            ks,
        } => {
            let mut s = common.settings()?;
            data.apply(&mut s)?;
            model.apply(&mut s)?;
            fold.apply(&mut s)?;
            put(&mut s, "model", model_file)?;
            put(&mut s, "ks", ks)?;
            commands::evaluate(&RunConfig::resolve(&s)?)
        }
        Command::Compare { common, a, b, ks } => {
            let mut s = common.settings()?;
            put(&mut s, "report-a", a)?;
            put(&mut s, "report-b", b)?;
            put(&mut s, "ks", ks)?;
            commands::compare(&RunConfig::resolve(&s)?)
        }
        Command::Gridsearch {
            common,
            data,
            model,
            fold,
            grid,
            mu1_grid,
            mu2_grid,
            inner_folds,
            valid_fraction,
        } => {
            let mut s = common.settings()?;
            data.apply(&mut s)?;
            model.apply(&mut s)?;
            fold.apply(&mut s)?;
            put(&mut s, "grid", grid)?;
            put(&mut s, "mu1-grid", mu1_grid)?;
            put(&mut s, "mu2-grid", mu2_grid)?;
            put(&mut s, "inner-folds", inner_folds)?;
            put(&mut s, "valid-fraction", valid_fraction)?;
            commands::gridsearch(&RunConfig::resolve(&s)?)
        }
    }
}

/// Parse the process arguments, run the command and map the outcome to an
/// exit code.
pub fn run() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
