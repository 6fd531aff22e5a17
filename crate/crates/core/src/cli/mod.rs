//! The `dcf` experiment runner.
//!
//! ```text
//! dcf prepare  --input u.data --format movielens-100k --seed 7 --noise-rate 0.2 --out data/ml
//! dcf train    --input data/ml --method dcf --R 0.01 --O 10 --sigma2 0.01 --v 3 --seeds 5 --out runs
//! dcf evaluate --input data/ml --checkpoint runs/train-…/seed-0/model.ckpt --K 5,10,20
//! dcf sweep    --input data/ml --R 0,0.01,0.03 --sigma2 0,0.01 --v 1,3 --out runs
//! dcf rq3      --input data/ml --hard-set runs/train-…/seed-0/hard_samples.json --out runs
//! dcf rq4      --input data/syn --out runs
//! ```

mod artifacts;
mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::denoise::{Method, RelabelSchedule};
use crate::error::Result;
use config::{ConfigFile, List, Overrides};

pub use artifacts::{read_prepared, write_prepared, DatasetManifest};

#[derive(Parser, Debug)]
#[command(name = "dcf", version, about = "Denoising trainer for implicit-feedback recommendation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Split raw interactions, optionally inject noise, and write a dataset directory.
    Prepare(PrepareArgs),
    /// Train one method for each seed and evaluate on the clean test split.
    Train(TrainArgs),
    /// Score a saved checkpoint.
    Evaluate(EvaluateArgs),
    /// Train DCF over a grid of R × sigma2 × v.
    Sweep(SweepArgs),
    /// Compare T-CE plus hard samples, plus random dropped samples, and alone.
    Rq3(Rq3Args),
    /// Flip-precision series of the progressive and fixed relabel schedules.
    Rq4(Rq4Args),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    #[value(name = "tsv", alias = "tsv-triplet")]
    Tsv,
    #[value(name = "movielens-100k", alias = "ml-100k")]
    MovieLens100k,
    /// Planted rank-r preferences; `--input` is ignored.
    Synthetic,
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "tsv")]
    pub format: InputFormat,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub noise_rate: Option<f64>,
    /// Keep only test interactions rated at least this value.
    #[arg(long, default_value_t = 5)]
    pub clean_min_rating: i64,
    /// Keep every test interaction regardless of rating.
    #[arg(long)]
    pub keep_all_test: bool,
    #[arg(long, default_value_t = 200)]
    pub users: usize,
    #[arg(long, default_value_t = 100)]
    pub items: usize,
    #[arg(long, default_value_t = 8)]
    pub rank: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Correction settings that are scalars everywhere except in `sweep`.
#[derive(Args, Debug, Clone, Default)]
pub struct BoundFlags {
    /// Final relabel ratio.
    #[arg(long = "R")]
    pub r: Option<f64>,
    /// Bound variance parameter.
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// Loss window length in epochs.
    #[arg(long = "v")]
    pub v: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainingFlags {
    /// Epoch at which the relabel ratio saturates.
    #[arg(long = "O")]
    pub o: Option<u32>,
    #[arg(long)]
    pub drop_max: Option<f64>,
    #[arg(long)]
    pub drop_warmup: Option<u32>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Persistent positives per batch.
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<u32>,
    /// Sampled negatives per positive.
    #[arg(long)]
    pub negatives: Option<usize>,
    /// Early-stopping patience on validation NDCG@5; 0 disables it.
    #[arg(long)]
    pub patience: Option<u32>,
    #[arg(long)]
    pub schedule: Option<RelabelSchedule>,
    /// Number of seeds; runs use seeds 0..N.
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Extra noise injected into the loaded training split.
    #[arg(long)]
    pub noise_rate: Option<f64>,
    /// Cutoffs, comma-separated.
    #[arg(long = "K")]
    pub k: Option<List<usize>>,
    /// `key = value` file; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Prepared dataset directory.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub method: Option<Method>,
    #[command(flatten)]
    pub bound: BoundFlags,
    #[command(flatten)]
    pub training: TrainingFlags,
    /// Write the per-epoch loss ledger of DCF runs as CSV.
    #[arg(long)]
    pub dump_ledger: bool,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Validation,
    Test,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long = "K", default_value = "5,10,20")]
    pub k: List<usize>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Also write the report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long = "R")]
    pub r: Option<List<f64>>,
    #[arg(long)]
    pub sigma2: Option<List<f64>>,
    #[arg(long = "v")]
    pub v: Option<List<usize>>,
    #[command(flatten)]
    pub training: TrainingFlags,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Rq3Args {
    #[arg(long)]
    pub input: PathBuf,
    /// `hard_samples.json` exported by a DCF training run.
    #[arg(long)]
    pub hard_set: Option<PathBuf>,
    #[command(flatten)]
    pub bound: BoundFlags,
    #[command(flatten)]
    pub training: TrainingFlags,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Rq4Args {
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub bound: BoundFlags,
    #[command(flatten)]
    pub training: TrainingFlags,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

impl TrainingFlags {
    fn overrides(&self, method: Option<Method>, bound: &BoundFlags) -> Overrides {
        Overrides {
            method,
            relabel_ratio: bound.r,
            saturation: self.o,
            sigma2: bound.sigma2,
            window: bound.v,
            drop_max: self.drop_max,
            drop_warmup: self.drop_warmup,
            lr: self.lr,
            batch: self.batch,
            dim: self.dim,
            epochs: self.epochs,
            seeds: self.seeds,
            noise_rate: self.noise_rate,
            ks: self.k.clone().map(|l| l.0),
            negatives: self.negatives,
            patience: self.patience,
            schedule: self.schedule,
        }
    }

    fn config_file(&self) -> Result<ConfigFile> {
        match &self.config {
            Some(path) => ConfigFile::load(path),
            None => Ok(ConfigFile::default()),
        }
    }
}

/// Runs one parsed invocation. Output paths are reported on stdout.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(args) => commands::prepare(&args),
        Command::Train(args) => commands::train(&args),
        Command::Evaluate(args) => commands::evaluate(&args),
        Command::Sweep(args) => commands::sweep(&args),
        Command::Rq3(args) => commands::rq3(&args),
        Command::Rq4(args) => commands::rq4(&args),
    }
}
