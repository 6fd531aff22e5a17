//! Synthetic denoising harness: planted-preference data with injected false
//! positives, and the runners behind the method comparison, the hard-sample
//! study and the schedule study.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::data::synthetic::{planted_factor_data, PlantedConfig};
use crate::data::{inject_noise, make_splits, mix_seed, CleanTestRule, Dataset, NoiseSpec, SampleId, Split, SplitRatio};
use crate::denoise::{train, DenoiseConfig, HardSampleExport, Method, RelabelSchedule, TrainHooks, TrainOutcome};
use crate::error::{Error, Result};
use crate::eval::{evaluate, flip_precision, flip_precision_series, MetricsReport};
use crate::model::{EmbeddingModel, OptimizerConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub rank: usize,
    pub noise_rate: f64,
    pub optimizer: OptimizerConfig,
    pub denoise: DenoiseConfig,
}

impl Default for HarnessConfig {
    /// 200 × 100, rank 8, 20% noise, k = 16, 50 epochs. The default batch of
    /// 1024 leaves only a handful of Adam steps per epoch at this size, so the
    /// harness runs smaller batches with a larger step. R and σ² come from the
    /// sensitivity grids; σ² = 0.01 leaves the hard set nearly empty here.
    fn default() -> Self {
        HarnessConfig {
            num_users: 200,
            num_items: 100,
            rank: 8,
            noise_rate: 0.2,
            optimizer: OptimizerConfig {
                learning_rate: 0.01,
                embedding_dim: 16,
                ..Default::default()
            },
            denoise: DenoiseConfig {
                epochs: 50,
                batch_size: 128,
                relabel_ratio: 0.09,
                relabel_saturation: 10,
                sigma2: 0.1,
                ..Default::default()
            },
        }
    }
}

/// Planted data split 8:1:1 per user, then noised.
pub fn synthetic_dataset(cfg: &HarnessConfig, seed: u64) -> Result<Dataset> {
    let raw = planted_factor_data(&PlantedConfig {
        num_users: cfg.num_users,
        num_items: cfg.num_items,
        rank: cfg.rank,
        seed: mix_seed(seed, 1),
        ..Default::default()
    });
    let clean = make_splits(&raw, SplitRatio::default(), CleanTestRule::KeepAll, mix_seed(seed, 2))?;
    inject_noise(
        &clean,
        &NoiseSpec {
            noise_rate: cfg.noise_rate,
            seed: mix_seed(seed, 3),
        },
    )
}

/// One trained method on one seed.
#[derive(Clone, Debug)]
pub struct MethodRun {
    pub method: Method,
    pub outcome: TrainOutcome,
    pub test: MetricsReport,
}

impl MethodRun {
    pub fn recall5(&self) -> f64 {
        self.test.recall_at(5).unwrap_or(0.0)
    }

    pub fn ndcg5(&self) -> f64 {
        self.test.ndcg_at(5).unwrap_or(0.0)
    }
}

/// Trains `method` from a fresh model seeded with `seed` and scores the clean
/// test split at K ∈ {5, 10, 20}.
pub fn run_method(
    dataset: &Dataset,
    method: Method,
    opt: &OptimizerConfig,
    cfg: &DenoiseConfig,
    seed: u64,
    exempt: HashSet<SampleId>,
) -> Result<MethodRun> {
    let denoise = DenoiseConfig { seed, ..cfg.clone() };
    let model = EmbeddingModel::new(dataset.num_users, dataset.num_items, opt.embedding_dim, seed);
    let hooks = TrainHooks { exempt, on_epoch: None };
    let outcome = train(dataset, model, method, &denoise, opt, hooks)?;
    let truth = dataset.noisy_samples();
    let test = evaluate(&outcome.model, dataset, Split::Test, &[5, 10, 20])?
        .with_flip_precision(flip_precision(&outcome.events, &truth));
    Ok(MethodRun { method, outcome, test })
}

/// Flip precision of every relabel made through epoch `through`.
pub fn flip_precision_through(run: &MethodRun, truth: &HashSet<SampleId>, through: u32) -> Option<f64> {
    let events: Vec<_> = run.outcome.events.iter().filter(|e| e.epoch <= through).cloned().collect();
    flip_precision(&events, truth)
}

#[derive(Clone, Debug, Serialize)]
pub struct Rq3Row {
    pub variant: &'static str,
    pub train_samples: usize,
    pub recall5: f64,
    pub ndcg5: f64,
}

/// T-CE plus the hard set, plus an equal-size random draw of bound-dropped
/// samples, and unmodified. Added samples are shielded from T-CE dropping.
pub fn rq3_variants(
    dataset: &Dataset,
    export: &HardSampleExport,
    opt: &OptimizerConfig,
    cfg: &DenoiseConfig,
    seed: u64,
) -> Result<[Rq3Row; 3]> {
    if export.hard.len() != export.random.len() {
        return Err(Error::Config(format!(
            "hard set ({}) and random set ({}) differ in size",
            export.hard.len(),
            export.random.len()
        )));
    }
    let variants: [(&'static str, &[SampleId]); 3] = [
        ("tce+hard", &export.hard),
        ("tce+random", &export.random),
        ("tce", &[]),
    ];
    let mut rows = Vec::with_capacity(3);
    for (variant, set) in variants {
        let run = run_method(dataset, Method::Tce, opt, cfg, seed, set.iter().copied().collect())?;
        rows.push(Rq3Row {
            variant,
            train_samples: dataset.train.len(),
            recall5: run.recall5(),
            ndcg5: run.ndcg5(),
        });
    }
    Ok(rows.try_into().expect("three variants"))
}

/// DCF, then the three T-CE variants using its final-epoch hard-sample export.
pub fn rq3(dataset: &Dataset, opt: &OptimizerConfig, cfg: &DenoiseConfig, seed: u64) -> Result<[Rq3Row; 3]> {
    let dcf = run_method(dataset, Method::Dcf, opt, cfg, seed, HashSet::new())?;
    let export = dcf
        .outcome
        .hard_samples
        .clone()
        .ok_or_else(|| Error::Config("DCF run produced no hard-sample export".into()))?;
    rq3_variants(dataset, &export, opt, cfg, seed)
}

#[derive(Clone, Debug, Serialize)]
pub struct Rq4Series {
    pub progressive: Vec<Option<f64>>,
    pub fixed: Vec<Option<f64>>,
}

/// Per-epoch cumulative flip precision for the progressive and fixed schedules.
/// Early stopping is disabled so both series span every epoch.
pub fn rq4(dataset: &Dataset, opt: &OptimizerConfig, cfg: &DenoiseConfig, seed: u64) -> Result<Rq4Series> {
    let truth = dataset.noisy_samples();
    if truth.is_empty() {
        return Err(Error::Config("schedule study needs injected noise".into()));
    }
    let series = |schedule| -> Result<Vec<Option<f64>>> {
        let cfg = DenoiseConfig { schedule, patience: 0, ..cfg.clone() };
        let run = run_method(dataset, Method::Dcf, opt, &cfg, seed, HashSet::new())?;
        Ok(flip_precision_series(&run.outcome.events, &truth, cfg.epochs))
    };
    Ok(Rq4Series {
        progressive: series(RelabelSchedule::Progressive)?,
        fixed: series(RelabelSchedule::Fixed)?,
    })
}
