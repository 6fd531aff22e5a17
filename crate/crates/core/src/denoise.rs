//! Training loops: the double-correction framework and its baselines.
//!
//! Per epoch `i` (1-based) the DCF loop
//!
//! 1. streams shuffled batches of positives with sampled negatives,
//! 2. records each positive's BCE loss into its damped window,
//! 3. computes `μ̃` and the lower bound `ℓ*`,
//! 4. drops the `drop_fraction(i)` share of batch positives with the largest
//!    `ℓ*` and updates the model on everything else,
//! 5. counts survivals for the retained positives,
//! 6. after the last batch, flips the labels of positives whose `ℓ*` reaches
//!    the relabel threshold `T_i`.
//!
//! Normal trains on every row; T-CE drops by instantaneous loss only.

use std::collections::{HashMap, HashSet};

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{batch_stream, floor_count, mix_seed, Dataset, SampleId, Split};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::model::{EmbeddingModel, OptimizerConfig, WeightedSample};
use crate::robustloss::{BoundConfig, LossLedger};

/// How the relabel ratio evolves over epochs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelabelSchedule {
    /// `r_i = min(i R / O, R)`.
    Progressive,
    /// `r_i = R` from the first epoch on.
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiseConfig {
    /// Loss window length `v`.
    pub window: usize,
    pub sigma2: f64,
    /// Final relabel ratio `R`.
    pub relabel_ratio: f64,
    /// Epoch `O` at which the relabel ratio saturates.
    pub relabel_saturation: u32,
    pub drop_max: f64,
    pub drop_warmup: u32,
    pub epochs: u32,
    /// Persistent positives per batch; each brings its sampled negatives.
    pub batch_size: usize,
    pub negatives_per_positive: usize,
    pub seed: u64,
    /// Early-stopping patience on validation NDCG@5; 0 disables it.
    pub patience: u32,
    pub schedule: RelabelSchedule,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        DenoiseConfig {
            window: 3,
            sigma2: 0.01,
            relabel_ratio: 0.01,
            relabel_saturation: 10,
            drop_max: 0.1,
            drop_warmup: 10,
            epochs: 100,
            batch_size: 1024,
            negatives_per_positive: 1,
            seed: 0,
            patience: 10,
            schedule: RelabelSchedule::Progressive,
        }
    }
}

impl DenoiseConfig {
    pub fn validate(&self) -> Result<()> {
        self.bound_config().validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..1.0).contains(&self.relabel_ratio) {
            return bad(format!("relabel ratio R={} outside [0, 1)", self.relabel_ratio));
        }
        if self.relabel_saturation == 0 {
            return bad("saturation epoch O must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.drop_max) {
            return bad(format!("drop_max {} outside [0, 1)", self.drop_max));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        Ok(())
    }

    pub fn bound_config(&self) -> BoundConfig {
        BoundConfig {
            sigma2: self.sigma2,
            window: self.window,
        }
    }

    /// Relabel ratio of epoch `i` under the configured schedule.
    pub fn relabel_ratio_at(&self, epoch: u32) -> f64 {
        match self.schedule {
            RelabelSchedule::Progressive => relabel_ratio(epoch, self.relabel_ratio, self.relabel_saturation),
            RelabelSchedule::Fixed if epoch >= 1 => self.relabel_ratio,
            RelabelSchedule::Fixed => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dcf,
    Normal,
    Tce,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dcf" => Ok(Method::Dcf),
            "normal" => Ok(Method::Normal),
            "tce" | "t-ce" => Ok(Method::Tce),
            other => Err(Error::Config(format!("unknown method {other:?} (dcf, normal, tce)"))),
        }
    }
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Dcf => "dcf",
            Method::Normal => "normal",
            Method::Tce => "tce",
        }
    }
}

/// Audit record of one label flip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelabelEvent {
    pub sample: SampleId,
    pub epoch: u32,
    #[serde(rename = "old")]
    pub old_label: u8,
    #[serde(rename = "new")]
    pub new_label: u8,
    #[serde(rename = "bound")]
    pub bound_at_flip: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: u32,
    /// Mean BCE over the rows that received gradient.
    pub mean_loss: f64,
    pub dropped: usize,
    pub flipped: usize,
    pub relabel_ratio: f64,
    /// `T_i`; `None` stands for +∞ (nothing eligible to flip).
    pub threshold: Option<f64>,
    pub drop_fraction: f64,
    pub validation_ndcg5: Option<f64>,
}

/// `r_i = min(i R / O, R)`.
pub fn relabel_ratio(epoch: u32, final_ratio: f64, saturation: u32) -> f64 {
    if epoch >= saturation {
        return final_ratio;
    }
    (epoch as f64 * final_ratio / saturation as f64).min(final_ratio)
}

/// Linear ramp from 0 to `drop_max` over `drop_warmup` epochs.
pub fn drop_fraction(epoch: u32, cfg: &DenoiseConfig) -> f64 {
    if cfg.drop_warmup == 0 {
        return if epoch == 0 { 0.0 } else { cfg.drop_max };
    }
    if epoch >= cfg.drop_warmup {
        return cfg.drop_max;
    }
    (cfg.drop_max * epoch as f64 / cfg.drop_warmup as f64).min(cfg.drop_max)
}

/// `ceil(fraction * n)`, tolerant of representation error.
fn ceil_count(x: f64) -> usize {
    (x - 1e-9).ceil().max(0.0) as usize
}

/// Splits candidates into (retained, dropped): the `ceil(fraction * n)`
/// entries with the largest score are dropped, ties going to the lower id.
/// Retained ids keep their input order.
pub fn select_retained(scores: &[(SampleId, f64)], fraction: f64) -> (Vec<SampleId>, Vec<SampleId>) {
    assert!((0.0..1.0).contains(&fraction), "drop fraction {fraction} outside [0, 1)");
    let n_drop = ceil_count(fraction * scores.len() as f64).min(scores.len());
    if n_drop == 0 {
        return (scores.iter().map(|&(id, _)| id).collect(), Vec::new());
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].1.total_cmp(&scores[a].1).then(scores[a].0.cmp(&scores[b].0)));
    let mut is_dropped = vec![false; scores.len()];
    let dropped = order[..n_drop]
        .iter()
        .map(|&k| {
            is_dropped[k] = true;
            scores[k].0
        })
        .collect();
    let retained = scores
        .iter()
        .zip(&is_dropped)
        .filter(|(_, &d)| !d)
        .map(|(&(id, _), _)| id)
        .collect();
    (retained, dropped)
}

/// `T_i = l[floor(B (1 - r_i))]` over ascending bounds; +∞ when the index
/// falls past the end.
pub fn relabel_threshold(sorted_bounds: &[f64], ratio: f64) -> Result<f64> {
    if sorted_bounds.is_empty() {
        return Err(Error::EmptyBounds);
    }
    debug_assert!(sorted_bounds.windows(2).all(|w| w[0] <= w[1]), "bounds must be sorted");
    let idx = floor_count(sorted_bounds.len() as f64 * (1.0 - ratio));
    Ok(sorted_bounds.get(idx).copied().unwrap_or(f64::INFINITY))
}

/// `y' = y + I (1 - 2y)`.
pub fn flip_label(label: u8, indicator: bool) -> u8 {
    (label as i32 + indicator as i32 * (1 - 2 * label as i32)) as u8
}

/// Flips every current positive whose bound reaches `threshold`. Flipped
/// samples lose their loss window.
pub fn apply_relabel(
    dataset: &mut Dataset,
    mut ledger: Option<&mut LossLedger>,
    bounds: &[(SampleId, f64)],
    threshold: f64,
    epoch: u32,
) -> Vec<RelabelEvent> {
    if !threshold.is_finite() && threshold > 0.0 {
        return Vec::new();
    }
    let mut events = Vec::new();
    for &(sample, bound) in bounds {
        let it = &mut dataset.train[sample.index()];
        if it.label != 1 || bound < threshold {
            continue;
        }
        let new_label = flip_label(it.label, true);
        events.push(RelabelEvent {
            sample,
            epoch,
            old_label: it.label,
            new_label,
            bound_at_flip: bound,
        });
        it.label = new_label;
        if let Some(ledger) = ledger.as_deref_mut() {
            ledger.clear(sample);
        }
    }
    events
}

/// Hard samples of one epoch and a same-size random control drawn from the
/// samples the bound actually dropped.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HardSampleExport {
    pub epoch: u32,
    pub hard: Vec<SampleId>,
    pub random: Vec<SampleId>,
}

/// Samples a mean-loss rule would drop at this epoch's cutoff but the bound
/// keeps: `μ̃ ≥ c > ℓ*`, where `c` is the smallest bound among the top
/// `ceil(fraction * n)` bounds. Also returns that bound-dropped set. Only
/// samples with cached statistics take part.
pub fn hard_sample_set(ledger: &LossLedger, fraction: f64) -> (Vec<SampleId>, Vec<SampleId>) {
    let mut stats = Vec::new();
    for idx in 0..ledger.len() as u32 {
        let id = SampleId(idx);
        if let (Some(m), Some(b)) = (ledger.cached_mean(id), ledger.cached_bound(id)) {
            stats.push((id, m, b));
        }
    }
    let bounds: Vec<(SampleId, f64)> = stats.iter().map(|&(id, _, b)| (id, b)).collect();
    let (_, mut dropped) = select_retained(&bounds, fraction);
    dropped.sort_unstable();
    let Some(cutoff) = dropped.iter().map(|id| ledger.cached_bound(*id).expect("cached")).reduce(f64::min) else {
        return (Vec::new(), dropped);
    };
    let hard = stats
        .iter()
        .filter(|&&(_, m, b)| m >= cutoff && b < cutoff)
        .map(|&(id, _, _)| id)
        .collect();
    (hard, dropped)
}

/// Builds the export consumed by the hard-sample comparison.
pub fn hard_sample_export(ledger: &LossLedger, epoch: u32, fraction: f64, seed: u64) -> HardSampleExport {
    let (mut hard, dropped) = hard_sample_set(ledger, fraction);
    if hard.len() > dropped.len() {
        // Early in training the hard set can outgrow the dropped set; keep
        // the largest means so the random control can match its size.
        let mean = |id: &SampleId| ledger.cached_mean(*id).expect("cached");
        hard.sort_by(|a, b| mean(b).total_cmp(&mean(a)).then(a.cmp(b)));
        hard.truncate(dropped.len());
        hard.sort_unstable();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x4841_5244));
    let n = hard.len().min(dropped.len());
    let mut random: Vec<SampleId> = sample_indices(&mut rng, dropped.len(), n)
        .into_iter()
        .map(|k| dropped[k])
        .collect();
    random.sort_unstable();
    HardSampleExport { epoch, hard, random }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best model by validation NDCG@5, or the final one without validation.
    pub model: EmbeddingModel,
    pub best_epoch: u32,
    pub reports: Vec<EpochReport>,
    pub events: Vec<RelabelEvent>,
    /// Loss ledger after the last epoch (DCF only).
    pub ledger: Option<LossLedger>,
    /// Hard-sample export of the last epoch (DCF only).
    pub hard_samples: Option<HardSampleExport>,
}

/// Callback invoked after every epoch with the report and current model.
pub type EpochHook<'a> = Box<dyn FnMut(&EpochReport, &EmbeddingModel, Option<&LossLedger>) + 'a>;

/// Optional knobs shared by all methods.
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Positives that T-CE never drops.
    pub exempt: HashSet<SampleId>,
    pub on_epoch: Option<EpochHook<'a>>,
}

/// Double-correction training.
pub fn train_dcf(
    dataset: &Dataset,
    model: EmbeddingModel,
    cfg: &DenoiseConfig,
    opt: &OptimizerConfig,
) -> Result<TrainOutcome> {
    train(dataset, model, Method::Dcf, cfg, opt, TrainHooks::default())
}

/// Normal or T-CE training.
pub fn train_baseline(
    dataset: &Dataset,
    model: EmbeddingModel,
    variant: Method,
    cfg: &DenoiseConfig,
    opt: &OptimizerConfig,
) -> Result<TrainOutcome> {
    assert!(variant != Method::Dcf, "use train_dcf for the double-correction method");
    train(dataset, model, variant, cfg, opt, TrainHooks::default())
}

pub fn train(
    dataset: &Dataset,
    mut model: EmbeddingModel,
    method: Method,
    cfg: &DenoiseConfig,
    opt: &OptimizerConfig,
    mut hooks: TrainHooks<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    opt.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::EmptyDataset("training split".into()));
    }
    let bound_cfg = cfg.bound_config();
    let mut data = dataset.clone();
    let num_positives = data.train.len();
    let mut ledger = (method == Method::Dcf).then(|| LossLedger::new(num_positives, cfg.window));
    let mut flipped = vec![false; num_positives];
    let early_stop = cfg.patience > 0 && !data.validation.is_empty();

    let mut reports = Vec::new();
    let mut events = Vec::new();
    let mut best: Option<(f64, u32, EmbeddingModel)> = None;
    let mut stale = 0u32;
    let mut last_epoch = 0;

    for epoch in 1..=cfg.epochs {
        last_epoch = epoch;
        let fraction = match method {
            Method::Normal => 0.0,
            Method::Tce | Method::Dcf => drop_fraction(epoch, cfg),
        };
        let (mut dropped_total, mut loss_sum, mut loss_rows) = (0usize, 0.0, 0usize);

        for batch in batch_stream(&data, cfg.batch_size, cfg.negatives_per_positive, cfg.seed, epoch) {
            let mut rows: Vec<WeightedSample> = batch
                .iter()
                .map(|s| WeightedSample { user: s.user, item: s.item, label: s.label, weight: 1 })
                .collect();

            let dropped = match method {
                Method::Normal => Vec::new(),
                Method::Tce => {
                    let scores: Vec<(SampleId, f64)> = batch
                        .iter()
                        .filter(|s| !s.id.is_transient() && !hooks.exempt.contains(&s.id))
                        .map(|s| (s.id, model.loss(s.user, s.item, s.label)))
                        .collect();
                    select_retained(&scores, fraction).1
                }
                Method::Dcf => {
                    let ledger = ledger.as_mut().expect("dcf ledger");
                    let mut scores = Vec::new();
                    for s in batch.iter().filter(|s| !s.id.is_transient() && !flipped[s.id.index()]) {
                        ledger.record_loss(s.id, model.loss(s.user, s.item, s.label), epoch);
                        scores.push((s.id, ledger.lower_bound(s.id, epoch, &bound_cfg)?));
                    }
                    let (retained, dropped) = select_retained(&scores, fraction);
                    ledger.mark_survival(retained, epoch)?;
                    dropped
                }
            };
            if !dropped.is_empty() {
                let position: HashMap<SampleId, usize> = batch
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| !s.id.is_transient())
                    .map(|(k, s)| (s.id, k))
                    .collect();
                for id in &dropped {
                    rows[position[id]].weight = 0;
                }
            }
            dropped_total += dropped.len();

            let kept = rows.len() - dropped.len();
            if let Some(loss) = model.backward_and_step(&rows, opt) {
                loss_sum += loss * kept as f64;
                loss_rows += kept;
            }
        }

        let relabel_ratio = if method == Method::Dcf { cfg.relabel_ratio_at(epoch) } else { 0.0 };
        let mut threshold = f64::INFINITY;
        let mut epoch_events = Vec::new();
        if method == Method::Dcf && relabel_ratio > 0.0 {
            let ledger = ledger.as_mut().expect("dcf ledger");
            // Already-flipped samples sit at +∞ so that r_i stays the
            // cumulative share of relabeled positives.
            let mut candidates = Vec::new();
            let mut all = Vec::with_capacity(num_positives);
            for idx in 0..num_positives {
                let id = SampleId(idx as u32);
                match (flipped[idx], ledger.cached_bound(id)) {
                    (true, _) => all.push(f64::INFINITY),
                    (false, Some(b)) => {
                        all.push(b);
                        candidates.push((id, b));
                    }
                    (false, None) => {}
                }
            }
            all.sort_by(f64::total_cmp);
            threshold = relabel_threshold(&all, relabel_ratio)?;
            if threshold.is_finite() {
                epoch_events = apply_relabel(&mut data, Some(ledger), &candidates, threshold, epoch);
                for ev in &epoch_events {
                    flipped[ev.sample.index()] = true;
                }
            }
        }

        let validation_ndcg5 = if early_stop {
            Some(evaluate(&model, &data, Split::Validation, &[5])?.ndcg_at(5).unwrap_or(0.0))
        } else {
            None
        };

        let report = EpochReport {
            epoch,
            mean_loss: if loss_rows > 0 { loss_sum / loss_rows as f64 } else { f64::NAN },
            dropped: dropped_total,
            flipped: epoch_events.len(),
            relabel_ratio,
            threshold: threshold.is_finite().then_some(threshold),
            drop_fraction: fraction,
            validation_ndcg5,
        };
        log::debug!("{} epoch {epoch}: {report:?}", method.name());
        if let Some(hook) = hooks.on_epoch.as_mut() {
            hook(&report, &model, ledger.as_ref());
        }
        reports.push(report);
        events.extend(epoch_events);

        if let Some(score) = validation_ndcg5 {
            if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                best = Some((score, epoch, model.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    log::info!("{}: early stop at epoch {epoch}", method.name());
                    break;
                }
            }
        }
    }

    let hard_samples = ledger
        .as_ref()
        .map(|l| hard_sample_export(l, last_epoch, drop_fraction(last_epoch, cfg), cfg.seed));
    let (model, best_epoch) = match best {
        Some((_, epoch, m)) => (m, epoch),
        None => (model, last_epoch),
    };
    Ok(TrainOutcome {
        model,
        best_epoch,
        reports,
        events,
        ledger,
        hard_samples,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::data::Interaction;

    fn ids(v: &[u32]) -> Vec<SampleId> {
        v.iter().copied().map(SampleId).collect()
    }

    #[test]
    fn relabel_ratio_examples() {
        assert_eq!(relabel_ratio(0, 0.27, 10), 0.0);
        assert_eq!(relabel_ratio(5, 0.27, 10), 0.135);
        assert_eq!(relabel_ratio(30, 0.27, 10), 0.27);
        let fixed = DenoiseConfig { relabel_ratio: 0.27, schedule: RelabelSchedule::Fixed, ..Default::default() };
        assert_eq!(fixed.relabel_ratio_at(1), 0.27);
        assert_eq!(fixed.relabel_ratio_at(0), 0.0);
    }

    #[test]
    fn drop_fraction_examples() {
        let cfg = DenoiseConfig { drop_max: 0.1, drop_warmup: 10, ..Default::default() };
        assert_eq!(drop_fraction(0, &cfg), 0.0);
        assert!((drop_fraction(5, &cfg) - 0.05).abs() < 1e-15);
        assert_eq!(drop_fraction(10, &cfg), 0.1);
        assert_eq!(drop_fraction(40, &cfg), 0.1);
    }

    #[test]
    fn select_retained_examples() {
        let scores: Vec<_> = ids(&[0, 1, 2, 3]).into_iter().zip([0.1, 0.9, 0.5, 0.7]).collect();
        assert_eq!(select_retained(&scores, 0.0), (ids(&[0, 1, 2, 3]), vec![]));
        let (kept, dropped) = select_retained(&scores, 0.5);
        assert_eq!(dropped, ids(&[1, 3]));
        assert_eq!(kept, ids(&[0, 2]));
        let flat: Vec<_> = ids(&[7, 3, 9, 5]).into_iter().map(|id| (id, 0.4)).collect();
        assert_eq!(select_retained(&flat, 0.25).1, ids(&[3]));
        // ceil(0.1 * 30) is 3, not 4
        let many: Vec<_> = (0..30).map(|i| (SampleId(i), i as f64)).collect();
        assert_eq!(select_retained(&many, 0.1).1.len(), 3);
    }

    #[test]
    fn relabel_threshold_examples() {
        let bounds: Vec<f64> = (1..=10).map(|k| k as f64 / 10.0).collect();
        assert_eq!(relabel_threshold(&bounds, 0.2).unwrap(), 0.9);
        assert_eq!(relabel_threshold(&bounds, 0.0).unwrap(), f64::INFINITY);
        assert!(matches!(relabel_threshold(&[], 0.1), Err(Error::EmptyBounds)));
        let hundred: Vec<f64> = (0..100).map(|k| k as f64).collect();
        let t = relabel_threshold(&hundred, 0.27).unwrap();
        assert_eq!(t, 73.0);
        assert_eq!(hundred.iter().filter(|&&b| b >= t).count(), 27);
    }

    #[test]
    fn flip_table() {
        assert_eq!(flip_label(1, true), 0);
        assert_eq!(flip_label(1, false), 1);
        assert_eq!(flip_label(0, true), 1);
        assert_eq!(flip_label(0, false), 0);
        for y in [0u8, 1] {
            assert_eq!(flip_label(flip_label(y, true), true), y);
        }
    }

    #[test]
    fn apply_relabel_flips_and_clears() {
        let train = (0..4).map(|i| Interaction::positive(0, i, None)).collect();
        let mut ds = Dataset::new(1, 4, train, vec![], vec![]);
        let mut ledger = LossLedger::new(4, 2);
        for i in 0..4 {
            ledger.record_loss(SampleId(i), 1.0, 1);
        }
        let bounds: Vec<_> = (0..4).map(|i| (SampleId(i), i as f64)).collect();
        assert!(apply_relabel(&mut ds, Some(&mut ledger), &bounds, f64::INFINITY, 1).is_empty());
        let ev = apply_relabel(&mut ds, Some(&mut ledger), &bounds, 2.0, 3);
        assert_eq!(ev.len(), 2);
        assert!(ev.iter().all(|e| e.old_label == 1 && e.new_label == 0 && e.epoch == 3));
        assert_eq!(ds.train.iter().map(|it| it.label).collect::<Vec<_>>(), vec![1, 1, 0, 0]);
        assert!(ledger.window(SampleId(3)).is_empty());
        assert_eq!(ledger.window(SampleId(1)).len(), 1);
        // already-flipped samples are not flipped back
        assert!(apply_relabel(&mut ds, None, &bounds, 2.0, 4).is_empty());
    }

    #[test]
    fn hard_set_is_empty_without_sigma2() {
        let mut ledger = LossLedger::new(6, 3);
        let cfg = BoundConfig { sigma2: 0.0, window: 3 };
        for i in 0..6u32 {
            ledger.record_loss(SampleId(i), i as f64 * 0.3, 1);
            ledger.lower_bound(SampleId(i), 1, &cfg).unwrap();
        }
        assert!(hard_sample_set(&ledger, 0.34).0.is_empty());
        let export = hard_sample_export(&ledger, 1, 0.34, 0);
        assert_eq!(export.hard.len(), export.random.len());
    }

    #[test]
    fn hard_set_catches_low_survival_sample() {
        // Sample 0 has the largest mean but d = 1 at epoch 10, so its bound
        // (0.6 - ~0.101) falls under sample 1's (0.55 - ~0.010).
        let cfg = BoundConfig { sigma2: 0.01, window: 1 };
        let mut ledger = LossLedger::new(4, 1);
        let raw_for = |mean: f64| (2.0 * (mean.exp() - 1.0) + 1.0).sqrt() - 1.0;
        for (i, mean) in [0.6, 0.55, 0.2, 0.1].into_iter().enumerate() {
            let id = SampleId(i as u32);
            ledger.record_loss(id, raw_for(mean), 10);
            if i > 0 {
                for e in 1..10 {
                    ledger.mark_survival([id], e).unwrap();
                }
            }
            ledger.lower_bound(id, 10, &cfg).unwrap();
        }
        assert!((ledger.cached_mean(SampleId(0)).unwrap() - 0.6).abs() < 1e-12);
        let (hard, dropped) = hard_sample_set(&ledger, 0.25);
        assert_eq!(hard, ids(&[0]));
        assert_eq!(dropped, ids(&[1]));
        let export = hard_sample_export(&ledger, 10, 0.25, 3);
        assert_eq!(export.random, ids(&[1]));
    }

    proptest! {
        #[test]
        fn schedules_are_monotone_and_clamped(
            r in 0.0f64..0.99, o in 1u32..50, dmax in 0.0f64..0.99, warm in 0u32..50, i in 0u32..200,
        ) {
            let a = relabel_ratio(i, r, o);
            prop_assert!(relabel_ratio(i + 1, r, o) >= a);
            prop_assert!(a <= r);
            if i >= o { prop_assert_eq!(a, r); }
            let cfg = DenoiseConfig { drop_max: dmax, drop_warmup: warm, ..Default::default() };
            let f = drop_fraction(i, &cfg);
            prop_assert!(drop_fraction(i + 1, &cfg) >= f);
            prop_assert!(f <= dmax);
        }

        #[test]
        fn select_retained_partitions(
            scores in proptest::collection::vec(0.0f64..5.0, 0..40), fraction in 0.0f64..0.99,
        ) {
            let input: Vec<_> = scores.iter().enumerate().map(|(i, &s)| (SampleId(i as u32), s)).collect();
            let (kept, dropped) = select_retained(&input, fraction);
            prop_assert_eq!(kept.len() + dropped.len(), input.len());
            prop_assert_eq!(dropped.len(), ((fraction * input.len() as f64) - 1e-9).ceil().max(0.0) as usize);
            let min_dropped = dropped.iter().map(|id| scores[id.index()]).fold(f64::INFINITY, f64::min);
            for id in &kept {
                prop_assert!(scores[id.index()] <= min_dropped);
            }
        }

        #[test]
        fn flip_count_respects_ratio(
            mut bounds in proptest::collection::vec(0.0f64..3.0, 1..200), r in 0.0f64..0.99,
        ) {
            bounds.sort_by(f64::total_cmp);
            let t = relabel_threshold(&bounds, r).unwrap();
            let flips = bounds.iter().filter(|&&b| b >= t).count();
            let b = bounds.len();
            let idx = floor_count(b as f64 * (1.0 - r));
            if idx >= b {
                prop_assert_eq!(flips, 0);
            } else {
                // ties at the threshold may add flips below the cut index
                prop_assert!(flips >= b - idx);
                prop_assert_eq!(bounds.iter().filter(|&&x| x > t).count() <= b - idx, true);
            }
        }
    }
}
