//! Per-sample loss history, damped window mean and concentration lower bound.
//!
//! Each persistent positive keeps the damped losses of its last `v` epochs.
//! The confirmed mean `μ̃` is the average of that window, and the lower bound
//!
//! ```text
//! ℓ* = μ̃ - σ² (i + σ² ln(2i) / i²) / (d - σ²)
//! ```
//!
//! uses the global epoch `i` and the per-sample survival count `d` (epochs in
//! which the sample was not dropped, starting at 1). `σ²` is a tuning knob.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::data::SampleId;
use crate::error::{Error, Result};

/// Damping function `φ(ℓ) = ln(1 + ℓ + ℓ²/2)`.
///
/// Non-decreasing, `φ(ℓ) ≤ ℓ`, near-identity for small losses and logarithmic
/// for large ones.
pub fn damp(loss: f64) -> f64 {
    assert!(loss >= 0.0, "damping is defined for non-negative losses, got {loss}");
    (loss + 0.5 * loss * loss).ln_1p()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundConfig {
    /// Adjustment factor σ²; must stay below the minimum survival count of 1.
    pub sigma2: f64,
    /// Window length `v`.
    pub window: usize,
}

impl Default for BoundConfig {
    fn default() -> Self {
        BoundConfig {
            sigma2: 0.01,
            window: 3,
        }
    }
}

impl BoundConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.sigma2) {
            return Err(Error::Config(format!("sigma2 {} outside [0, 1)", self.sigma2)));
        }
        if self.window == 0 {
            return Err(Error::Config("window length v must be at least 1".into()));
        }
        Ok(())
    }
}

/// `μ̃ - σ² (i + σ² ln(2i)/i²) / (d - σ²)`; exactly `μ̃` when `σ² = 0`.
pub fn lower_bound_value(mean: f64, sigma2: f64, epoch: u32, survival: u32) -> Result<f64> {
    assert!(epoch >= 1, "epoch index starts at 1");
    if sigma2 == 0.0 {
        return Ok(mean);
    }
    let d = survival as f64;
    if d <= sigma2 {
        return Err(Error::InvalidBound { d: survival, sigma2 });
    }
    let i = epoch as f64;
    let penalty = sigma2 * (i + sigma2 * (2.0 * i).ln() / (i * i)) / (d - sigma2);
    Ok(mean - penalty)
}

/// Loss windows and survival counters for every persistent positive.
#[derive(Clone, Debug, PartialEq)]
pub struct LossLedger {
    capacity: usize,
    windows: Vec<VecDeque<f64>>,
    survival: Vec<u32>,
    last_marked: Vec<u32>,
    last_mean: Vec<f64>,
    last_bound: Vec<f64>,
    /// Survival count the cached bound was computed with.
    last_d: Vec<u32>,
}

/// One line of the `--dump-ledger` CSV.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LedgerRow {
    pub sample_id: u32,
    pub epoch: u32,
    pub d: u32,
    pub mu_tilde: f64,
    pub lower_bound: f64,
}

impl LossLedger {
    pub fn new(num_samples: usize, window: usize) -> Self {
        assert!(window >= 1, "window length must be at least 1");
        LossLedger {
            capacity: window,
            windows: vec![VecDeque::with_capacity(window); num_samples],
            survival: vec![1; num_samples],
            last_marked: vec![0; num_samples],
            last_mean: vec![f64::NAN; num_samples],
            last_bound: vec![f64::NAN; num_samples],
            last_d: vec![0; num_samples],
        }
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.capacity
    }

    fn check(sample: SampleId) -> usize {
        assert!(!sample.is_transient(), "transient negatives have no loss history");
        sample.index()
    }

    /// Pushes `φ(loss)`, evicting the oldest entry once the window is full.
    pub fn record_loss(&mut self, sample: SampleId, loss: f64, _epoch: u32) {
        let w = &mut self.windows[Self::check(sample)];
        if w.len() == self.capacity {
            w.pop_front();
        }
        w.push_back(damp(loss));
    }

    pub fn window(&self, sample: SampleId) -> &VecDeque<f64> {
        &self.windows[Self::check(sample)]
    }

    /// Average of the stored damped losses (fewer than `v` early on).
    pub fn confirmed_mean(&self, sample: SampleId) -> Result<f64> {
        let w = &self.windows[Self::check(sample)];
        if w.is_empty() {
            return Err(Error::NoHistory(sample));
        }
        Ok(w.iter().sum::<f64>() / w.len() as f64)
    }

    pub fn survival(&self, sample: SampleId) -> u32 {
        self.survival[Self::check(sample)]
    }

    /// Computes `μ̃` and `ℓ*` for the sample and caches both.
    pub fn lower_bound(&mut self, sample: SampleId, epoch: u32, cfg: &BoundConfig) -> Result<f64> {
        let idx = Self::check(sample);
        let mean = self.confirmed_mean(sample)?;
        let bound = lower_bound_value(mean, cfg.sigma2, epoch, self.survival[idx])?;
        self.last_mean[idx] = mean;
        self.last_bound[idx] = bound;
        self.last_d[idx] = self.survival[idx];
        Ok(bound)
    }

    /// Cached `μ̃` from the most recent [`lower_bound`](Self::lower_bound) call.
    pub fn cached_mean(&self, sample: SampleId) -> Option<f64> {
        let v = self.last_mean[Self::check(sample)];
        (!v.is_nan()).then_some(v)
    }

    pub fn cached_bound(&self, sample: SampleId) -> Option<f64> {
        let v = self.last_bound[Self::check(sample)];
        (!v.is_nan()).then_some(v)
    }

    /// Increments `d` for each retained sample. A sample may be marked at most
    /// once per epoch.
    pub fn mark_survival<I>(&mut self, retained: I, epoch: u32) -> Result<()>
    where
        I: IntoIterator<Item = SampleId>,
    {
        for sample in retained {
            let idx = Self::check(sample);
            if self.last_marked[idx] == epoch {
                return Err(Error::DoubleSurvival { sample, epoch });
            }
            self.last_marked[idx] = epoch;
            self.survival[idx] += 1;
        }
        Ok(())
    }

    /// Forgets the window and cached statistics of a sample (after a relabel).
    pub fn clear(&mut self, sample: SampleId) {
        let idx = Self::check(sample);
        self.windows[idx].clear();
        self.last_mean[idx] = f64::NAN;
        self.last_bound[idx] = f64::NAN;
    }

    /// Cached statistics of every sample with a history, for the ledger dump.
    /// `d` is the survival count the cached bound used.
    pub fn rows(&self, epoch: u32) -> impl Iterator<Item = LedgerRow> + '_ {
        (0..self.len()).filter_map(move |idx| {
            let (mu, lb) = (self.last_mean[idx], self.last_bound[idx]);
            (!mu.is_nan()).then_some(LedgerRow {
                sample_id: idx as u32,
                epoch,
                d: self.last_d[idx],
                mu_tilde: mu,
                lower_bound: lb,
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn s(i: u32) -> SampleId {
        SampleId(i)
    }

    #[test]
    fn damping_examples() {
        assert_eq!(damp(0.0), 0.0);
        assert!((damp(1.0) - 2.5f64.ln()).abs() < 1e-15);
        assert!((damp(1.0) - 0.9163).abs() < 1e-4);
        assert!((damp(100.0) - 5101f64.ln()).abs() < 1e-12);
        assert!((damp(100.0) - 8.537).abs() < 5e-4);
        assert!((damp(2.0) - 1.6094).abs() < 1e-4);
    }

    #[test]
    #[should_panic]
    fn negative_loss_is_rejected() {
        damp(-0.1);
    }

    #[test]
    fn ring_buffer_keeps_last_v() {
        let mut ledger = LossLedger::new(2, 3);
        ledger.record_loss(s(0), 1.0, 1);
        assert_eq!(ledger.window(s(0)).len(), 1);
        for (e, l) in [2.0, 3.0, 4.0].into_iter().enumerate() {
            ledger.record_loss(s(0), l, e as u32 + 2);
        }
        let w: Vec<f64> = ledger.window(s(0)).iter().copied().collect();
        assert_eq!(w, vec![damp(2.0), damp(3.0), damp(4.0)]);
        assert!((w[0] - 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn confirmed_mean_examples() {
        let mut ledger = LossLedger::new(3, 5);
        assert!(matches!(ledger.confirmed_mean(s(0)), Err(Error::NoHistory(_))));
        ledger.record_loss(s(0), 0.1, 1);
        assert!((ledger.confirmed_mean(s(0)).unwrap() - 0.0998).abs() < 1e-4);
        for e in 1..=5 {
            ledger.record_loss(s(1), 0.1, e);
        }
        assert!((ledger.confirmed_mean(s(1)).unwrap() - damp(0.1)).abs() < 1e-15);
        for e in 1..=4 {
            ledger.record_loss(s(2), 0.1, e);
        }
        ledger.record_loss(s(2), 100.0, 5);
        assert!((ledger.confirmed_mean(s(2)).unwrap() - 1.787).abs() < 5e-4);
    }

    #[test]
    fn lower_bound_examples() {
        // 0.01 * (10 + 0.01 ln 20 / 100) / 9.99
        let lb = lower_bound_value(0.5, 0.01, 10, 10).unwrap();
        assert!((lb - 0.489990).abs() < 1e-6, "{lb}");
        let lb1 = lower_bound_value(0.5, 0.01, 10, 1).unwrap();
        assert!((lb1 - 0.398987).abs() < 1e-6, "{lb1}");
        assert_eq!(lower_bound_value(0.5, 0.0, 10, 1).unwrap(), 0.5);
        assert!(matches!(
            lower_bound_value(0.5, 1.5, 3, 1),
            Err(Error::InvalidBound { .. })
        ));
    }

    #[test]
    fn survival_counts() {
        let mut ledger = LossLedger::new(3, 2);
        for e in 1..=5 {
            ledger.mark_survival([s(0)], e).unwrap();
        }
        assert_eq!(ledger.survival(s(0)), 6);
        assert_eq!(ledger.survival(s(1)), 1);
        // retained, dropped, retained, retained
        for e in [1, 3, 4] {
            ledger.mark_survival([s(2)], e).unwrap();
        }
        assert_eq!(ledger.survival(s(2)), 4);
        assert!(matches!(
            ledger.mark_survival([s(1), s(1)], 9),
            Err(Error::DoubleSurvival { .. })
        ));
    }

    #[test]
    fn ledger_caches_and_clears() {
        let mut ledger = LossLedger::new(1, 2);
        ledger.record_loss(s(0), 0.5, 1);
        let cfg = BoundConfig { sigma2: 0.01, window: 2 };
        let lb = ledger.lower_bound(s(0), 1, &cfg).unwrap();
        assert_eq!(ledger.cached_bound(s(0)), Some(lb));
        ledger.mark_survival([s(0)], 1).unwrap();
        let row = ledger.rows(1).next().unwrap();
        // the row reports the d its bound used, not the post-epoch count
        assert_eq!((row.d, row.lower_bound), (1, lb));
        assert_eq!(ledger.survival(s(0)), 2);
        ledger.clear(s(0));
        assert_eq!(ledger.cached_bound(s(0)), None);
        assert!(ledger.window(s(0)).is_empty());
        assert_eq!(ledger.rows(1).count(), 0);
    }

    /// Brute-force oracle: damp the last `v` raw losses and average them.
    fn oracle_mean(raw: &[f64], v: usize) -> f64 {
        let tail = &raw[raw.len().saturating_sub(v)..];
        tail.iter().map(|&l| (1.0 + l + l * l / 2.0).ln()).sum::<f64>() / tail.len() as f64
    }

    proptest! {
        #[test]
        fn damping_is_monotone_and_contracting(a in 0.0f64..1e3, b in 0.0f64..1e3) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(damp(lo) <= damp(hi));
            prop_assert!(damp(a) <= a);
            if a > 0.0 {
                prop_assert!(damp(a) < a);
            }
        }

        #[test]
        fn bound_ordering(mean in 0.0f64..10.0, sigma2 in 1e-6f64..0.999, epoch in 1u32..500, d in 1u32..500) {
            let lb = lower_bound_value(mean, sigma2, epoch, d).unwrap();
            prop_assert!(lb < mean);
            let lb_next = lower_bound_value(mean, sigma2, epoch, d + 1).unwrap();
            prop_assert!(lb_next > lb);
            prop_assert_eq!(lower_bound_value(mean, 0.0, epoch, d).unwrap(), mean);
        }

        #[test]
        fn confirmed_mean_matches_oracle(raw in proptest::collection::vec(0.0f64..50.0, 1..20), v in 1usize..6) {
            let mut ledger = LossLedger::new(1, v);
            for (e, &l) in raw.iter().enumerate() {
                ledger.record_loss(SampleId(0), l, e as u32 + 1);
            }
            let got = ledger.confirmed_mean(SampleId(0)).unwrap();
            prop_assert!((got - oracle_mean(&raw, v)).abs() <= 1e-12 * got.abs().max(1.0));
        }
    }
}
