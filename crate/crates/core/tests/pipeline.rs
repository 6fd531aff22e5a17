//! Training loop invariants checked from the outside.

use std::collections::HashSet;

use dcf_core::data::{batch_stream, Dataset, Interaction};
use dcf_core::denoise::{drop_fraction, train, DenoiseConfig, Method, TrainHooks};
use dcf_core::harness::{run_method, synthetic_dataset, HarnessConfig};
use dcf_core::model::{EmbeddingModel, OptimizerConfig};

fn ceil_share(f: f64, n: usize) -> usize {
    (f * n as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Two user groups, each liking its own half of the catalog.
fn separable() -> Dataset {
    let mut train = Vec::new();
    for u in 0..12u32 {
        let base = if u < 6 { 0 } else { 10 };
        for i in base..base + 10 {
            train.push(Interaction::positive(u, i, None));
        }
    }
    Dataset::new(12, 20, train, vec![], vec![])
}

#[test]
fn normal_training_fits_separable_data() {
    let ds = separable();
    let cfg = DenoiseConfig { epochs: 200, batch_size: 32, ..Default::default() };
    let opt = OptimizerConfig { learning_rate: 0.05, embedding_dim: 8, ..Default::default() };
    let model = EmbeddingModel::new(ds.num_users, ds.num_items, opt.embedding_dim, 0);
    let out = train(&ds, model, Method::Normal, &cfg, &opt, TrainHooks::default()).unwrap();
    let first = out.reports[0].mean_loss;
    let last = out.reports.last().unwrap().mean_loss;
    assert!(last < 0.1, "final loss {last} (started at {first})");
    assert!(out.events.is_empty());
    assert!(out.reports.iter().all(|r| r.dropped == 0));
}

#[test]
fn tce_drops_ceil_share_of_each_batch() {
    let hc = HarnessConfig::default();
    let ds = synthetic_dataset(&hc, 3).unwrap();
    let cfg = DenoiseConfig { epochs: 12, batch_size: 100, drop_warmup: 5, drop_max: 0.2, patience: 0, seed: 3, ..hc.denoise.clone() };
    let model = EmbeddingModel::new(ds.num_users, ds.num_items, 8, 3);
    let out = train(&ds, model, Method::Tce, &cfg, &hc.optimizer, TrainHooks::default()).unwrap();
    for report in &out.reports {
        let f = drop_fraction(report.epoch, &cfg);
        let expected: usize = batch_stream(&ds, cfg.batch_size, cfg.negatives_per_positive, cfg.seed, report.epoch)
            .map(|batch| ceil_share(f, batch.iter().filter(|s| !s.id.is_transient()).count()))
            .sum();
        assert_eq!(report.dropped, expected, "epoch {}", report.epoch);
    }
    assert!(out.reports.last().unwrap().dropped > 0);
}

#[test]
fn relabeling_stays_within_the_ratio() {
    let hc = HarnessConfig::default();
    let ds = synthetic_dataset(&hc, 4).unwrap();
    let cfg = DenoiseConfig { epochs: 15, patience: 0, relabel_ratio: 0.09, relabel_saturation: 5, ..hc.denoise.clone() };
    let run = run_method(&ds, Method::Dcf, &hc.optimizer, &cfg, 4, HashSet::new()).unwrap();
    let b = ds.train.len();
    let mut cumulative = 0;
    for report in &run.outcome.reports {
        cumulative += report.flipped;
        let cap = b - (b as f64 * (1.0 - report.relabel_ratio) + 1e-9).floor() as usize;
        assert!(cumulative <= cap, "epoch {}: {cumulative} > {cap}", report.epoch);
    }
    assert_eq!(cumulative, run.outcome.events.len());
    assert!(cumulative > 0);

    let mut seen = HashSet::new();
    for ev in &run.outcome.events {
        assert!(!ev.sample.is_transient());
        assert!(ev.sample.index() < b);
        assert!(seen.insert(ev.sample), "sample {} flipped twice", ev.sample.0);
        assert_eq!((ev.old_label, ev.new_label), (1, 0));
    }
}

#[test]
fn default_correction_beats_the_noise_base_rate() {
    let mut hc = HarnessConfig::default();
    hc.denoise.relabel_ratio = 0.01;
    hc.denoise.sigma2 = 0.01;
    let ds = synthetic_dataset(&hc, 0).unwrap();
    let run = run_method(&ds, Method::Dcf, &hc.optimizer, &hc.denoise, 0, HashSet::new()).unwrap();
    let precision = run.test.flip_precision.expect("some flips");
    assert!(precision > 0.2, "flip precision {precision}");
}
