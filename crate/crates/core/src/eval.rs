//! Full-catalog top-K metrics, flip precision and multi-seed aggregation.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ItemId, SampleId, Split};
use crate::denoise::RelabelEvent;
use crate::error::{Error, Result};
use crate::model::EmbeddingModel;

/// `|top-K ∩ relevant| / |relevant|`; `None` when nothing is relevant.
pub fn recall_at_k(ranked: &[ItemId], relevant: &BTreeSet<ItemId>, k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let hits = ranked.iter().take(k).filter(|i| relevant.contains(i)).count();
    Some(hits as f64 / relevant.len() as f64)
}

/// DCG@K over IDCG@K with discount `1 / log2(p + 1)` for 1-based position `p`.
pub fn ndcg_at_k(ranked: &[ItemId], relevant: &BTreeSet<ItemId>, k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let discount = |pos: usize| 1.0 / ((pos + 2) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.contains(i))
        .map(|(pos, _)| discount(pos))
        .sum();
    let idcg: f64 = (0..relevant.len().min(k)).map(discount).sum();
    Some(dcg / idcg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub per_seed: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n - 1); 0 for a single value.
    pub std: f64,
}

impl MetricValue {
    pub fn from_values(per_seed: Vec<f64>) -> Self {
        let n = per_seed.len() as f64;
        let mean = per_seed.iter().sum::<f64>() / n;
        let std = if per_seed.len() > 1 {
            (per_seed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MetricValue { per_seed, mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub recall: BTreeMap<usize, MetricValue>,
    pub ndcg: BTreeMap<usize, MetricValue>,
    pub flip_precision: Option<f64>,
    /// Users that contributed to the averages.
    pub users: usize,
}

impl MetricsReport {
    pub fn ks(&self) -> Vec<usize> {
        self.recall.keys().copied().collect()
    }

    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.recall.get(&k).map(|m| m.mean)
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ndcg.get(&k).map(|m| m.mean)
    }

    pub fn with_flip_precision(mut self, value: Option<f64>) -> Self {
        self.flip_precision = value;
        self
    }
}

fn eval_pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let threads = std::env::var("DCF_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n > 0)
            .unwrap_or(0);
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("evaluation thread pool")
    })
}

/// Scores every user with interactions in `split` against the full catalog
/// minus their training positives and averages each metric per user.
pub fn evaluate(
    model: &EmbeddingModel,
    dataset: &Dataset,
    split: Split,
    ks: &[usize],
) -> Result<MetricsReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config(format!("invalid K list {ks:?}")));
    }
    let relevant = dataset.relevant_items(split);
    let users: Vec<usize> = (0..dataset.num_users).filter(|&u| !relevant[u].is_empty()).collect();
    if users.is_empty() {
        return Err(Error::NoEvalUsers(split.name()));
    }

    // (recall per K, ndcg per K) for each user, in user order.
    let per_user: Vec<(Vec<f64>, Vec<f64>)> = eval_pool().install(|| {
        users
            .par_iter()
            .map(|&u| {
                let ranked = model.score_all_items(u as u32, &dataset.train_positive_index[u]);
                let rel = &relevant[u];
                let r = ks.iter().map(|&k| recall_at_k(&ranked, rel, k).unwrap_or(0.0)).collect();
                let n = ks.iter().map(|&k| ndcg_at_k(&ranked, rel, k).unwrap_or(0.0)).collect();
                (r, n)
            })
            .collect()
    });

    let n = users.len() as f64;
    let mut recall = BTreeMap::new();
    let mut ndcg = BTreeMap::new();
    for (j, &k) in ks.iter().enumerate() {
        let r = per_user.iter().map(|(r, _)| r[j]).sum::<f64>() / n;
        let g = per_user.iter().map(|(_, g)| g[j]).sum::<f64>() / n;
        recall.insert(k, MetricValue::from_values(vec![r]));
        ndcg.insert(k, MetricValue::from_values(vec![g]));
    }
    Ok(MetricsReport {
        recall,
        ndcg,
        flip_precision: None,
        users: users.len(),
    })
}

/// Fraction of relabel events that hit a truly noisy sample; `None` without events.
pub fn flip_precision(events: &[RelabelEvent], ground_truth: &HashSet<SampleId>) -> Option<f64> {
    if events.is_empty() {
        return None;
    }
    let hits = events.iter().filter(|e| ground_truth.contains(&e.sample)).count();
    Some(hits as f64 / events.len() as f64)
}

/// Cumulative flip precision after each epoch `1..=epochs`.
pub fn flip_precision_series(
    events: &[RelabelEvent],
    ground_truth: &HashSet<SampleId>,
    epochs: u32,
) -> Vec<Option<f64>> {
    (1..=epochs)
        .map(|e| {
            let upto: Vec<RelabelEvent> = events.iter().filter(|ev| ev.epoch <= e).cloned().collect();
            flip_precision(&upto, ground_truth)
        })
        .collect()
}

/// Mean and sample standard deviation of each metric across seeds.
pub fn aggregate_seeds(reports: &[MetricsReport]) -> Result<MetricsReport> {
    if reports.len() < 2 {
        return Err(Error::Aggregate(format!(
            "need at least 2 reports, got {}",
            reports.len()
        )));
    }
    let ks = reports[0].ks();
    if reports.iter().any(|r| r.ks() != ks || r.ndcg.keys().copied().collect::<Vec<_>>() != ks) {
        return Err(Error::Aggregate("reports have different K sets".into()));
    }
    let collect = |pick: &dyn Fn(&MetricsReport) -> &BTreeMap<usize, MetricValue>| {
        ks.iter()
            .map(|&k| {
                let values = reports
                    .iter()
                    .flat_map(|r| pick(r)[&k].per_seed.iter().copied())
                    .collect();
                (k, MetricValue::from_values(values))
            })
            .collect::<BTreeMap<_, _>>()
    };
    let flips: Vec<f64> = reports.iter().filter_map(|r| r.flip_precision).collect();
    Ok(MetricsReport {
        recall: collect(&|r| &r.recall),
        ndcg: collect(&|r| &r.ndcg),
        flip_precision: (!flips.is_empty()).then(|| flips.iter().sum::<f64>() / flips.len() as f64),
        users: reports.iter().map(|r| r.users).max().unwrap_or(0),
    })
}
