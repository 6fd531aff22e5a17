//! Planted low-rank preference data with known ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{mix_seed, Interaction, RawDataset};

#[derive(Clone, Debug, PartialEq)]
pub struct PlantedConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub rank: usize,
    /// Inclusive range of clean positives per user.
    pub min_positives: usize,
    pub max_positives: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            num_users: 200,
            num_items: 100,
            rank: 8,
            min_positives: 12,
            max_positives: 28,
            seed: 0,
        }
    }
}

/// Each user interacts with their top-scoring items under a random rank-`rank`
/// factor model. Every interaction is a true preference and carries rating 5.
pub fn planted_factor_data(cfg: &PlantedConfig) -> RawDataset {
    assert!(cfg.min_positives <= cfg.max_positives && cfg.max_positives <= cfg.num_items);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x504c_414e_54));
    let mut draw = |n: usize| -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    };
    let users = draw(cfg.num_users * cfg.rank);
    let items = draw(cfg.num_items * cfg.rank);

    let mut interactions = Vec::new();
    for u in 0..cfg.num_users {
        let pu = &users[u * cfg.rank..(u + 1) * cfg.rank];
        let mut scored: Vec<(f64, u32)> = (0..cfg.num_items)
            .map(|i| {
                let qi = &items[i * cfg.rank..(i + 1) * cfg.rank];
                (pu.iter().zip(qi).map(|(a, b)| a * b).sum::<f64>(), i as u32)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let m = rng.random_range(cfg.min_positives..=cfg.max_positives);
        let mut chosen: Vec<u32> = scored[..m].iter().map(|&(_, i)| i).collect();
        chosen.sort_unstable();
        interactions.extend(chosen.into_iter().map(|i| Interaction::positive(u as u32, i, Some(5))));
    }

    RawDataset {
        num_users: cfg.num_users,
        num_items: cfg.num_items,
        interactions,
    }
}
