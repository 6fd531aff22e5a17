use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{mix_seed, Dataset, ItemId, SampleId, UserId};

/// One row fed to the model: a persistent positive or a transient negative.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainingSample {
    pub id: SampleId,
    pub user: UserId,
    pub item: ItemId,
    /// Current label. Persistent samples report their possibly-relabeled value.
    pub label: u8,
}

/// Deterministic per-epoch stream of training batches.
///
/// Every batch holds up to `batch_size` persistent positives, each followed by
/// `negatives_per_positive` freshly sampled unobserved items.
pub struct BatchStream<'a> {
    dataset: &'a Dataset,
    order: Vec<u32>,
    cursor: usize,
    batch_size: usize,
    negatives: usize,
    rng: ChaCha8Rng,
}

pub fn batch_stream(
    dataset: &Dataset,
    batch_size: usize,
    negatives_per_positive: usize,
    seed: u64,
    epoch: u32,
) -> BatchStream<'_> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xB47C_0000 + epoch as u64));
    let mut order: Vec<u32> = (0..dataset.train.len() as u32).collect();
    order.shuffle(&mut rng);
    BatchStream {
        dataset,
        order,
        cursor: 0,
        batch_size,
        negatives: negatives_per_positive,
        rng,
    }
}

impl BatchStream<'_> {
    fn sample_negative(&mut self, user: UserId) -> Option<ItemId> {
        let observed = &self.dataset.train_positive_index[user as usize];
        if observed.len() >= self.dataset.num_items {
            return None;
        }
        loop {
            let item = self.rng.random_range(0..self.dataset.num_items as u32);
            if observed.binary_search(&item).is_err() {
                return Some(item);
            }
        }
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Vec<TrainingSample>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let mut batch = Vec::with_capacity((end - self.cursor) * (1 + self.negatives));
        for k in self.cursor..end {
            let idx = self.order[k];
            let it = &self.dataset.train[idx as usize];
            let user = it.user;
            batch.push(TrainingSample {
                id: SampleId(idx),
                user,
                item: it.item,
                label: it.label,
            });
            for _ in 0..self.negatives {
                if let Some(item) = self.sample_negative(user) {
                    batch.push(TrainingSample {
                        id: SampleId::TRANSIENT,
                        user,
                        item,
                        label: 0,
                    });
                }
            }
        }
        self.cursor = end;
        Some(batch)
    }
}

#[cfg(test)]
mod tests {
    use std::collections::{BTreeMap, HashSet};

    use proptest::prelude::*;

    use super::*;
    use crate::data::Interaction;

    fn toy(users: u32, items: u32, per_user: u32) -> Dataset {
        let train = (0..users)
            .flat_map(|u| (0..per_user).map(move |k| Interaction::positive(u, (u + 2 * k) % items, None)))
            .collect();
        Dataset::new(users as usize, items as usize, train, vec![], vec![])
    }

    #[test]
    fn ten_positives_one_batch_of_twenty() {
        let ds = toy(2, 20, 5);
        let batches: Vec<_> = batch_stream(&ds, 1024, 1, 0, 1).collect();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].len(), 20);
        assert_eq!(batches[0].iter().filter(|s| s.id.is_transient()).count(), 10);
    }

    #[test]
    fn positive_ids_are_stable_across_epochs() {
        let ds = toy(5, 30, 6);
        let ids = |epoch| -> BTreeMap<SampleId, (u32, u32)> {
            batch_stream(&ds, 7, 1, 42, epoch)
                .flatten()
                .filter(|s| !s.id.is_transient())
                .map(|s| (s.id, (s.user, s.item)))
                .collect()
        };
        assert_eq!(ids(3), ids(7));
        let order = |epoch| -> Vec<SampleId> {
            batch_stream(&ds, 7, 1, 42, epoch).flatten().map(|s| s.id).filter(|id| !id.is_transient()).collect()
        };
        assert_ne!(order(3), order(7));
        assert_eq!(order(3), order(3));
    }

    #[test]
    fn user_with_full_catalog_gets_no_negatives() {
        let train = (0..4).map(|i| Interaction::positive(0, i, None)).collect();
        let ds = Dataset::new(1, 4, train, vec![], vec![]);
        let rows: Vec<_> = batch_stream(&ds, 8, 2, 0, 1).flatten().collect();
        assert_eq!(rows.len(), 4);
    }

    proptest! {
        #[test]
        fn epoch_covers_positives_once_and_negatives_are_unobserved(
            users in 1u32..8, items in 5u32..40, per_user in 1u32..5,
            batch in 1usize..13, negs in 0usize..3, seed in any::<u64>(), epoch in 0u32..50,
        ) {
            let ds = toy(users, items, per_user.min(items - 1));
            let rows: Vec<_> = batch_stream(&ds, batch, negs, seed, epoch).flatten().collect();
            let positives: Vec<_> = rows.iter().filter(|s| !s.id.is_transient()).map(|s| s.id).collect();
            let unique: HashSet<_> = positives.iter().copied().collect();
            prop_assert_eq!(positives.len(), ds.train.len());
            prop_assert_eq!(unique.len(), ds.train.len());
            for s in rows.iter().filter(|s| s.id.is_transient()) {
                prop_assert_eq!(s.label, 0);
                prop_assert!(!ds.is_train_positive(s.user, s.item));
            }
        }
    }
}
