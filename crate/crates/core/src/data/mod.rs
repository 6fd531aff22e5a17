//! Interaction data: loading, splitting, noise injection and batching.
//!
//! All identifiers are dense 0-based indices. Training positives are
//! addressed by [`SampleId`], their position in [`Dataset::train`], which is
//! stable for the lifetime of a run. Sampled negatives carry
//! [`SampleId::TRANSIENT`].

mod batch;
mod load;
mod noise;
mod split;
pub mod synthetic;

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use batch::{batch_stream, BatchStream, TrainingSample};
pub use load::{load_triplets, parse_triplets, TripletFormat};
pub use noise::{inject_noise, read_noise_mask, write_noise_mask, NoiseSpec};
pub use split::{make_splits, CleanTestRule, SplitRatio};

pub type UserId = u32;
pub type ItemId = u32;

/// Stable identity of a persistent training positive.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleId(pub u32);

impl SampleId {
    /// Marker carried by sampled negatives, which have no loss history.
    pub const TRANSIENT: SampleId = SampleId(u32::MAX);

    pub fn is_transient(self) -> bool {
        self == Self::TRANSIENT
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Debug for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_transient() {
            f.write_str("SampleId(transient)")
        } else {
            write!(f, "SampleId({})", self.0)
        }
    }
}

/// One observed (user, item) record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: UserId,
    pub item: ItemId,
    /// Observed binary label; 1 for every loaded record.
    pub label: u8,
    /// Rating or dwell time, used only by the clean-test filter.
    pub rating: Option<i64>,
    /// Ground-truth flag, set only by [`inject_noise`].
    pub truly_noisy: bool,
}

impl Interaction {
    pub fn positive(user: UserId, item: ItemId, rating: Option<i64>) -> Self {
        Interaction {
            user,
            item,
            label: 1,
            rating,
            truly_noisy: false,
        }
    }
}

/// Loaded interactions before splitting.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDataset {
    pub num_users: usize,
    pub num_items: usize,
    pub interactions: Vec<Interaction>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

/// Train / validation / clean-test splits over a fixed user and item universe.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub num_users: usize,
    pub num_items: usize,
    pub train: Vec<Interaction>,
    pub validation: Vec<Interaction>,
    pub test: Vec<Interaction>,
    /// Per-user sorted items observed in `train`. Built once from the observed
    /// positives and left untouched by relabeling, so the negative sampler
    /// never proposes an observed pair.
    pub train_positive_index: Vec<Vec<ItemId>>,
}

impl Dataset {
    pub fn new(
        num_users: usize,
        num_items: usize,
        train: Vec<Interaction>,
        validation: Vec<Interaction>,
        test: Vec<Interaction>,
    ) -> Self {
        let train_positive_index = build_index(num_users, &train);
        Dataset {
            num_users,
            num_items,
            train,
            validation,
            test,
            train_positive_index,
        }
    }

    pub fn split(&self, split: Split) -> &[Interaction] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    /// Per-user item sets of a split; users without interactions get an empty set.
    pub fn relevant_items(&self, split: Split) -> Vec<BTreeSet<ItemId>> {
        let mut out = vec![BTreeSet::new(); self.num_users];
        for it in self.split(split) {
            out[it.user as usize].insert(it.item);
        }
        out
    }

    /// Sample ids of injected (ground-truth noisy) training positives.
    pub fn noisy_samples(&self) -> HashSet<SampleId> {
        self.train
            .iter()
            .enumerate()
            .filter(|(_, it)| it.truly_noisy)
            .map(|(i, _)| SampleId(i as u32))
            .collect()
    }

    pub fn sample(&self, id: SampleId) -> &Interaction {
        &self.train[id.index()]
    }

    pub fn is_train_positive(&self, user: UserId, item: ItemId) -> bool {
        self.train_positive_index[user as usize]
            .binary_search(&item)
            .is_ok()
    }

    /// All (user, item) pairs appearing in any split.
    pub(crate) fn occupied_pairs(&self) -> HashSet<(UserId, ItemId)> {
        self.train
            .iter()
            .chain(&self.validation)
            .chain(&self.test)
            .map(|it| (it.user, it.item))
            .collect()
    }
}

pub(crate) fn build_index(num_users: usize, train: &[Interaction]) -> Vec<Vec<ItemId>> {
    let mut index = vec![Vec::new(); num_users];
    for it in train {
        index[it.user as usize].push(it.item);
    }
    for items in &mut index {
        items.sort_unstable();
        items.dedup();
    }
    index
}

/// Derives a per-purpose RNG seed so that unrelated streams never share state.
pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `floor(x)` that tolerates representation error such as `0.29 * 100 = 28.999…`.
pub(crate) fn floor_count(x: f64) -> usize {
    (x + 1e-9).floor().max(0.0) as usize
}
