use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{mix_seed, Dataset, Interaction, RawDataset};
use crate::error::{Error, Result};

/// Relative sizes of the train / validation / test splits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitRatio {
    pub train: u32,
    pub validation: u32,
    pub test: u32,
}

impl Default for SplitRatio {
    fn default() -> Self {
        SplitRatio {
            train: 8,
            validation: 1,
            test: 1,
        }
    }
}

/// Filter applied to the test split only.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CleanTestRule {
    KeepAll,
    /// Keep interactions whose rating (or dwell time) is at least the value:
    /// 5 for MovieLens, 10 seconds for Adressa, 4 for Yelp.
    RatingAtLeast(i64),
}

impl CleanTestRule {
    pub fn accepts(self, it: &Interaction) -> bool {
        match self {
            CleanTestRule::KeepAll => true,
            CleanTestRule::RatingAtLeast(min) => it.rating.is_some_and(|r| r >= min),
        }
    }
}

const SPLIT_SALT: u64 = 0x5350_4c49_54;

/// Per-user random split of positives.
///
/// Users with fewer than three positives keep everything in train. Otherwise
/// validation and test each receive `max(1, round(n * share))` positives and
/// the remainder goes to train. Only the test split is filtered by `rule`;
/// rejected test interactions are discarded.
pub fn make_splits(
    raw: &RawDataset,
    ratio: SplitRatio,
    rule: CleanTestRule,
    seed: u64,
) -> Result<Dataset> {
    if raw.interactions.is_empty() {
        return Err(Error::EmptyDataset("raw interactions".into()));
    }
    let total = (ratio.train + ratio.validation + ratio.test) as f64;
    if total == 0.0 || ratio.train == 0 {
        return Err(Error::Config("split ratio needs a non-zero train share".into()));
    }

    let mut per_user: Vec<Vec<&Interaction>> = vec![Vec::new(); raw.num_users];
    for it in raw.interactions.iter().filter(|it| it.label == 1) {
        per_user[it.user as usize].push(it);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, SPLIT_SALT));
    let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for mut items in per_user {
        items.sort_by_key(|it| it.item);
        let n = items.len();
        if n < 3 {
            train.extend(items.into_iter().cloned());
            continue;
        }
        items.shuffle(&mut rng);
        let share = |w: u32| -> usize {
            if w == 0 {
                0
            } else {
                ((n as f64 * w as f64 / total).round() as usize).max(1)
            }
        };
        let n_test = share(ratio.test);
        let n_val = share(ratio.validation);
        let (test_part, rest) = items.split_at(n_test);
        let (val_part, train_part) = rest.split_at(n_val);
        test.extend(test_part.iter().filter(|it| rule.accepts(it)).map(|it| (*it).clone()));
        validation.extend(val_part.iter().map(|it| (*it).clone()));
        train.extend(train_part.iter().map(|it| (*it).clone()));
    }

    Ok(Dataset::new(raw.num_users, raw.num_items, train, validation, test))
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    fn raw_for(counts: &[usize]) -> RawDataset {
        let mut interactions = Vec::new();
        for (u, &n) in counts.iter().enumerate() {
            for i in 0..n {
                interactions.push(Interaction::positive(u as u32, i as u32, Some((i % 5 + 1) as i64)));
            }
        }
        RawDataset {
            num_users: counts.len(),
            num_items: counts.iter().copied().max().unwrap_or(0),
            interactions,
        }
    }

    fn count_user(list: &[Interaction], user: u32) -> usize {
        list.iter().filter(|it| it.user == user).count()
    }

    #[test]
    fn ten_positives_split_eight_one_one() {
        let ds = make_splits(&raw_for(&[10]), SplitRatio::default(), CleanTestRule::KeepAll, 1)
            .unwrap();
        assert_eq!((ds.train.len(), ds.validation.len(), ds.test.len()), (8, 1, 1));
    }

    #[test]
    fn small_users_stay_in_train() {
        let ds = make_splits(&raw_for(&[2, 1, 3]), SplitRatio::default(), CleanTestRule::KeepAll, 1)
            .unwrap();
        assert_eq!(count_user(&ds.train, 0), 2);
        assert_eq!(count_user(&ds.train, 1), 1);
        assert_eq!(count_user(&ds.test, 0), 0);
        assert_eq!(count_user(&ds.validation, 0), 0);
        assert_eq!(count_user(&ds.test, 2), 1);
        assert_eq!(count_user(&ds.validation, 2), 1);
    }

    #[test]
    fn test_filter_applies_only_to_test() {
        let raw = raw_for(&[40, 50, 60]);
        let ds = make_splits(&raw, SplitRatio::default(), CleanTestRule::RatingAtLeast(5), 3)
            .unwrap();
        assert!(!ds.test.is_empty());
        assert!(ds.test.iter().all(|it| it.rating == Some(5)));
        assert!(ds.train.iter().any(|it| it.rating != Some(5)));
        assert!(ds.validation.iter().any(|it| it.rating != Some(5)));
    }

    #[test]
    fn splits_are_disjoint_and_deterministic() {
        let raw = raw_for(&[12, 30, 7, 2, 19]);
        let a = make_splits(&raw, SplitRatio::default(), CleanTestRule::KeepAll, 9).unwrap();
        let b = make_splits(&raw, SplitRatio::default(), CleanTestRule::KeepAll, 9).unwrap();
        assert_eq!(a, b);
        let key = |l: &[Interaction]| l.iter().map(|it| (it.user, it.item)).collect::<HashSet<_>>();
        let (tr, va, te) = (key(&a.train), key(&a.validation), key(&a.test));
        assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
        assert_eq!(tr.len() + va.len() + te.len(), raw.interactions.len());
    }
}
