//! GMF backbone: `sigmoid(h · (p_u ⊙ q_i))` trained with BCE and Adam.
//!
//! Gradients are written out by hand. With `z` the logit and `ŷ = σ(z)`, the
//! BCE derivative w.r.t. `z` is `ŷ - y`, giving
//!
//! ```text
//! ∂ℓ/∂p_u = (ŷ - y) · (h ⊙ q_i)
//! ∂ℓ/∂q_i = (ŷ - y) · (h ⊙ p_u)
//! ∂ℓ/∂h   = (ŷ - y) · (p_u ⊙ q_i)
//! ```

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{mix_seed, ItemId, UserId};
use crate::error::{Error, Result};

/// Probability clamp applied before taking logs.
pub const PROB_EPS: f64 = 1e-7;

const INIT_STD: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub embedding_dim: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            embedding_dim: 32,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.embedding_dim >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// A row of a training batch. `weight == 0` excludes the row from the gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedSample {
    pub user: UserId,
    pub item: ItemId,
    pub label: u8,
    pub weight: u8,
}

#[derive(Clone, Debug, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn zeros(n: usize) -> Self {
        Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct AdamState {
    step: u64,
    users: Moments,
    items: Moments,
    weights: Moments,
}

/// Dense gradients of the mean retained loss, laid out like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub users: Vec<f64>,
    pub items: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel {
    num_users: usize,
    num_items: usize,
    dim: usize,
    /// Row-major `num_users × dim`.
    user_emb: Vec<f64>,
    /// Row-major `num_items × dim`.
    item_emb: Vec<f64>,
    /// GMF output weights `h`.
    weights: Vec<f64>,
    /// Freeze `h` at all-ones, reducing GMF to a plain dot product.
    plain_mf: bool,
    adam: AdamState,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of a single prediction, with `ŷ` clamped to
/// `[PROB_EPS, 1 - PROB_EPS]`.
pub fn bce_loss(prob: f64, label: u8) -> f64 {
    let p = prob.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

impl EmbeddingModel {
    /// Normal(0, 0.01) embeddings, all-ones output weights, zeroed moments.
    pub fn new(num_users: usize, num_items: usize, dim: usize, seed: u64) -> Self {
        assert!(dim >= 1, "embedding dimension must be at least 1");
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x494e_4954));
        let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
        let user_emb = (0..num_users * dim).map(|_| normal.sample(&mut rng)).collect();
        let item_emb = (0..num_items * dim).map(|_| normal.sample(&mut rng)).collect();
        Self::from_parts(num_users, num_items, dim, user_emb, item_emb, vec![1.0; dim])
    }

    /// Builds a model from explicit parameters (row-major embeddings).
    pub fn from_parts(
        num_users: usize,
        num_items: usize,
        dim: usize,
        user_emb: Vec<f64>,
        item_emb: Vec<f64>,
        weights: Vec<f64>,
    ) -> Self {
        assert_eq!(user_emb.len(), num_users * dim, "user embedding shape");
        assert_eq!(item_emb.len(), num_items * dim, "item embedding shape");
        assert_eq!(weights.len(), dim, "output weight shape");
        EmbeddingModel {
            num_users,
            num_items,
            dim,
            adam: AdamState {
                step: 0,
                users: Moments::zeros(user_emb.len()),
                items: Moments::zeros(item_emb.len()),
                weights: Moments::zeros(dim),
            },
            user_emb,
            item_emb,
            weights,
            plain_mf: false,
        }
    }

    pub fn with_plain_mf(mut self, plain: bool) -> Self {
        self.plain_mf = plain;
        if plain {
            self.weights.iter_mut().for_each(|w| *w = 1.0);
        }
        self
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn user_embeddings(&self) -> &[f64] {
        &self.user_emb
    }

    pub fn item_embeddings(&self) -> &[f64] {
        &self.item_emb
    }

    pub fn output_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn adam_step(&self) -> u64 {
        self.adam.step
    }

    /// Mutable access to every parameter as one flat walk (users, items, h).
    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.user_emb
            .iter_mut()
            .chain(self.item_emb.iter_mut())
            .chain(self.weights.iter_mut())
    }

    pub fn parameters(&self) -> impl Iterator<Item = &f64> {
        self.user_emb.iter().chain(&self.item_emb).chain(&self.weights)
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().all(|p| p.is_finite())
    }

    fn user_row(&self, user: UserId) -> &[f64] {
        let u = user as usize;
        assert!(u < self.num_users, "user {u} out of range ({})", self.num_users);
        &self.user_emb[u * self.dim..(u + 1) * self.dim]
    }

    fn item_row(&self, item: ItemId) -> &[f64] {
        let i = item as usize;
        assert!(i < self.num_items, "item {i} out of range ({})", self.num_items);
        &self.item_emb[i * self.dim..(i + 1) * self.dim]
    }

    pub fn logit(&self, user: UserId, item: ItemId) -> f64 {
        let p = self.user_row(user);
        let q = self.item_row(item);
        self.weights
            .iter()
            .zip(p)
            .zip(q)
            .map(|((h, a), b)| h * a * b)
            .sum()
    }

    pub fn predict(&self, user: UserId, item: ItemId) -> f64 {
        sigmoid(self.logit(user, item))
    }

    pub fn loss(&self, user: UserId, item: ItemId, label: u8) -> f64 {
        bce_loss(self.predict(user, item), label)
    }

    /// Mean BCE over the weight-1 rows, or `None` when every row is dropped.
    pub fn batch_loss(&self, batch: &[WeightedSample]) -> Option<f64> {
        let (sum, n) = batch
            .iter()
            .filter(|s| s.weight != 0)
            .fold((0.0, 0usize), |(acc, n), s| (acc + self.loss(s.user, s.item, s.label), n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    /// Analytic gradients of [`batch_loss`](Self::batch_loss).
    pub fn gradients(&self, batch: &[WeightedSample]) -> Option<(Gradients, f64)> {
        let retained = batch.iter().filter(|s| s.weight != 0).count();
        if retained == 0 {
            return None;
        }
        let scale = 1.0 / retained as f64;
        let d = self.dim;
        let mut grads = Gradients {
            users: vec![0.0; self.user_emb.len()],
            items: vec![0.0; self.item_emb.len()],
            weights: vec![0.0; d],
        };
        let mut loss_sum = 0.0;
        for s in batch.iter().filter(|s| s.weight != 0) {
            let z = self.logit(s.user, s.item);
            let prob = sigmoid(z);
            loss_sum += bce_loss(prob, s.label);
            let dz = (prob - s.label as f64) * scale;
            let (u, i) = (s.user as usize * d, s.item as usize * d);
            for k in 0..d {
                let (p, q, h) = (self.user_emb[u + k], self.item_emb[i + k], self.weights[k]);
                grads.users[u + k] += dz * h * q;
                grads.items[i + k] += dz * h * p;
                grads.weights[k] += dz * p * q;
            }
        }
        if self.plain_mf {
            grads.weights.iter_mut().for_each(|g| *g = 0.0);
        }
        Some((grads, loss_sum * scale))
    }

    /// One Adam step on the mean loss of the retained rows.
    ///
    /// Returns the mean retained loss, or `None` (parameters untouched) when
    /// every row carries weight 0.
    pub fn backward_and_step(&mut self, batch: &[WeightedSample], opt: &OptimizerConfig) -> Option<f64> {
        let Some((grads, loss)) = self.gradients(batch) else {
            log::warn!("batch of {} rows has no retained samples; skipping update", batch.len());
            return None;
        };
        self.adam.step += 1;
        let t = self.adam.step as i32;
        let bc1 = 1.0 - opt.beta1.powi(t);
        let bc2 = 1.0 - opt.beta2.powi(t);
        let update = |params: &mut [f64], grads: &[f64], mom: &mut Moments| {
            for ((p, &g), (m, v)) in params
                .iter_mut()
                .zip(grads)
                .zip(mom.m.iter_mut().zip(mom.v.iter_mut()))
            {
                *m = opt.beta1 * *m + (1.0 - opt.beta1) * g;
                *v = opt.beta2 * *v + (1.0 - opt.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= opt.learning_rate * m_hat / (v_hat.sqrt() + opt.epsilon);
            }
        };
        update(&mut self.user_emb, &grads.users, &mut self.adam.users);
        update(&mut self.item_emb, &grads.items, &mut self.adam.items);
        if !self.plain_mf {
            update(&mut self.weights, &grads.weights, &mut self.adam.weights);
        }
        debug_assert!(self.is_finite(), "non-finite parameter after Adam step");
        Some(loss)
    }

    /// Logits of every item for one user.
    pub fn item_logits(&self, user: UserId) -> Vec<f64> {
        (0..self.num_items as u32).map(|i| self.logit(user, i)).collect()
    }

    /// Items outside `exclude`, by descending logit; ties go to the lower index.
    pub fn score_all_items(&self, user: UserId, exclude: &[ItemId]) -> Vec<ItemId> {
        rank_by_scores(&self.item_logits(user), exclude)
    }

    /// Writes the `DCF-CKPT v1` checkpoint: a text header line followed by
    /// little-endian f64 arrays `P`, `Q`, `h` in row-major order.
    pub fn save_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "DCF-CKPT v1 {} {} {}", self.num_users, self.num_items, self.dim)?;
        for p in self.parameters() {
            w.write_all(&p.to_le_bytes())?;
        }
        w.flush()
    }

    /// Reads a checkpoint written by [`save_checkpoint`](Self::save_checkpoint).
    /// Optimizer moments are not stored and start from zero.
    pub fn load_checkpoint<R: BufRead>(mut r: R) -> Result<Self> {
        let mut header = String::new();
        r.read_line(&mut header)
            .map_err(|e| Error::Checkpoint(format!("reading header: {e}")))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let dims = match fields.as_slice() {
            ["DCF-CKPT", "v1", u, i, k] => (u.parse::<usize>(), i.parse::<usize>(), k.parse::<usize>()),
            _ => return Err(Error::Checkpoint(format!("bad header {:?}", header.trim_end()))),
        };
        let (Ok(nu), Ok(ni), Ok(k)) = dims else {
            return Err(Error::Checkpoint(format!("bad dimensions in {:?}", header.trim_end())));
        };
        if k == 0 {
            return Err(Error::Checkpoint("embedding dimension 0".into()));
        }
        let mut read_vec = |n: usize, what: &str| -> Result<Vec<f64>> {
            let mut bytes = vec![0u8; n * 8];
            r.read_exact(&mut bytes)
                .map_err(|e| Error::Checkpoint(format!("truncated {what}: {e}")))?;
            Ok(bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect())
        };
        let p = read_vec(nu * k, "user embeddings")?;
        let q = read_vec(ni * k, "item embeddings")?;
        let h = read_vec(k, "output weights")?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if !rest.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
        }
        Ok(Self::from_parts(nu, ni, k, p, q, h))
    }
}

/// Shared ranking rule: descending score, ascending index on ties.
pub fn rank_by_scores(scores: &[f64], exclude: &[ItemId]) -> Vec<ItemId> {
    let mut skip = vec![false; scores.len()];
    for &i in exclude {
        if let Some(s) = skip.get_mut(i as usize) {
            *s = true;
        }
    }
    let mut items: Vec<ItemId> = (0..scores.len() as u32).filter(|&i| !skip[i as usize]).collect();
    items.sort_by(|&a, &b| scores[b as usize].total_cmp(&scores[a as usize]).then(a.cmp(&b)));
    items
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;

    fn two_dim(p: [f64; 2], q: [f64; 2], h: [f64; 2]) -> EmbeddingModel {
        EmbeddingModel::from_parts(1, 1, 2, p.to_vec(), q.to_vec(), h.to_vec())
    }

    #[test]
    fn predict_examples() {
        // σ(1) = 1 / (1 + e^-1), σ(-4) = 1 / (1 + e^4)
        let m = two_dim([1.0, 0.0], [1.0, 0.0], [1.0, 1.0]);
        assert!((m.predict(0, 0) - 0.7311).abs() < 5e-5);
        assert!((m.predict(0, 0) - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        let m = two_dim([0.0, 0.0], [0.3, -2.0], [1.0, 1.0]);
        assert_eq!(m.predict(0, 0), 0.5);
        let m = two_dim([2.0, 0.0], [-2.0, 0.0], [1.0, 1.0]);
        assert_eq!(m.logit(0, 0), -4.0);
        assert!((m.predict(0, 0) - 0.0180).abs() < 5e-5);
    }

    #[test]
    fn bce_examples() {
        assert!((bce_loss(0.5, 1) - 0.6931).abs() < 5e-5);
        assert!(bce_loss(1.0 - PROB_EPS, 1) < 1e-6);
        assert!((bce_loss(0.9, 0) - 2.3026).abs() < 5e-5);
        assert!(bce_loss(0.0, 1).is_finite());
        assert!(bce_loss(1.0, 0).is_finite());
    }

    #[test]
    fn init_is_deterministic_with_unit_weights() {
        let a = EmbeddingModel::new(943, 1682, 32, 5);
        let b = EmbeddingModel::new(943, 1682, 32, 5);
        assert_eq!(a, b);
        assert_eq!(a.user_embeddings().len(), 943 * 32);
        assert_eq!(a.output_weights(), vec![1.0; 32].as_slice());
        let std = (a.user_embeddings().iter().map(|x| x * x).sum::<f64>() / (943.0 * 32.0)).sqrt();
        assert!((std - 0.01).abs() < 5e-4, "std {std}");
        assert_ne!(a, EmbeddingModel::new(943, 1682, 32, 6));
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn out_of_range_user_panics() {
        EmbeddingModel::new(2, 2, 2, 0).predict(2, 0);
    }

    #[test]
    fn zero_gradient_batch_leaves_parameters() {
        // Saturated logit: σ(z) == 1.0 exactly, so ŷ - y = 0.
        let mut m = two_dim([10.0, 10.0], [10.0, 10.0], [1.0, 1.0]);
        assert_eq!(m.predict(0, 0), 1.0);
        let before = m.clone();
        let batch = [WeightedSample { user: 0, item: 0, label: 1, weight: 1 }];
        m.backward_and_step(&batch, &OptimizerConfig::default()).unwrap();
        assert!(before.parameters().zip(m.parameters()).all(|(a, b)| a == b));
    }

    #[test]
    fn dropped_rows_do_not_contribute() {
        let m = EmbeddingModel::new(4, 5, 3, 1);
        let keep = [
            WeightedSample { user: 0, item: 1, label: 1, weight: 1 },
            WeightedSample { user: 2, item: 3, label: 0, weight: 1 },
        ];
        let mut with_dropped = keep.to_vec();
        with_dropped.insert(1, WeightedSample { user: 1, item: 4, label: 1, weight: 0 });
        assert_eq!(m.gradients(&keep), m.gradients(&with_dropped));
        let mut a = m.clone();
        let mut b = m.clone();
        let opt = OptimizerConfig::default();
        assert_eq!(a.backward_and_step(&keep, &opt), b.backward_and_step(&with_dropped, &opt));
        assert_eq!(a, b);
    }

    #[test]
    fn all_dropped_batch_is_a_noop() {
        let mut m = EmbeddingModel::new(2, 2, 2, 0);
        let before = m.clone();
        let batch = [WeightedSample { user: 0, item: 0, label: 1, weight: 0 }];
        assert_eq!(m.backward_and_step(&batch, &OptimizerConfig::default()), None);
        assert_eq!(m, before);
    }

    /// Central finite differences of the batch loss, one coordinate at a time.
    fn numeric_gradient(model: &EmbeddingModel, batch: &[WeightedSample], h: f64) -> Vec<f64> {
        let n = model.parameters().count();
        (0..n)
            .map(|idx| {
                let mut plus = model.clone();
                *plus.parameters_mut().nth(idx).unwrap() += h;
                let mut minus = model.clone();
                *minus.parameters_mut().nth(idx).unwrap() -= h;
                (plus.batch_loss(batch).unwrap() - minus.batch_loss(batch).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut model = EmbeddingModel::new(3, 4, 5, 2);
        for p in model.parameters_mut() {
            *p = rng.random_range(-1.0..1.0);
        }
        let batch: Vec<_> = (0..6)
            .map(|k| WeightedSample {
                user: k % 3,
                item: (k * 7) % 4,
                label: (k % 2) as u8,
                weight: (k != 4) as u8,
            })
            .collect();
        let (g, _) = model.gradients(&batch).unwrap();
        let analytic: Vec<f64> = g.users.iter().chain(&g.items).chain(&g.weights).copied().collect();
        let numeric = numeric_gradient(&model, &batch, 1e-5);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!((a - n).abs() <= 1e-4 * a.abs().max(n.abs()).max(1e-6), "{a} vs {n}");
        }
    }

    #[test]
    fn plain_mf_freezes_output_weights() {
        let mut m = EmbeddingModel::new(2, 3, 4, 0).with_plain_mf(true);
        let batch = [WeightedSample { user: 1, item: 2, label: 1, weight: 1 }];
        for _ in 0..5 {
            m.backward_and_step(&batch, &OptimizerConfig::default());
        }
        assert_eq!(m.output_weights(), &[1.0; 4]);
    }

    #[test]
    fn score_all_items_examples() {
        assert_eq!(rank_by_scores(&[0.5, 2.0, -1.0], &[]), vec![1, 0, 2]);
        assert_eq!(rank_by_scores(&[0.5, 2.0, -1.0], &[1]), vec![0, 2]);
        assert_eq!(rank_by_scores(&[0.0, 0.0, 3.0, 0.0, 3.0], &[]), vec![2, 4, 0, 1, 3]);
        let m = two_dim([1.0, 0.0], [1.0, 0.0], [1.0, 1.0]);
        assert_eq!(m.score_all_items(0, &[]), vec![0]);
    }

    #[test]
    fn checkpoint_roundtrip_and_header() {
        let m = EmbeddingModel::new(3, 4, 2, 9);
        let mut buf = Vec::new();
        m.save_checkpoint(&mut buf).unwrap();
        assert!(buf.starts_with(b"DCF-CKPT v1 3 4 2\n"));
        assert_eq!(buf.len(), "DCF-CKPT v1 3 4 2\n".len() + 8 * (6 + 8 + 2));
        let back = EmbeddingModel::load_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        assert!(EmbeddingModel::load_checkpoint(&buf[..buf.len() - 1]).is_err());
        assert!(EmbeddingModel::load_checkpoint(&b"CKPT v2 1 1 1\n"[..]).is_err());
    }

    proptest! {
        #[test]
        fn sigmoid_is_monotone(a in -30.0f64..30.0, delta in 1e-6f64..10.0) {
            prop_assert!(sigmoid(a + delta) > sigmoid(a));
        }

        #[test]
        fn ranking_is_permutation_of_remaining(
            scores in proptest::collection::vec(-3.0f64..3.0, 1..30),
            exclude in proptest::collection::vec(0u32..30, 0..10),
        ) {
            let ranked = rank_by_scores(&scores, &exclude);
            let mut sorted = ranked.clone();
            sorted.sort_unstable();
            let expected: Vec<u32> = (0..scores.len() as u32).filter(|i| !exclude.contains(i)).collect();
            prop_assert_eq!(sorted, expected);
            for w in ranked.windows(2) {
                let (a, b) = (scores[w[0] as usize], scores[w[1] as usize]);
                prop_assert!(a > b || (a == b && w[0] < w[1]));
            }
        }
    }
}
