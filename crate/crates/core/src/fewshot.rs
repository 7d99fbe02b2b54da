//! Few-shot training of a linear adapter over frozen embeddings.
//!
//! Every labelled key is paired with every label query. The pair with the
//! key's own label gets target 1, the others target `ε`. The model probability
//! is the ReLU of the adapted cosine plus a small offset `δ`, and the objective
//! is the binary focal loss
//!
//! ```text
//! ℓ = −i (1 − p)^γ ln p − (1 − i) p^γ ln(1 − p)
//! ```
//!
//! Training stops at the first epoch whose batch-averaged (ε-weighted)
//! cross-entropy falls below a threshold.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::{dot, norm, EmbeddingSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Optimizer {
    /// Plain gradient descent.
    Sgd,
    /// Adam moments with decoupled weight decay.
    AdamW { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adamw() -> Self {
        Optimizer::AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Target of negative pairs.
    pub epsilon: f64,
    /// Focal exponent.
    pub gamma: f64,
    /// Probability offset.
    pub delta: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Stop once the epoch's mean batch cross-entropy drops below this.
    pub ce_threshold: f64,
    /// Pairs per batch.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Standard deviation of the noise added to the identity at initialisation.
    pub init_noise: f64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            gamma: 1.0,
            delta: 1e-10,
            learning_rate: 1e-4,
            weight_decay: 0.01,
            ce_threshold: 0.3,
            batch_size: 16,
            max_epochs: 200,
            seed: 0,
            init_noise: 1e-3,
            optimizer: Optimizer::adamw(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::input(m.to_string()));
        if !(0.0..1.0).contains(&self.epsilon) {
            return bad("epsilon must lie in [0, 1)");
        }
        if !(self.gamma >= 0.0) {
            return bad("gamma must be non-negative");
        }
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return bad("delta must lie in (0, 0.5)");
        }
        if !(self.ce_threshold > 0.0) {
            return bad("ce_threshold must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning rate must be positive and weight decay non-negative");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive");
        }
        if !(self.init_noise >= 0.0) {
            return bad("init_noise must be non-negative");
        }
        Ok(())
    }
}

/// One (key, label query) pair with its target weight.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub key_index: usize,
    pub label_index: usize,
    pub key_vector: Vec<f64>,
    pub query_vector: Vec<f64>,
    pub target: f64,
}

/// Linear map `v ↦ normalize(W v)` applied to keys and queries alike.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterModel {
    dimension: usize,
    /// Row-major `d × d`.
    weights: Vec<f64>,
}

impl AdapterModel {
    pub fn identity(dimension: usize) -> Self {
        let mut weights = vec![0.0; dimension * dimension];
        for i in 0..dimension {
            weights[i * dimension + i] = 1.0;
        }
        Self { dimension, weights }
    }

    pub fn from_weights(dimension: usize, weights: Vec<f64>) -> Result<Self> {
        if dimension == 0 || weights.len() != dimension * dimension {
            return Err(Error::input(format!(
                "adapter of dimension {dimension} needs {} weights, got {}",
                dimension * dimension,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numeric("non-finite adapter weight".into()));
        }
        Ok(Self { dimension, weights })
    }

    fn perturbed_identity(dimension: usize, noise: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut m = Self::identity(dimension);
        if noise > 0.0 {
            let normal = Normal::new(0.0, noise).expect("positive std");
            for w in &mut m.weights {
                *w += normal.sample(rng);
            }
        }
        m
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `W v` without normalisation.
    pub fn transform(&self, v: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.dimension)
            .map(|row| dot(row, v))
            .collect()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                found: v.len(),
            });
        }
        crate::similarity::normalized(&self.transform(v))
            .ok_or_else(|| Error::Domain("adapter maps a vector to zero".into()))
    }

    pub fn apply_set(&self, set: &EmbeddingSet) -> Result<EmbeddingSet> {
        if !set.is_empty() && set.dimension() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                found: set.dimension(),
            });
        }
        let mut out = Vec::with_capacity(set.len());
        for r in set {
            let mut r = r.clone();
            r.vector = self.apply(&r.vector)?;
            out.push(r);
        }
        EmbeddingSet::from_records(out)
    }

    /// Frobenius distance to the identity.
    pub fn distance_from_identity(&self) -> f64 {
        let d = self.dimension;
        self.weights
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let id = if i / d == i % d { 1.0 } else { 0.0 };
                (w - id) * (w - id)
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Builds `|keys| × |labels|` pairs; `gold` maps key id to label id (a query id).
pub fn build_pairs(
    keys: &EmbeddingSet,
    gold: &HashMap<String, String>,
    queries: &EmbeddingSet,
    epsilon: f64,
) -> Result<Vec<TrainingPair>> {
    if !keys.is_empty() && !queries.is_empty() && keys.dimension() != queries.dimension() {
        return Err(Error::DimensionMismatch {
            expected: keys.dimension(),
            found: queries.dimension(),
        });
    }
    let mut pairs = Vec::with_capacity(keys.len() * queries.len());
    for (ki, key) in keys.iter().enumerate() {
        let label = gold
            .get(&key.id)
            .ok_or_else(|| Error::input(format!("key {:?} has no gold label", key.id)))?;
        let positive = queries
            .position(label)
            .ok_or_else(|| Error::input(format!("gold label {label:?} is not a known label")))?;
        for (qi, query) in queries.iter().enumerate() {
            pairs.push(TrainingPair {
                key_index: ki,
                label_index: qi,
                key_vector: key.vector.clone(),
                query_vector: query.vector.clone(),
                target: if qi == positive { 1.0 } else { epsilon },
            });
        }
    }
    Ok(pairs)
}

/// `ReLU(Ψ) + δ`, capped at `1 − δ`.
pub fn probability_from_similarity(psi: f64, delta: f64) -> f64 {
    (psi.max(0.0) + delta).min(1.0 - delta)
}

/// Model probability of a pair under the adapter.
pub fn probability(key: &[f64], query: &[f64], adapter: &AdapterModel, delta: f64) -> Result<f64> {
    let psi = crate::similarity::similarity(
        &adapter.apply(key)?,
        &adapter.apply(query)?,
        crate::similarity::SimilarityKind::Cosine,
    )?;
    Ok(probability_from_similarity(psi, delta))
}

/// Target-weighted binary cross-entropy.
pub fn cross_entropy(p: f64, target: f64) -> f64 {
    -target * p.ln() - (1.0 - target) * (1.0 - p).ln()
}

/// Binary focal loss with generalised targets.
pub fn loss(p: f64, target: f64, gamma: f64) -> f64 {
    -target * (1.0 - p).powf(gamma) * p.ln() - (1.0 - target) * p.powf(gamma) * (1.0 - p).ln()
}

/// `∂ℓ/∂p`.
pub fn loss_derivative(p: f64, target: f64, gamma: f64) -> f64 {
    let (q, lp, lq) = (1.0 - p, p.ln(), (1.0 - p).ln());
    let (dq, dp) = if gamma == 0.0 {
        (0.0, 0.0)
    } else {
        (gamma * q.powf(gamma - 1.0), gamma * p.powf(gamma - 1.0))
    };
    let pos = -(-dq * lp + q.powf(gamma) / p);
    let neg = -(dp * lq - p.powf(gamma) / q);
    target * pos + (1.0 - target) * neg
}

/// Loss terms of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    pub focal: f64,
    pub cross_entropy: f64,
}

/// Mean focal loss and cross-entropy over `pairs`, and the gradient of the
/// mean focal loss with respect to the adapter weights (row-major).
pub fn batch_loss_and_gradient(
    adapter: &AdapterModel,
    pairs: &[&TrainingPair],
    config: &TrainConfig,
) -> Result<(BatchLoss, Vec<f64>)> {
    let d = adapter.dimension;
    let mut grad = vec![0.0; d * d];
    let mut focal = 0.0;
    let mut ce = 0.0;
    let n = pairs.len() as f64;
    for pair in pairs {
        let u = adapter.transform(&pair.key_vector);
        let v = adapter.transform(&pair.query_vector);
        let (nu, nv) = (norm(&u), norm(&v));
        if nu == 0.0 || nv == 0.0 {
            return Err(Error::Numeric("adapter collapsed a vector to zero".into()));
        }
        let psi = dot(&u, &v) / (nu * nv);
        let p = probability_from_similarity(psi, config.delta);
        focal += loss(p, pair.target, config.gamma);
        ce += cross_entropy(p, pair.target);
        let active = psi > 0.0 && psi + config.delta < 1.0 - config.delta;
        if !active {
            continue;
        }
        let coeff = loss_derivative(p, pair.target, config.gamma) / n;
        // ∂Ψ/∂u = (v/|v| − Ψ u/|u|) / |u|, and symmetrically for v
        for a in 0..d {
            let gu = (v[a] / nv - psi * u[a] / nu) / nu;
            let gv = (u[a] / nu - psi * v[a] / nv) / nv;
            let row = &mut grad[a * d..(a + 1) * d];
            for ((g, k), q) in row.iter_mut().zip(&pair.key_vector).zip(&pair.query_vector) {
                *g += coeff * (gu * k + gv * q);
            }
        }
    }
    let out = BatchLoss {
        focal: focal / n,
        cross_entropy: ce / n,
    };
    if !out.focal.is_finite() || !out.cross_entropy.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite loss (focal {}, cross-entropy {})",
            out.focal, out.cross_entropy
        )));
    }
    Ok((out, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_cross_entropy: f64,
    pub mean_focal: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub adapter: AdapterModel,
    pub history: Vec<EpochStats>,
    pub converged: bool,
}

struct OptimizerState {
    first: Vec<f64>,
    second: Vec<f64>,
    step: i32,
}

fn step(
    weights: &mut [f64],
    grad: &[f64],
    state: &mut OptimizerState,
    config: &TrainConfig,
) {
    let lr = config.learning_rate;
    let decay = 1.0 - lr * config.weight_decay;
    match config.optimizer {
        Optimizer::Sgd => {
            for (w, g) in weights.iter_mut().zip(grad) {
                *w = *w * decay - lr * g;
            }
        }
        Optimizer::AdamW { beta1, beta2, eps } => {
            state.step += 1;
            let c1 = 1.0 - beta1.powi(state.step);
            let c2 = 1.0 - beta2.powi(state.step);
            for (i, (w, g)) in weights.iter_mut().zip(grad).enumerate() {
                let m = &mut state.first[i];
                let v = &mut state.second[i];
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let update = (*m / c1) / ((*v / c2).sqrt() + eps);
                *w = *w * decay - lr * update;
            }
        }
    }
}

/// Trains an adapter on labelled keys. Deterministic for a given seed.
pub fn train(
    keys: &EmbeddingSet,
    gold: &HashMap<String, String>,
    queries: &EmbeddingSet,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if keys.is_empty() {
        return Err(Error::input("no labelled keys to train on"));
    }
    if queries.is_empty() {
        return Err(Error::input("no label queries to train against"));
    }
    let pairs = build_pairs(keys, gold, queries, config.epsilon)?;
    let d = keys.dimension();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adapter = AdapterModel::perturbed_identity(d, config.init_noise, &mut rng);
    let mut state = OptimizerState {
        first: vec![0.0; d * d],
        second: vec![0.0; d * d],
        step: 0,
    };
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut history = Vec::new();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut ce_sum = 0.0;
        let mut focal_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&TrainingPair> = chunk.iter().map(|&i| &pairs[i]).collect();
            let (l, grad) = batch_loss_and_gradient(&adapter, &batch, config)?;
            ce_sum += l.cross_entropy;
            focal_sum += l.focal;
            batches += 1;
            step(&mut adapter.weights, &grad, &mut state, config);
            if adapter.weights.iter().any(|w| !w.is_finite()) {
                return Err(Error::Numeric(format!("adapter weights diverged in epoch {epoch}")));
            }
        }
        let stats = EpochStats {
            epoch,
            mean_cross_entropy: ce_sum / batches as f64,
            mean_focal: focal_sum / batches as f64,
        };
        history.push(stats);
        if stats.mean_cross_entropy < config.ce_threshold {
            return Ok(TrainOutcome {
                adapter,
                history,
                converged: true,
            });
        }
    }
    Ok(TrainOutcome {
        adapter,
        history,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::EmbeddingRecord;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn divergence_is_a_numeric_error() {
        let keys = set(vec![vec![1.0, 0.2], vec![0.1, 1.0]]);
        let queries = EmbeddingSet::from_records(vec![
            EmbeddingRecord::new("a", vec![1.0, 0.0]),
            EmbeddingRecord::new("b", vec![0.0, 1.0]),
        ])
        .unwrap();
        let gold = [("0", "b"), ("1", "a")].iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        let cfg = TrainConfig { learning_rate: 1e300, ..Default::default() };
        assert!(matches!(train(&keys, &gold, &queries, &cfg), Err(Error::Numeric(_))));
    }

    fn set(vs: Vec<Vec<f64>>) -> EmbeddingSet {
        EmbeddingSet::from_vectors(vs).unwrap()
    }

    fn labels(ids: &[&str], vs: Vec<Vec<f64>>) -> EmbeddingSet {
        EmbeddingSet::from_records(
            ids.iter()
                .zip(vs)
                .map(|(id, v)| crate::similarity::EmbeddingRecord::new(*id, v))
                .collect(),
        )
        .unwrap()
    }

    fn gold(pairs: &[(&str, &str)]) -> HashMap<String, String> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn pair_counts_and_targets() {
        let keys = set(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        let qs = labels(&["a", "b", "c", "d"], vec![vec![1.0, 0.1]; 4]);
        let g = gold(&[("0", "a"), ("1", "b"), ("2", "d")]);
        let pairs = build_pairs(&keys, &g, &qs, 0.05).unwrap();
        assert_eq!(pairs.len(), 12);
        assert_eq!(pairs.iter().filter(|p| p.target == 1.0).count(), 3);
        assert_eq!(pairs.iter().filter(|p| p.target == 0.05).count(), 9);
        let zero = build_pairs(&keys, &g, &qs, 0.0).unwrap();
        assert!(zero.iter().all(|p| p.target == 1.0 || p.target == 0.0));

        let single = build_pairs(&set(vec![vec![1.0]]), &gold(&[("0", "x")]), &labels(&["x"], vec![vec![2.0]]), 0.05)
            .unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].target, 1.0);

        assert!(build_pairs(&keys, &gold(&[("0", "zzz")]), &qs, 0.05).is_err());
    }

    #[test]
    fn probability_examples() {
        let delta = 1e-10;
        assert_eq!(probability_from_similarity(-0.3, delta), delta);
        assert_eq!(probability_from_similarity(0.5, delta), 0.5 + delta);
        let top = probability_from_similarity(1.0, delta);
        assert_eq!(top, 1.0 - delta);
        assert!(cross_entropy(top, 1.0).is_finite() && cross_entropy(top, 0.0).is_finite());
        let id = AdapterModel::identity(2);
        let p = probability(&[1.0, 0.0], &[-1.0, 0.2], &id, delta).unwrap();
        assert_eq!(p, delta);
    }

    #[test]
    fn loss_examples() {
        assert!(loss(1.0 - 1e-10, 1.0, 1.0) <= 1e-9);
        assert_abs_diff_eq!(loss(0.5, 1.0, 1.0), 0.5 * std::f64::consts::LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(loss(0.5, 1.0, 1.0), 0.346574, epsilon = 1e-6);
        assert_abs_diff_eq!(loss(0.9, 1.0, 1.0), 0.010536, epsilon = 1e-6);
        for p in [0.01, 0.3, 0.77] {
            assert_eq!(loss(p, 1.0, 0.0), -p.ln());
            assert_eq!(loss(p, 0.0, 0.0), -(1.0 - p).ln());
            assert_abs_diff_eq!(loss(p, 0.05, 0.0), cross_entropy(p, 0.05), epsilon = 1e-15);
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { epsilon: 1.0, ..Default::default() },
            TrainConfig { gamma: -1.0, ..Default::default() },
            TrainConfig { delta: 0.0, ..Default::default() },
            TrainConfig { ce_threshold: 0.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn already_aligned_input_stops_after_first_epoch() {
        // keys coincide with their label queries; cross-label cosine is 0.05
        let a = vec![1.0, 0.0, 0.0];
        let b = vec![0.05, (1.0f64 - 0.05 * 0.05).sqrt(), 0.0];
        let keys = set(vec![a.clone(), a.clone(), b.clone(), b.clone()]);
        let qs = labels(&["A", "B"], vec![a, b]);
        let g = gold(&[("0", "A"), ("1", "A"), ("2", "B"), ("3", "B")]);
        let out = train(&keys, &g, &qs, &TrainConfig::default()).unwrap();
        assert!(out.converged);
        assert_eq!(out.history.len(), 1);
        assert!(out.adapter.distance_from_identity() < 0.05);
    }

    #[test]
    fn empty_training_set_rejected() {
        let qs = labels(&["A"], vec![vec![1.0]]);
        assert!(train(&EmbeddingSet::default(), &HashMap::new(), &qs, &TrainConfig::default()).is_err());
    }

    proptest! {
        #[test]
        fn loss_nonnegative_and_monotone(p in 1e-6f64..(1.0 - 1e-6), dp in 1e-6f64..0.1, gamma in 0.0f64..3.0) {
            let p2 = (p + dp).min(1.0 - 1e-7);
            prop_assume!(p2 > p);
            for i in [0.0, 0.05, 1.0] {
                prop_assert!(loss(p, i, gamma) >= 0.0);
            }
            prop_assert!(loss(p2, 1.0, gamma) <= loss(p, 1.0, gamma));
            prop_assert!(loss(p2, 0.0, gamma) >= loss(p, 0.0, gamma));
        }

        #[test]
        fn derivative_matches_difference_quotient(p in 0.01f64..0.99, i in 0.0f64..=1.0, gamma in 0.0f64..3.0) {
            let h = 1e-6;
            let fd = (loss(p + h, i, gamma) - loss(p - h, i, gamma)) / (2.0 * h);
            let an = loss_derivative(p, i, gamma);
            prop_assert!((fd - an).abs() <= 1e-5 * an.abs().max(1.0));
        }
    }
}
