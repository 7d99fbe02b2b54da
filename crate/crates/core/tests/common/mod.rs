//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;
use std::hash::Hash;

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Fraction of `n` draws from Normal(mu, sigma) that fall at or below `psi`.
pub fn empirical_cdf<R: Rng>(psi: f64, mu: f64, sigma: f64, n: usize, rng: &mut R) -> f64 {
    let normal = Normal::new(mu, sigma).unwrap();
    let below = (0..n).filter(|_| normal.sample(rng) <= psi).count();
    below as f64 / n as f64
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

fn counts<T: Eq + Hash>(xs: &[T]) -> HashMap<&T, usize> {
    let mut m = HashMap::new();
    for x in xs {
        *m.entry(x).or_insert(0) += 1;
    }
    m
}

/// V-measure from entropies of the marginals and the joint distribution.
pub fn v_measure_oracle<T: Eq + Hash, U: Eq + Hash>(gold: &[T], pred: &[U]) -> f64 {
    let n = gold.len() as f64;
    let joint: Vec<(&T, &U)> = gold.iter().zip(pred).collect();
    let h_c = entropy(counts(gold).into_values(), n);
    let h_k = entropy(counts(pred).into_values(), n);
    let h_ck = entropy(counts(&joint).into_values(), n);
    // H(C|K) = H(C,K) − H(K)
    let homogeneity = if h_c == 0.0 { 1.0 } else { 1.0 - (h_ck - h_k) / h_c };
    let completeness = if h_k == 0.0 { 1.0 } else { 1.0 - (h_ck - h_c) / h_k };
    if homogeneity + completeness == 0.0 {
        0.0
    } else {
        2.0 * homogeneity * completeness / (homogeneity + completeness)
    }
}

/// Adjusted Rand index by explicit enumeration of all element pairs.
pub fn ari_oracle<T: Eq, U: Eq>(gold: &[T], pred: &[U]) -> f64 {
    let n = gold.len();
    let (mut both, mut in_gold, mut in_pred) = (0.0, 0.0, 0.0);
    let mut pairs = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let g = gold[i] == gold[j];
            let p = pred[i] == pred[j];
            pairs += 1.0;
            in_gold += g as u8 as f64;
            in_pred += p as u8 as f64;
            both += (g && p) as u8 as f64;
        }
    }
    if pairs == 0.0 {
        return 1.0;
    }
    let expected = in_gold * in_pred / pairs;
    let max = 0.5 * (in_gold + in_pred);
    if max == expected {
        1.0
    } else {
        (both - expected) / (max - expected)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

/// First index of the maximum.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Mean focal loss of `(key, query, target)` triples under `x ↦ W x`, written
/// out directly from the definition.
pub fn focal_objective(w: &[f64], d: usize, triples: &[(Vec<f64>, Vec<f64>, f64)], gamma: f64, delta: f64) -> f64 {
    let apply = |v: &[f64]| -> Vec<f64> { (0..d).map(|a| dot(&w[a * d..(a + 1) * d], v)).collect() };
    let total: f64 = triples
        .iter()
        .map(|(k, q, t)| {
            let psi = cosine(&apply(k), &apply(q));
            let p = (psi.max(0.0) + delta).min(1.0 - delta);
            -t * (1.0 - p).powf(gamma) * p.ln() - (1.0 - t) * p.powf(gamma) * (1.0 - p).ln()
        })
        .sum();
    total / triples.len() as f64
}

/// Central finite-difference gradient of `f` at `x`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = dot(b, b).sqrt().max(dot(a, a).sqrt()).max(1e-300);
    diff / scale
}

pub struct GradientCase {
    pub adapter: surprise_core::AdapterModel,
    pub pairs: Vec<surprise_core::TrainingPair>,
    pub config: surprise_core::TrainConfig,
}

/// Random adapter and pairs whose similarities all sit inside the
/// differentiable region `(0, 1)`, away from the kinks.
pub fn gradient_case<R: Rng>(rng: &mut R, d: usize) -> GradientCase {
    loop {
        let weights: Vec<f64> = (0..d * d)
            .map(|i| if i % (d + 1) == 0 { 1.0 } else { 0.0 } + rng.random_range(-0.3..0.3))
            .collect();
        let adapter = surprise_core::AdapterModel::from_weights(d, weights).unwrap();
        let n = rng.random_range(1..6);
        let pairs: Vec<surprise_core::TrainingPair> = (0..n)
            .map(|i| {
                let base: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..1.0)).collect();
                let jitter = |rng: &mut R| -> Vec<f64> { base.iter().map(|b| b + rng.random_range(-0.5..0.5)).collect() };
                surprise_core::TrainingPair {
                    key_index: i,
                    label_index: 0,
                    key_vector: jitter(rng),
                    query_vector: jitter(rng),
                    target: if rng.random_bool(0.5) { 1.0 } else { 0.05 },
                }
            })
            .collect();
        let inside = pairs.iter().all(|p| {
            let psi = cosine(&adapter.transform(&p.key_vector), &adapter.transform(&p.query_vector));
            psi > 0.05 && psi < 0.98
        });
        if inside {
            let config = surprise_core::TrainConfig {
                gamma: [0.0, 1.0, 2.0][rng.random_range(0..3)],
                ..Default::default()
            };
            return GradientCase { adapter, pairs, config };
        }
    }
}

/// Worst relative error between the analytic and finite-difference gradients.
pub fn gradient_error(case: &GradientCase) -> f64 {
    let d = case.adapter.dimension();
    let refs: Vec<&surprise_core::TrainingPair> = case.pairs.iter().collect();
    let (_, analytic) = surprise_core::fewshot::batch_loss_and_gradient(&case.adapter, &refs, &case.config).unwrap();
    let triples: Vec<(Vec<f64>, Vec<f64>, f64)> = case
        .pairs
        .iter()
        .map(|p| (p.key_vector.clone(), p.query_vector.clone(), p.target))
        .collect();
    let numeric = central_difference(
        |w| focal_objective(w, d, &triples, case.config.gamma, case.config.delta),
        case.adapter.weights(),
        1e-5,
    );
    relative_error(&analytic, &numeric)
}

pub fn random_set<R: Rng>(rng: &mut R, n: usize, d: usize, prefix: &str) -> surprise_core::EmbeddingSet {
    surprise_core::EmbeddingSet::from_records(
        (0..n)
            .map(|i| {
                let v = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                surprise_core::EmbeddingRecord::new(format!("{prefix}{i}"), v)
            })
            .collect(),
    )
    .unwrap()
}

/// Unit vectors in the plane at the given angles.
pub fn at_angles(degrees: &[f64]) -> surprise_core::EmbeddingSet {
    let vectors = degrees.iter().map(|a| vec![a.to_radians().cos(), a.to_radians().sin()]).collect();
    surprise_core::EmbeddingSet::from_vectors(vectors).unwrap()
}

pub fn cosine_assign(elements: &surprise_core::EmbeddingSet, centroids: &[Vec<f64>]) -> Vec<usize> {
    elements
        .iter()
        .map(|e| argmax(&centroids.iter().map(|c| cosine(&e.vector, c)).collect::<Vec<_>>()))
        .collect()
}

/// Two centroids on the axes; the element at 40° is closer to the first, but
/// the first centroid is typically much more similar to everything.
pub fn contrast_fixture() -> (surprise_core::EmbeddingSet, Vec<Vec<f64>>) {
    (at_angles(&[0.0, 5.0, 10.0, 40.0, 90.0]), vec![vec![1.0, 0.0], vec![0.0, 1.0]])
}
