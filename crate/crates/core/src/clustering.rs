//! Spherical K-means with K-means++ seeding, surprise-based final assignment,
//! and the V-measure / adjusted Rand agreement scores.
//!
//! Centroids are fit with cosine similarity as usual. For the surprise scheme
//! the centroids act as queries while the clustered elements are both the keys
//! and the ensemble.

use std::collections::HashMap;
use std::hash::Hash;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::argmax_scores;
use crate::error::{Error, Result};
use crate::similarity::{dot, normalized, EmbeddingSet};
use crate::stats::{surprise, QueryStats, StatsEstimator};
use crate::similarity::SimilarityKind;

pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    /// Unit-norm centroids.
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
    /// Sum of cosine similarities to the assigned centroid, after seeding and after each iteration.
    pub objective_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignments_cosine: Vec<usize>,
    pub assignments_surprise: Vec<usize>,
    pub iterations: usize,
    pub seed: u64,
}

fn unit_vectors(elements: &EmbeddingSet) -> Result<Vec<Vec<f64>>> {
    elements
        .iter()
        .map(|r| {
            normalized(&r.vector)
                .ok_or_else(|| Error::Domain(format!("element {:?} is a zero vector", r.id)))
        })
        .collect()
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let best: Vec<(usize, f64)> = points
        .par_iter()
        .map(|x| {
            let mut best = (0, dot(x, &centroids[0]));
            for (j, c) in centroids.iter().enumerate().skip(1) {
                let s = dot(x, c);
                if s > best.1 {
                    best = (j, s);
                }
            }
            best
        })
        .collect();
    let objective = best.iter().map(|b| b.1).sum();
    (best.into_iter().map(|b| b.0).collect(), objective)
}

fn kmeans_pp(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    // squared chord distance on the unit sphere: 2 − 2 cos
    let dist = |a: &[f64], b: &[f64]| (2.0 - 2.0 * dot(a, b)).max(0.0);
    let mut d2: Vec<f64> = points.iter().map(|x| dist(x, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            if d2[pick] == 0.0 {
                // rounding pushed past the last positive weight
                pick = (0..n).rev().find(|&i| d2[i] > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, x) in points.iter().enumerate() {
            d2[i] = d2[i].min(dist(x, &points[next]));
        }
    }
    chosen
}

fn update_centroids(points: &[Vec<f64>], assignments: &[usize], previous: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = previous.len();
    let d = points[0].len();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (x, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(x) {
            *s += v;
        }
    }
    let mut centroids: Vec<Vec<f64>> = sums
        .iter()
        .zip(previous)
        .map(|(s, prev)| normalized(s).unwrap_or_else(|| prev.clone()))
        .collect();
    let mut taken = vec![false; points.len()];
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        // reseed with the element least similar to its own centroid, from a cluster that can spare it
        let victim = (0..points.len())
            .filter(|&i| !taken[i] && counts[assignments[i]] > 1)
            .min_by(|&a, &b| {
                dot(&points[a], &centroids[assignments[a]])
                    .total_cmp(&dot(&points[b], &centroids[assignments[b]]))
            });
        if let Some(i) = victim {
            taken[i] = true;
            counts[assignments[i]] -= 1;
            centroids[j] = points[i].clone();
        }
    }
    centroids
}

/// Spherical K-means over the unit-normalised elements.
pub fn kmeans(
    elements: &EmbeddingSet,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<KMeansFit> {
    if k == 0 {
        return Err(Error::input("k must be at least 1"));
    }
    if k > elements.len() {
        return Err(Error::input(format!(
            "k = {k} exceeds the {} elements",
            elements.len()
        )));
    }
    let points = unit_vectors(elements)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = kmeans_pp(&points, k, &mut rng)
        .into_iter()
        .map(|i| points[i].clone())
        .collect();
    let (mut assignments, objective) = assign(&points, &centroids);
    let mut objective_history = vec![objective];
    let mut iterations = 0;
    while iterations < max_iter {
        let next = update_centroids(&points, &assignments, &centroids);
        let shift = next
            .iter()
            .zip(&centroids)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < tol {
            break;
        }
        iterations += 1;
        let (next_assignments, objective) = assign(&points, &centroids);
        objective_history.push(objective);
        if next_assignments == assignments {
            break;
        }
        assignments = next_assignments;
    }
    Ok(KMeansFit {
        centroids,
        assignments,
        iterations,
        objective_history,
    })
}

/// Assigns every element to the centroid with the highest surprise, using
/// per-centroid statistics over all elements.
pub fn surprise_assign(
    elements: &EmbeddingSet,
    centroids: &[Vec<f64>],
    estimator: StatsEstimator,
) -> Result<Vec<usize>> {
    if centroids.is_empty() {
        return Err(Error::input("no centroids"));
    }
    if elements.is_empty() {
        return Ok(Vec::new());
    }
    let queries = EmbeddingSet::from_vectors(centroids.to_vec())?;
    let psi = crate::similarity::pairwise_matrix(elements, &queries, SimilarityKind::Cosine)?;
    let stats = (0..centroids.len())
        .map(|j| QueryStats::from_similarities(j.to_string(), &psi.column(j), SimilarityKind::Cosine, estimator))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..elements.len())
        .map(|i| {
            let row = psi.row(i);
            let scores: Vec<f64> = row.iter().zip(&stats).map(|(&p, s)| surprise(p, s)).collect();
            argmax_scores(&scores, row)
        })
        .collect())
}

/// K-means followed by both assignment schemes.
pub fn cluster(
    elements: &EmbeddingSet,
    k: usize,
    seed: u64,
    estimator: StatsEstimator,
) -> Result<ClusterResult> {
    let fit = kmeans(elements, k, seed, DEFAULT_MAX_ITER, DEFAULT_TOL)?;
    let assignments_surprise = surprise_assign(elements, &fit.centroids, estimator)?;
    Ok(ClusterResult {
        centroids: fit.centroids,
        assignments_cosine: fit.assignments,
        assignments_surprise,
        iterations: fit.iterations,
        seed,
    })
}

struct Contingency {
    n: usize,
    cells: Vec<usize>,
    class_sizes: Vec<usize>,
    cluster_sizes: Vec<usize>,
}

fn index_labels<T: Eq + Hash>(labels: &[T]) -> (Vec<usize>, usize) {
    let mut ids: HashMap<&T, usize> = HashMap::new();
    let mapped = labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(l).or_insert(next)
        })
        .collect();
    (mapped, ids.len())
}

fn contingency<T: Eq + Hash, U: Eq + Hash>(gold: &[T], predicted: &[U]) -> Result<Contingency> {
    if gold.len() != predicted.len() {
        return Err(Error::input(format!(
            "label arrays differ in length ({} vs {})",
            gold.len(),
            predicted.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::input("empty labelling"));
    }
    let (g, nc) = index_labels(gold);
    let (p, nk) = index_labels(predicted);
    let mut cells = vec![0; nc * nk];
    let mut class_sizes = vec![0; nc];
    let mut cluster_sizes = vec![0; nk];
    for (&a, &b) in g.iter().zip(&p) {
        cells[a * nk + b] += 1;
        class_sizes[a] += 1;
        cluster_sizes[b] += 1;
    }
    Ok(Contingency {
        n: gold.len(),
        cells,
        class_sizes,
        cluster_sizes,
    })
}

fn entropy(sizes: &[usize], n: usize) -> f64 {
    let n = n as f64;
    -sizes
        .iter()
        .filter(|&&s| s > 0)
        .map(|&s| {
            let p = s as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Harmonic mean of homogeneity and completeness.
pub fn v_measure<T: Eq + Hash, U: Eq + Hash>(gold: &[T], predicted: &[U]) -> Result<f64> {
    let c = contingency(gold, predicted)?;
    let n = c.n as f64;
    let nk = c.cluster_sizes.len();
    let (mut h_class_given_cluster, mut h_cluster_given_class) = (0.0, 0.0);
    for (idx, &nij) in c.cells.iter().enumerate() {
        if nij == 0 {
            continue;
        }
        let (i, j) = (idx / nk, idx % nk);
        let p = nij as f64 / n;
        h_class_given_cluster -= p * (nij as f64 / c.cluster_sizes[j] as f64).ln();
        h_cluster_given_class -= p * (nij as f64 / c.class_sizes[i] as f64).ln();
    }
    let h_class = entropy(&c.class_sizes, c.n);
    let h_cluster = entropy(&c.cluster_sizes, c.n);
    let homogeneity = if h_class == 0.0 { 1.0 } else { 1.0 - h_class_given_cluster / h_class };
    let completeness = if h_cluster == 0.0 { 1.0 } else { 1.0 - h_cluster_given_class / h_cluster };
    Ok(if homogeneity + completeness == 0.0 {
        0.0
    } else {
        2.0 * homogeneity * completeness / (homogeneity + completeness)
    })
}

/// Adjusted Rand index from contingency pair counts.
pub fn adjusted_rand<T: Eq + Hash, U: Eq + Hash>(gold: &[T], predicted: &[U]) -> Result<f64> {
    let c = contingency(gold, predicted)?;
    let pairs = |x: usize| (x * x.saturating_sub(1) / 2) as f64;
    let index: f64 = c.cells.iter().map(|&x| pairs(x)).sum();
    let a: f64 = c.class_sizes.iter().map(|&x| pairs(x)).sum();
    let b: f64 = c.cluster_sizes.iter().map(|&x| pairs(x)).sum();
    let total = pairs(c.n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = a * b / total;
    let max = 0.5 * (a + b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}
