//! Per-query ensemble statistics and the Gaussian surprise score.
//!
//! For a query `q` and ensemble `E`, the surprise of a key `k` is the
//! probability that a random ensemble member is less similar to `q` than `k`
//! is, modelled as `½(1 + erf((Ψ(k,q) − μ) / (√2 σ)))` with `μ`, `σ` taken
//! from the distribution of `Ψ(e, q)` over `e ∈ E`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::{pairwise_matrix, EmbeddingRecord, EmbeddingSet, ScoreMatrix, SimilarityKind};

/// Percentile used as the upper one-sigma point by the robust estimator.
pub const ROBUST_UPPER_PERCENTILE: f64 = 0.8414;

/// How `μ` and `σ` are estimated from the ensemble similarities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatsEstimator {
    /// Sample mean and sample standard deviation (n − 1 denominator).
    #[default]
    GaussianMoments,
    /// Median as `μ`, `p84.14 − p50` as `σ`.
    RobustPercentile,
}

impl fmt::Display for StatsEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StatsEstimator::GaussianMoments => "gaussian",
            StatsEstimator::RobustPercentile => "percentile",
        })
    }
}

impl FromStr for StatsEstimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" | "gaussian-moments" | "moments" => Ok(StatsEstimator::GaussianMoments),
            "percentile" | "robust-percentile" | "robust" => Ok(StatsEstimator::RobustPercentile),
            other => Err(Error::input(format!("unknown estimator {other:?}"))),
        }
    }
}

/// Ensemble similarity statistics of one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryStats {
    pub query_id: String,
    pub mu: f64,
    pub sigma: f64,
    pub ensemble_size: usize,
    pub estimator: StatsEstimator,
    pub kind: SimilarityKind,
}

impl QueryStats {
    /// Stats supplied directly rather than estimated, e.g. published values.
    pub fn fixed(query_id: impl Into<String>, mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !mu.is_finite() || !sigma.is_finite() {
            return Err(Error::input(format!("invalid stats mu={mu} sigma={sigma}")));
        }
        Ok(Self {
            query_id: query_id.into(),
            mu,
            sigma,
            ensemble_size: 1,
            estimator: StatsEstimator::GaussianMoments,
            kind: SimilarityKind::Cosine,
        })
    }

    /// Estimates stats from the similarities `Ψ(e, q)` of every ensemble member.
    pub fn from_similarities(
        query_id: impl Into<String>,
        similarities: &[f64],
        kind: SimilarityKind,
        estimator: StatsEstimator,
    ) -> Result<Self> {
        if similarities.is_empty() {
            return Err(Error::input("empty ensemble"));
        }
        let (mu, sigma) = match estimator {
            StatsEstimator::GaussianMoments => mean_and_sample_std(similarities),
            StatsEstimator::RobustPercentile => {
                let mut sorted = similarities.to_vec();
                sorted.sort_by(f64::total_cmp);
                let p50 = percentile_sorted(&sorted, 0.5);
                let upper = percentile_sorted(&sorted, ROBUST_UPPER_PERCENTILE);
                (p50, (upper - p50).max(0.0))
            }
        };
        Ok(Self {
            query_id: query_id.into(),
            mu,
            sigma,
            ensemble_size: similarities.len(),
            estimator,
            kind,
        })
    }
}

/// Sample mean and standard deviation; the deviation is 0 for a single sample.
pub fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Percentile of sorted data with linear interpolation between order statistics.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn estimate_stats(
    ensemble: &EmbeddingSet,
    query: &EmbeddingRecord,
    kind: SimilarityKind,
    estimator: StatsEstimator,
) -> Result<QueryStats> {
    if ensemble.is_empty() {
        return Err(Error::input("empty ensemble"));
    }
    let sims = ensemble
        .iter()
        .map(|e| crate::similarity::similarity(&e.vector, &query.vector, kind))
        .collect::<Result<Vec<_>>>()?;
    QueryStats::from_similarities(query.id.clone(), &sims, kind, estimator)
}

/// Stats for every query, estimated from an ensemble × queries similarity matrix.
pub fn stats_from_matrix(
    ensemble_psi: &ScoreMatrix,
    queries: &EmbeddingSet,
    kind: SimilarityKind,
    estimator: StatsEstimator,
) -> Result<Vec<QueryStats>> {
    if ensemble_psi.rows() == 0 {
        return Err(Error::input("empty ensemble"));
    }
    if ensemble_psi.cols() != queries.len() {
        return Err(Error::input("similarity matrix does not match the query set"));
    }
    queries
        .records()
        .par_iter()
        .enumerate()
        .map(|(j, q)| {
            QueryStats::from_similarities(q.id.clone(), &ensemble_psi.column(j), kind, estimator)
        })
        .collect()
}

/// Gaussian surprise of a similarity value. For `σ = 0` the pointwise limit
/// is used: 1 above the mean, ½ at the mean, 0 below.
pub fn surprise(psi: f64, stats: &QueryStats) -> f64 {
    let QueryStats { mu, sigma, .. } = *stats;
    if sigma > 0.0 {
        0.5 * (1.0 + libm::erf((psi - mu) / (std::f64::consts::SQRT_2 * sigma)))
    } else if psi > mu {
        1.0
    } else if psi == mu {
        0.5
    } else {
        0.0
    }
}

/// Applies [`surprise`] to a keys × queries similarity matrix, column `j` using `stats[j]`.
pub fn surprise_from_psi(psi: &ScoreMatrix, stats: &[QueryStats]) -> Result<ScoreMatrix> {
    if stats.len() != psi.cols() {
        return Err(Error::input(format!(
            "{} stats for {} queries",
            stats.len(),
            psi.cols()
        )));
    }
    Ok(psi.map(|_, j, v| surprise(v, &stats[j])))
}

/// `Σ(key_i, query_j | ensemble)` for every pair. Stats are computed once per query.
pub fn surprise_matrix(
    keys: &EmbeddingSet,
    queries: &EmbeddingSet,
    ensemble: &EmbeddingSet,
    kind: SimilarityKind,
    estimator: StatsEstimator,
) -> Result<ScoreMatrix> {
    if ensemble.is_empty() {
        return Err(Error::input("empty ensemble"));
    }
    let ensemble_psi = pairwise_matrix(ensemble, queries, kind)?;
    let stats = stats_from_matrix(&ensemble_psi, queries, kind, estimator)?;
    let psi = pairwise_matrix(keys, queries, kind)?;
    surprise_from_psi(&psi, &stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn stats(mu: f64, sigma: f64) -> QueryStats {
        QueryStats::fixed("q", mu, sigma).unwrap()
    }

    /// Standard normal CDF through the complementary error function's continued
    /// fraction, independent of `libm::erf`.
    fn phi_oracle(z: f64) -> f64 {
        // Lentz evaluation of erfc(x) = exp(-x²)/√π · 1/(x + 1/2/(x + 1/(x + 3/2/(x + ...))))
        fn erfc_pos(x: f64) -> f64 {
            if x < 2.0 {
                // Maclaurin series of erf for small arguments
                let mut term = x;
                let mut sum = x;
                for n in 1..200 {
                    term *= -x * x / n as f64;
                    sum += term / (2 * n + 1) as f64;
                }
                return 1.0 - 2.0 / std::f64::consts::PI.sqrt() * sum;
            }
            let mut f = 0.0;
            for k in (1..200).rev() {
                f = (k as f64 / 2.0) / (x + f);
            }
            (-x * x).exp() / std::f64::consts::PI.sqrt() / (x + f)
        }
        let x = z / std::f64::consts::SQRT_2;
        if x >= 0.0 {
            1.0 - 0.5 * erfc_pos(x)
        } else {
            0.5 * erfc_pos(-x)
        }
    }

    #[test]
    fn single_sample_ensemble() {
        let s = QueryStats::from_similarities("q", &[0.8], SimilarityKind::Cosine, StatsEstimator::GaussianMoments)
            .unwrap();
        assert_eq!((s.mu, s.sigma, s.ensemble_size), (0.8, 0.0, 1));
        let r = QueryStats::from_similarities("q", &[0.8], SimilarityKind::Cosine, StatsEstimator::RobustPercentile)
            .unwrap();
        assert_eq!((r.mu, r.sigma), (0.8, 0.0));
    }

    #[test]
    fn three_sample_moments() {
        let s = QueryStats::from_similarities(
            "q",
            &[0.7, 0.8, 0.9],
            SimilarityKind::Cosine,
            StatsEstimator::GaussianMoments,
        )
        .unwrap();
        assert_abs_diff_eq!(s.mu, 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(s.sigma, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn percentile_interpolates_linearly() {
        let sorted = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile_sorted(&sorted, 0.5), 2.5);
        assert_abs_diff_eq!(percentile_sorted(&sorted, 0.8414), 1.0 + 3.0 * 0.8414, epsilon = 1e-12);
        assert_eq!(percentile_sorted(&sorted, 0.0), 1.0);
        assert_eq!(percentile_sorted(&sorted, 1.0), 4.0);
    }

    #[test]
    fn empty_ensemble_rejected() {
        assert!(QueryStats::from_similarities("q", &[], SimilarityKind::Cosine, StatsEstimator::GaussianMoments).is_err());
        let empty = EmbeddingSet::default();
        let q = EmbeddingRecord::new("q", vec![1.0]);
        assert!(estimate_stats(&empty, &q, SimilarityKind::Cosine, StatsEstimator::GaussianMoments).is_err());
    }

    #[test]
    fn monte_carlo_stats_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let normal = Normal::new(0.805, 0.020).unwrap();
        let draws: Vec<f64> = (0..100_000).map(|_| normal.sample(&mut rng)).collect();
        for est in [StatsEstimator::GaussianMoments, StatsEstimator::RobustPercentile] {
            let s = QueryStats::from_similarities("q", &draws, SimilarityKind::Cosine, est).unwrap();
            assert_abs_diff_eq!(s.mu, 0.805, epsilon = 1e-3);
            assert_abs_diff_eq!(s.sigma, 0.020, epsilon = 1e-3);
        }
    }

    #[test]
    fn surprise_table_values() {
        assert_abs_diff_eq!(surprise(0.850, &stats(0.805, 0.020)), 0.987, epsilon = 1e-3);
        let alsatian = surprise(0.849, &stats(0.770, 0.022));
        assert!(alsatian > 0.9998 && alsatian < 1.0);
        assert_eq!(format!("{:.1}", alsatian * 100.0), "100.0");
    }

    #[test]
    fn surprise_at_mean_and_one_sigma() {
        assert_eq!(surprise(0.4, &stats(0.4, 0.1)), 0.5);
        assert_abs_diff_eq!(surprise(0.5, &stats(0.4, 0.1)), 0.841345, epsilon = 1e-6);
        assert_abs_diff_eq!(phi_oracle(1.0), 0.841345, epsilon = 1e-6);
    }

    #[test]
    fn degenerate_sigma() {
        let s = stats(0.5, 0.0);
        assert_eq!(surprise(0.6, &s), 1.0);
        assert_eq!(surprise(0.5, &s), 0.5);
        assert_eq!(surprise(0.4, &s), 0.0);
    }

    #[test]
    fn single_element_surprise_matrix() {
        let e = EmbeddingSet::from_vectors(vec![vec![1.0, 2.0]]).unwrap();
        let q = EmbeddingSet::from_vectors(vec![vec![2.0, 1.0]]).unwrap();
        let m = surprise_matrix(&e, &q, &e, SimilarityKind::Cosine, StatsEstimator::GaussianMoments).unwrap();
        // key is the only ensemble member, so psi == mu and sigma == 0
        assert_eq!(m.get(0, 0), 0.5);
    }

    #[test]
    fn surprise_is_asymmetric() {
        // a specific key among broad neighbours vs a generic key every element resembles
        let s = EmbeddingSet::from_vectors(vec![
            vec![1.0, 0.0, 0.0],
            vec![0.9, 0.3, 0.0],
            vec![0.8, 0.0, 0.6],
            vec![0.1, 0.9, 0.4],
        ])
        .unwrap();
        let m = surprise_matrix(&s, &s, &s, SimilarityKind::Cosine, StatsEstimator::GaussianMoments).unwrap();
        let asym = (0..4)
            .flat_map(|i| (0..4).map(move |j| (i, j)))
            .any(|(i, j)| (m.get(i, j) - m.get(j, i)).abs() > 1e-3);
        assert!(asym);
        assert!((m.get(0, 3) - m.get(3, 0)).abs() > 1e-3);
    }

    #[test]
    fn median_centering_for_robust_estimator() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let vectors: Vec<Vec<f64>> = (0..101)
            .map(|_| (0..8).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        let set = EmbeddingSet::from_vectors(vectors).unwrap();
        let queries = set.subset(&[0, 1, 2]).unwrap();
        let m = surprise_matrix(&set, &queries, &set, SimilarityKind::Cosine, StatsEstimator::RobustPercentile)
            .unwrap();
        for j in 0..queries.len() {
            let mut col = m.column(j);
            col.sort_by(f64::total_cmp);
            let median = percentile_sorted(&col, 0.5);
            assert!((median - 0.5).abs() <= 1.0 / set.len() as f64, "median {median}");
        }
    }

    #[test]
    fn surprise_matrix_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut gen = |n: usize| {
            EmbeddingSet::from_vectors(
                (0..n).map(|_| (0..6).map(|_| normal.sample(&mut rng)).collect()).collect(),
            )
            .unwrap()
        };
        let keys = gen(20);
        let queries = gen(5);
        let ensemble = gen(50);
        for est in [StatsEstimator::GaussianMoments, StatsEstimator::RobustPercentile] {
            let m = surprise_matrix(&keys, &queries, &ensemble, SimilarityKind::Cosine, est).unwrap();
            for (j, q) in queries.iter().enumerate() {
                let st = estimate_stats(&ensemble, q, SimilarityKind::Cosine, est).unwrap();
                for (i, k) in keys.iter().enumerate() {
                    let psi = crate::similarity::similarity(&k.vector, &q.vector, SimilarityKind::Cosine).unwrap();
                    assert_eq!(m.get(i, j), surprise(psi, &st));
                }
            }
        }
    }

    #[test]
    fn erf_matches_oracle() {
        for i in -60..=60 {
            let z = i as f64 / 10.0;
            let s = surprise(z, &stats(0.0, 1.0));
            assert_abs_diff_eq!(s, phi_oracle(z), epsilon = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn surprise_bounded_and_monotone(
            mu in -1.0f64..1.0,
            sigma in 0.0f64..0.5,
            a in -1.0f64..1.0,
            b in -1.0f64..1.0,
        ) {
            let s = stats(mu, sigma);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (sl, sh) = (surprise(lo, &s), surprise(hi, &s));
            prop_assert!((0.0..=1.0).contains(&sl) && (0.0..=1.0).contains(&sh));
            prop_assert!(sl <= sh);
        }
    }
}
