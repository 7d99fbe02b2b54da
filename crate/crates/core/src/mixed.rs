//! Rescaled similarity and the mixed surprise score.
//!
//! The rescaled similarity `Ψ̂` is a two-segment piecewise-linear map of `[0, 1]`
//! onto itself, `(0,0) → (b,c) → (1,1)`, with `b` the ensemble median and `c`
//! chosen so the mapped ensemble has mean ½. Because the surprise score also
//! centres on ½ the two can be blended: `Σ_w = (1 − w) Ψ̂ + w Σ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{percentile_sorted, surprise, QueryStats};

/// Default cardinality scale of the crossover weight.
pub const DEFAULT_N_CROSS: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescaleMap {
    pub breakpoint_in: f64,
    pub breakpoint_out: f64,
    /// Set when no breakpoint could reach mean ½ and the identity was used instead.
    pub degenerate: bool,
}

impl RescaleMap {
    pub fn identity() -> Self {
        Self {
            breakpoint_in: 0.5,
            breakpoint_out: 0.5,
            degenerate: false,
        }
    }

    fn fallback() -> Self {
        Self {
            degenerate: true,
            ..Self::identity()
        }
    }

    /// Fits the map to a sample of ensemble similarities. Values are clamped to
    /// `[0, 1]` first. Falls back to a flagged identity map when the median sits
    /// on a domain endpoint or the mean constraint has no solution in `[0, 1]`.
    pub fn fit(similarities: &[f64]) -> Result<Self> {
        if similarities.is_empty() {
            return Err(Error::input("cannot fit a rescale map to an empty sample"));
        }
        if similarities.iter().any(|x| !x.is_finite()) {
            return Err(Error::input("non-finite similarity in rescale sample"));
        }
        let mut sorted: Vec<f64> = similarities.iter().map(|x| x.clamp(0.0, 1.0)).collect();
        sorted.sort_by(f64::total_cmp);
        let b = percentile_sorted(&sorted, 0.5);
        if b <= 0.0 || b >= 1.0 {
            return Ok(Self::fallback());
        }
        // The mapped mean is affine in c: mean = offset + slope * c.
        let (mut offset, mut slope) = (0.0, 0.0);
        for &x in &sorted {
            if x <= b {
                slope += x / b;
            } else {
                let t = (x - b) / (1.0 - b);
                offset += t;
                slope += 1.0 - t;
            }
        }
        let n = sorted.len() as f64;
        let (offset, slope) = (offset / n, slope / n);
        if slope <= 0.0 {
            return Ok(if (offset - 0.5).abs() < 1e-12 {
                Self {
                    breakpoint_in: b,
                    breakpoint_out: b,
                    degenerate: false,
                }
            } else {
                Self::fallback()
            });
        }
        let c = (0.5 - offset) / slope;
        if !(0.0..=1.0).contains(&c) {
            return Ok(Self::fallback());
        }
        Ok(Self {
            breakpoint_in: b,
            breakpoint_out: c,
            degenerate: false,
        })
    }

    /// `Ψ̂(psi)`; inputs outside `[0, 1]` are clamped.
    pub fn apply(&self, psi: f64) -> f64 {
        let x = psi.clamp(0.0, 1.0);
        let (b, c) = (self.breakpoint_in, self.breakpoint_out);
        if x <= b {
            x * (c / b)
        } else {
            c + (x - b) * ((1.0 - c) / (1.0 - b))
        }
    }
}

/// Whether one rescale map is fit over all query columns or one per query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RescaleScope {
    /// One map over every ensemble × query similarity. Keeps the `w = 0`
    /// ranking across queries identical to the raw similarity ranking.
    #[default]
    Global,
    PerQuery,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "value")]
pub enum WeightMode {
    Fixed(f64),
    Crossover(f64),
}

impl Default for WeightMode {
    fn default() -> Self {
        WeightMode::Crossover(DEFAULT_N_CROSS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MixConfig {
    pub weight_mode: WeightMode,
    #[serde(default)]
    pub rescale: RescaleScope,
}

impl MixConfig {
    pub fn fixed(w: f64) -> Self {
        Self {
            weight_mode: WeightMode::Fixed(w),
            rescale: RescaleScope::default(),
        }
    }

    pub fn crossover(n_cross: f64) -> Self {
        Self {
            weight_mode: WeightMode::Crossover(n_cross),
            rescale: RescaleScope::default(),
        }
    }

    /// Plain similarity ranking.
    pub fn cosine() -> Self {
        Self::fixed(0.0)
    }

    /// Pure surprise ranking.
    pub fn surprise() -> Self {
        Self::fixed(1.0)
    }

    /// The surprise weight for an ensemble of `ensemble_size` members.
    pub fn weight(&self, ensemble_size: usize) -> Result<f64> {
        match self.weight_mode {
            WeightMode::Fixed(w) => {
                check_weight(w)?;
                Ok(w)
            }
            WeightMode::Crossover(n) => crossover_weight(ensemble_size, n),
        }
    }
}

fn check_weight(w: f64) -> Result<()> {
    if (0.0..=1.0).contains(&w) {
        Ok(())
    } else {
        Err(Error::input(format!("surprise weight {w} outside [0, 1]")))
    }
}

/// `tanh(|E| / N_cross)`.
pub fn crossover_weight(ensemble_size: usize, n_cross: f64) -> Result<f64> {
    if !(n_cross > 0.0) || !n_cross.is_finite() {
        return Err(Error::input(format!("n_cross must be positive, got {n_cross}")));
    }
    Ok((ensemble_size as f64 / n_cross).tanh())
}

pub fn mixed_surprise(psi: f64, stats: &QueryStats, map: &RescaleMap, w: f64) -> Result<f64> {
    check_weight(w)?;
    Ok(blend(map.apply(psi), surprise(psi, stats), w))
}

#[inline]
pub(crate) fn blend(rescaled: f64, surprise: f64, w: f64) -> f64 {
    (1.0 - w) * rescaled + w * surprise
}


/// Precomputed per-query statistics, rescale maps and surprise weight for
/// scoring keys against a fixed query set.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedScorer {
    stats: Vec<QueryStats>,
    maps: Vec<RescaleMap>,
    weight: f64,
}

impl MixedScorer {
    /// Fits the scorer from an ensemble × queries similarity matrix.
    pub fn fit(
        ensemble_psi: &crate::similarity::ScoreMatrix,
        queries: &crate::similarity::EmbeddingSet,
        mix: &MixConfig,
        kind: crate::similarity::SimilarityKind,
        estimator: crate::stats::StatsEstimator,
    ) -> Result<Self> {
        let stats = crate::stats::stats_from_matrix(ensemble_psi, queries, kind, estimator)?;
        let maps = match mix.rescale {
            RescaleScope::Global => vec![RescaleMap::fit(ensemble_psi.values())?],
            RescaleScope::PerQuery => (0..ensemble_psi.cols())
                .map(|j| RescaleMap::fit(&ensemble_psi.column(j)))
                .collect::<Result<_>>()?,
        };
        let weight = mix.weight(ensemble_psi.rows())?;
        Ok(Self { stats, maps, weight })
    }

    /// Assembles a scorer from known parts. `maps` holds either one shared map
    /// or one map per query.
    pub fn from_parts(stats: Vec<QueryStats>, maps: Vec<RescaleMap>, weight: f64) -> Result<Self> {
        check_weight(weight)?;
        if maps.len() != 1 && maps.len() != stats.len() {
            return Err(Error::input(format!(
                "{} rescale maps for {} queries",
                maps.len(),
                stats.len()
            )));
        }
        Ok(Self { stats, maps, weight })
    }

    pub fn stats(&self) -> &[QueryStats] {
        &self.stats
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn map(&self, query: usize) -> &RescaleMap {
        if self.maps.len() == 1 {
            &self.maps[0]
        } else {
            &self.maps[query]
        }
    }

    pub fn num_queries(&self) -> usize {
        self.stats.len()
    }

    pub fn rescaled(&self, psi: f64, query: usize) -> f64 {
        self.map(query).apply(psi)
    }

    pub fn surprise(&self, psi: f64, query: usize) -> f64 {
        surprise(psi, &self.stats[query])
    }

    /// `Σ_w(psi)` for query column `query`.
    pub fn score(&self, psi: f64, query: usize) -> f64 {
        blend(self.rescaled(psi, query), self.surprise(psi, query), self.weight)
    }

    pub fn score_matrix(
        &self,
        psi: &crate::similarity::ScoreMatrix,
    ) -> Result<crate::similarity::ScoreMatrix> {
        if psi.cols() != self.stats.len() {
            return Err(Error::input(format!(
                "matrix has {} columns, scorer has {} queries",
                psi.cols(),
                self.stats.len()
            )));
        }
        Ok(psi.map(|_, j, v| self.score(v, j)))
    }
}
