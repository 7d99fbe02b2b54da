//! Resolved run configuration: every tunable of a CLI run in one serialisable place.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::DEFAULT_TEMPLATE;
use crate::error::{Error, Result};
use crate::fewshot::TrainConfig;
use crate::mixed::{MixConfig, RescaleScope, WeightMode, DEFAULT_N_CROSS};
use crate::similarity::SimilarityKind;
use crate::stats::StatsEstimator;

/// Ensemble sizes of the crossover study.
pub const DEFAULT_ENSEMBLE_SIZES: [usize; 7] = [3, 9, 27, 81, 243, 729, 2187];
/// Shots per label of the few-shot study.
pub const DEFAULT_SHOTS: [usize; 7] = [3, 6, 9, 12, 15, 18, 21];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub kind: SimilarityKind,
    pub estimator: StatsEstimator,
    /// Fixed surprise weight; when absent the crossover weight is used.
    pub weight: Option<f64>,
    pub n_cross: f64,
    pub rescale: RescaleScope,
    pub template: String,
    pub train: TrainConfig,
    pub master_seed: u64,
    pub repeats: usize,
    pub ensemble_sizes: Vec<usize>,
    pub shots: Vec<usize>,
    pub max_iter: usize,
    pub tol: f64,
    /// Write measured wall times into reports. Off by default so reruns are byte-identical.
    pub record_wall_time: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            kind: SimilarityKind::Cosine,
            estimator: StatsEstimator::GaussianMoments,
            weight: None,
            n_cross: DEFAULT_N_CROSS,
            rescale: RescaleScope::Global,
            template: DEFAULT_TEMPLATE.to_string(),
            train: TrainConfig::default(),
            master_seed: 0,
            repeats: 10,
            ensemble_sizes: DEFAULT_ENSEMBLE_SIZES.to_vec(),
            shots: DEFAULT_SHOTS.to_vec(),
            max_iter: crate::clustering::DEFAULT_MAX_ITER,
            tol: crate::clustering::DEFAULT_TOL,
            record_wall_time: false,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::input(format!("config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn mix(&self) -> MixConfig {
        MixConfig {
            weight_mode: match self.weight {
                Some(w) => WeightMode::Fixed(w),
                None => WeightMode::Crossover(self.n_cross),
            },
            rescale: self.rescale,
        }
    }

    /// Rejects values no command can run with.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let Some(w) = self.weight {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::input(format!("weight {w} outside [0, 1]")));
            }
        }
        if !(self.n_cross.is_finite() && self.n_cross > 0.0) {
            return Err(Error::input(format!("n_cross must be positive, got {}", self.n_cross)));
        }
        if self.template.matches("{label}").count() != 1 {
            return Err(Error::input("template must contain {label} exactly once"));
        }
        if self.repeats == 0 {
            return Err(Error::input("repeats must be at least 1"));
        }
        if self.ensemble_sizes.contains(&0) || self.shots.contains(&0) {
            return Err(Error::input("ensemble sizes and shot counts must be positive"));
        }
        if !(self.tol.is_finite() && self.tol >= 0.0) {
            return Err(Error::input(format!("tol must be non-negative, got {}", self.tol)));
        }
        Ok(())
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn digest(&self) -> String {
        digest_hex(&serde_json::to_vec(self).expect("config serialises"))
    }
}

pub(crate) fn digest_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
