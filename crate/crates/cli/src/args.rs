use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use surprise_core::fewshot::Optimizer;
use surprise_core::report::Sampling;
use surprise_core::{RescaleScope, RunConfig, SimilarityKind, StatsEstimator};

#[derive(Debug, Parser)]
#[command(name = "surprise", version, about = "Ensemble-normalised surprise similarity over embedding files")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Score every key against every query (long-format CSV).
    Score(ScoreArgs),
    /// Zero-shot classify documents against embedded label queries.
    Classify(ClassifyArgs),
    /// Train a linear adapter on labelled documents.
    Train(TrainArgs),
    /// Spherical K-means with cosine and surprise assignment.
    Cluster(ClusterArgs),
    /// Run one of the experiment studies.
    #[command(subcommand)]
    Study(Study),
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Study {
    /// Cosine vs surprise F1 across ensemble sizes.
    Crossover(CrossoverArgs),
    /// Few-shot training across shot counts and sampling regimes.
    Fewshot(FewshotArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Cosine,
    EuclideanSimilarity,
    ManhattanSimilarity,
}

impl From<KindArg> for SimilarityKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Cosine => SimilarityKind::Cosine,
            KindArg::EuclideanSimilarity => SimilarityKind::Euclidean,
            KindArg::ManhattanSimilarity => SimilarityKind::Manhattan,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EstimatorArg {
    Gaussian,
    Percentile,
}

impl From<EstimatorArg> for StatsEstimator {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::Gaussian => StatsEstimator::GaussianMoments,
            EstimatorArg::Percentile => StatsEstimator::RobustPercentile,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RescaleArg {
    Global,
    PerQuery,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OptimizerArg {
    Adamw,
    Sgd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SamplingArg {
    Balanced,
    Unbalanced,
}

impl From<SamplingArg> for Sampling {
    fn from(s: SamplingArg) -> Self {
        match s {
            SamplingArg::Balanced => Sampling::Balanced,
            SamplingArg::Unbalanced => Sampling::Unbalanced,
        }
    }
}

/// Settings shared by every subcommand. Flags override the config file, which overrides defaults.
#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    #[arg(long, value_enum)]
    pub estimator: Option<EstimatorArg>,
    /// Fixed surprise weight in [0, 1].
    #[arg(long = "w", value_name = "X", conflicts_with = "n_cross")]
    pub weight: Option<f64>,
    /// Crossover ensemble size; used when no fixed weight is given.
    #[arg(long, value_name = "N")]
    pub n_cross: Option<f64>,
    #[arg(long, value_enum)]
    pub rescale: Option<RescaleArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Record wall-clock times in reports.
    #[arg(long)]
    pub timing: bool,
}

/// Label queries: an embedder output file, optionally resolved through a label list and template.
#[derive(Debug, Args)]
pub struct Labels {
    #[arg(long, value_name = "FILE")]
    pub labels_embedded: PathBuf,
    /// Comma-separated labels to pick from the embedded file by rendered text.
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<String>>,
    /// Template with one `{label}` slot.
    #[arg(long)]
    pub template: Option<String>,
}

#[derive(Debug, Args)]
pub struct Hyper {
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub ce_threshold: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "FILE")]
    pub keys: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub queries: PathBuf,
    /// Defaults to the keys.
    #[arg(long, value_name = "FILE")]
    pub ensemble: Option<PathBuf>,
    /// Output CSV; stdout when absent.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub labels: Labels,
    #[arg(long, value_name = "FILE")]
    pub docs: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub gold: Option<PathBuf>,
    /// Defaults to the documents.
    #[arg(long, value_name = "FILE")]
    pub ensemble: Option<PathBuf>,
    /// Use a seeded random subset of this many ensemble members.
    #[arg(long, value_name = "N")]
    pub ensemble_sample: Option<usize>,
    /// Adapter from `train`, applied to documents, queries and ensemble.
    #[arg(long, value_name = "FILE")]
    pub adapter: Option<PathBuf>,
    /// Predictions CSV; metrics and config are written next to it.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub labels: Labels,
    #[command(flatten)]
    pub hyper: Hyper,
    #[arg(long, value_name = "FILE")]
    pub docs: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub gold: PathBuf,
    /// Adapter file; history and config are written next to it.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "FILE")]
    pub docs: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long, value_name = "FILE")]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Per-repeat CSV; summary and config are written next to it.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CrossoverArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub labels: Labels,
    #[arg(long, value_name = "FILE")]
    pub docs: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub gold: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct FewshotArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub labels: Labels,
    #[command(flatten)]
    pub hyper: Hyper,
    #[arg(long, value_name = "FILE")]
    pub train_docs: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub train_gold: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub docs: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub gold: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub shots: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', value_enum)]
    pub sampling: Option<Vec<SamplingArg>>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

impl Common {
    /// Defaults, then the config file, then these flags.
    pub fn resolve(&self) -> Result<RunConfig, crate::CliError> {
        let mut config = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| crate::CliError::Usage(format!("{}: {e}", path.display())))?;
                RunConfig::from_json(&text).map_err(|e| crate::CliError::Usage(e.to_string()))?
            }
            None => RunConfig::default(),
        };
        if let Some(k) = self.kind {
            config.kind = k.into();
        }
        if let Some(e) = self.estimator {
            config.estimator = e.into();
        }
        if let Some(w) = self.weight {
            config.weight = Some(w);
        }
        if let Some(n) = self.n_cross {
            config.n_cross = n;
            config.weight = None;
        }
        if let Some(r) = self.rescale {
            config.rescale = match r {
                RescaleArg::Global => RescaleScope::Global,
                RescaleArg::PerQuery => RescaleScope::PerQuery,
            };
        }
        if let Some(s) = self.seed {
            config.master_seed = s;
            config.train.seed = s;
        }
        if self.timing {
            config.record_wall_time = true;
        }
        Ok(config)
    }
}

impl Labels {
    pub fn apply(&self, config: &mut RunConfig) {
        if let Some(t) = &self.template {
            config.template = t.clone();
        }
    }
}

impl Hyper {
    pub fn apply(&self, config: &mut RunConfig) {
        let t = &mut config.train;
        let pairs = [
            (self.epsilon, &mut t.epsilon),
            (self.gamma, &mut t.gamma),
            (self.delta, &mut t.delta),
            (self.lr, &mut t.learning_rate),
            (self.weight_decay, &mut t.weight_decay),
            (self.ce_threshold, &mut t.ce_threshold),
        ];
        for (flag, field) in pairs {
            if let Some(v) = flag {
                *field = v;
            }
        }
        if let Some(b) = self.batch_size {
            t.batch_size = b;
        }
        if let Some(m) = self.max_epochs {
            t.max_epochs = m;
        }
        if let Some(o) = self.optimizer {
            t.optimizer = match o {
                OptimizerArg::Adamw => Optimizer::adamw(),
                OptimizerArg::Sgd => Optimizer::Sgd,
            };
        }
    }
}
