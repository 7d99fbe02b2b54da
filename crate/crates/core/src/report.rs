//! Experiment harness: the ensemble-size crossover study, the few-shot study,
//! and CSV / text / plot-data emission of their run records.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{classify, evaluate};
use crate::error::{Error, Result};
use crate::fewshot::{train, TrainConfig};
use crate::mixed::{MixConfig, RescaleScope, WeightMode};
use crate::similarity::{EmbeddingSet, SimilarityKind};
use crate::stats::{mean_and_sample_std, StatsEstimator};

pub const CSV_HEADER: &str = "variant,seed,size,accuracy,macro_f1,wall_time_s";

/// Documents, their gold labels (id → label) and one query per label.
#[derive(Debug, Clone, Copy)]
pub struct Dataset<'a> {
    pub docs: &'a EmbeddingSet,
    pub gold: &'a HashMap<String, String>,
    pub queries: &'a EmbeddingSet,
}

impl<'a> From<&'a crate::synthetic::LabeledData> for Dataset<'a> {
    fn from(d: &'a crate::synthetic::LabeledData) -> Self {
        Dataset {
            docs: &d.docs,
            gold: &d.gold,
            queries: &d.queries,
        }
    }
}

impl Dataset<'_> {
    fn labels(&self) -> Vec<String> {
        self.queries.ids().map(str::to_string).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub ensemble_sizes: Vec<usize>,
    pub shots: Vec<usize>,
    pub repeats: usize,
    pub master_seed: u64,
    pub n_cross: f64,
    pub rescale: RescaleScope,
    pub kind: SimilarityKind,
    pub estimator: StatsEstimator,
    pub train: TrainConfig,
    pub record_wall_time: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            ensemble_sizes: crate::config::DEFAULT_ENSEMBLE_SIZES.to_vec(),
            shots: crate::config::DEFAULT_SHOTS.to_vec(),
            repeats: 10,
            master_seed: 0,
            n_cross: crate::mixed::DEFAULT_N_CROSS,
            rescale: RescaleScope::Global,
            kind: SimilarityKind::Cosine,
            estimator: StatsEstimator::GaussianMoments,
            train: TrainConfig::default(),
            record_wall_time: false,
        }
    }
}

impl From<&crate::config::RunConfig> for ExperimentSpec {
    fn from(c: &crate::config::RunConfig) -> Self {
        Self {
            ensemble_sizes: c.ensemble_sizes.clone(),
            shots: c.shots.clone(),
            repeats: c.repeats,
            master_seed: c.master_seed,
            n_cross: c.n_cross,
            rescale: c.rescale,
            kind: c.kind,
            estimator: c.estimator,
            train: c.train.clone(),
            record_wall_time: c.record_wall_time,
        }
    }
}

impl ExperimentSpec {
    fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::input("repeats must be at least 1"));
        }
        Ok(())
    }

    fn mix(&self, weight_mode: WeightMode) -> MixConfig {
        MixConfig {
            weight_mode,
            rescale: self.rescale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: String,
    pub seed: u64,
    /// Ensemble size or shot count.
    pub size: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub wall_time_s: f64,
}

/// Seed of one study cell; a pure function of its coordinates.
pub fn cell_seed(master_seed: u64, size: usize, repeat: usize) -> u64 {
    // splitmix64 finaliser over a fixed-offset combination
    let mut z = master_seed
        .wrapping_add((size as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((repeat as u64).wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded random subset of `size` members, kept in their original order.
pub fn ensemble_sample(set: &EmbeddingSet, size: usize, seed: u64) -> Result<EmbeddingSet> {
    if size == 0 || size > set.len() {
        return Err(Error::input(format!(
            "ensemble size {size} outside 1..={}",
            set.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, set.len(), size).into_vec();
    idx.sort_unstable();
    set.subset(&idx)
}

fn timed<T>(record: bool, f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, if record { start.elapsed().as_secs_f64() } else { 0.0 }))
}

fn sorted(mut records: Vec<RunRecord>) -> Vec<RunRecord> {
    records.sort_by(|a, b| {
        (a.variant.as_str(), a.size, a.seed).cmp(&(b.variant.as_str(), b.size, b.seed))
    });
    records
}

/// Mean ± sample standard deviation of macro-F1 per (variant, size).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: String,
    pub size: usize,
    pub runs: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_f1: f64,
    pub std_f1: f64,
}

pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut cells: BTreeMap<(&str, usize), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        cells.entry((r.variant.as_str(), r.size)).or_default().push(r);
    }
    cells
        .into_iter()
        .map(|((variant, size), rs)| {
            let acc: Vec<f64> = rs.iter().map(|r| r.accuracy).collect();
            let f1: Vec<f64> = rs.iter().map(|r| r.macro_f1).collect();
            let (mean_accuracy, std_accuracy) = mean_and_sample_std(&acc);
            let (mean_f1, std_f1) = mean_and_sample_std(&f1);
            SummaryRow {
                variant: variant.to_string(),
                size,
                runs: rs.len(),
                mean_accuracy,
                std_accuracy,
                mean_f1,
                std_f1,
            }
        })
        .collect()
}

/// One point of a plotted curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub x: f64,
    pub y: f64,
    pub err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub records: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
    /// Named curves, in emission order.
    pub series: Vec<(String, Vec<PlotPoint>)>,
}

fn f1_series(summary: &[SummaryRow]) -> Vec<(String, Vec<PlotPoint>)> {
    let mut by_variant: BTreeMap<&str, Vec<PlotPoint>> = BTreeMap::new();
    for row in summary {
        by_variant.entry(&row.variant).or_default().push(PlotPoint {
            x: row.size as f64,
            y: row.mean_f1,
            err: row.std_f1,
        });
    }
    by_variant
        .into_iter()
        .map(|(v, pts)| (format!("{v} macro_f1"), pts))
        .collect()
}

pub const COSINE: &str = "cosine";
pub const SURPRISE: &str = "surprise";

/// Ratio of mean cosine F1 to mean surprise F1 for each ensemble size, with the
/// error propagated from both standard deviations.
pub fn f1_ratio(summary: &[SummaryRow], numerator: &str, denominator: &str) -> Vec<PlotPoint> {
    let lookup: HashMap<(&str, usize), &SummaryRow> =
        summary.iter().map(|r| ((r.variant.as_str(), r.size), r)).collect();
    let mut sizes: Vec<usize> = summary.iter().map(|r| r.size).collect();
    sizes.sort_unstable();
    sizes.dedup();
    sizes
        .into_iter()
        .filter_map(|s| {
            let a = lookup.get(&(numerator, s))?;
            let b = lookup.get(&(denominator, s))?;
            let y = a.mean_f1 / b.mean_f1;
            let rel = |m: f64, sd: f64| if m == 0.0 { 0.0 } else { sd / m };
            let err = y.abs() * (rel(a.mean_f1, a.std_f1).powi(2) + rel(b.mean_f1, b.std_f1).powi(2)).sqrt();
            Some(PlotPoint { x: s as f64, y, err })
        })
        .collect()
}

/// For each ensemble size and repeat, a seeded random subset of the documents is
/// the ensemble; every document is classified with plain cosine (`w = 0`) and
/// with surprise (`w = 1`).
pub fn crossover_study(data: Dataset<'_>, spec: &ExperimentSpec) -> Result<StudyReport> {
    spec.validate()?;
    let n = data.docs.len();
    if let Some(&s) = spec.ensemble_sizes.iter().find(|&&s| s == 0 || s > n) {
        return Err(Error::input(format!(
            "ensemble size {s} outside 1..={n} (test set size)"
        )));
    }
    let labels = data.labels();
    let cells: Vec<(usize, usize)> = spec
        .ensemble_sizes
        .iter()
        .flat_map(|&s| (0..spec.repeats).map(move |r| (s, r)))
        .collect();
    let records: Vec<Vec<RunRecord>> = cells
        .par_iter()
        .map(|&(size, repeat)| {
            let seed = cell_seed(spec.master_seed, size, repeat);
            let ensemble = ensemble_sample(data.docs, size, seed)?;
            [(COSINE, WeightMode::Fixed(0.0)), (SURPRISE, WeightMode::Fixed(1.0))]
                .into_iter()
                .map(|(variant, mode)| {
                    let (eval, wall) = timed(spec.record_wall_time, || {
                        let preds = classify(
                            data.docs,
                            data.queries,
                            &ensemble,
                            &spec.mix(mode),
                            spec.kind,
                            spec.estimator,
                        )?;
                        evaluate(&preds, data.gold, &labels)
                    })?;
                    Ok(RunRecord {
                        variant: variant.to_string(),
                        seed,
                        size,
                        accuracy: eval.accuracy,
                        macro_f1: eval.macro_f1,
                        wall_time_s: wall,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let records = sorted(records.concat());
    let summary = summarize(&records);
    let mut series = f1_series(&summary);
    series.push((
        "ratio cosine/surprise".to_string(),
        f1_ratio(&summary, COSINE, SURPRISE),
    ));
    Ok(StudyReport {
        records,
        summary,
        series,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    /// `k` examples of every label.
    Balanced,
    /// `k · n_labels` examples drawn uniformly.
    Unbalanced,
}

impl Sampling {
    pub fn tag(self) -> &'static str {
        match self {
            Sampling::Balanced => "balanced",
            Sampling::Unbalanced => "unbalanced",
        }
    }
}

impl FromStr for Sampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balanced" => Ok(Sampling::Balanced),
            "unbalanced" => Ok(Sampling::Unbalanced),
            other => Err(Error::input(format!("unknown sampling {other:?}"))),
        }
    }
}

/// Indices into `data.docs` of one few-shot training sample.
pub fn sample_training_set(
    data: Dataset<'_>,
    sampling: Sampling,
    k: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_labels = data.queries.len();
    let mut picked = match sampling {
        Sampling::Balanced => {
            let mut out = Vec::with_capacity(k * n_labels);
            for label in data.queries.ids() {
                let pool: Vec<usize> = data
                    .docs
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| data.gold.get(&r.id).map(String::as_str) == Some(label))
                    .map(|(i, _)| i)
                    .collect();
                if pool.len() < k {
                    return Err(Error::input(format!(
                        "label {label:?} has {} training examples, {k} requested",
                        pool.len()
                    )));
                }
                out.extend(sample(&mut rng, pool.len(), k).into_iter().map(|i| pool[i]));
            }
            out
        }
        Sampling::Unbalanced => {
            let pool: Vec<usize> = (0..data.docs.len())
                .filter(|&i| data.gold.contains_key(&data.docs.records()[i].id))
                .collect();
            let want = k * n_labels;
            if pool.len() < want {
                return Err(Error::input(format!(
                    "{} labelled training examples, {want} requested",
                    pool.len()
                )));
            }
            sample(&mut rng, pool.len(), want).into_iter().map(|i| pool[i]).collect()
        }
    };
    picked.sort_unstable();
    Ok(picked)
}

/// For each shot count, sampling regime and repeat: train an adapter on a
/// sampled training set, then evaluate the adapted test set with plain cosine
/// and with the crossover-weighted mixed score.
pub fn fewshot_study(
    train_data: Dataset<'_>,
    test_data: Dataset<'_>,
    samplings: &[Sampling],
    spec: &ExperimentSpec,
) -> Result<StudyReport> {
    spec.validate()?;
    if train_data.queries.ids().ne(test_data.queries.ids()) {
        return Err(Error::input("train and test label queries differ"));
    }
    let labels = test_data.labels();
    let cells: Vec<(Sampling, usize, usize)> = samplings
        .iter()
        .flat_map(|&m| {
            spec.shots
                .iter()
                .flat_map(move |&k| (0..spec.repeats).map(move |r| (m, k, r)))
        })
        .collect();
    // fail fast on infeasible shot counts before any training
    for &(m, k, _) in cells.iter().filter(|c| c.2 == 0) {
        sample_training_set(train_data, m, k, 0)?;
    }
    let records: Vec<Vec<RunRecord>> = cells
        .par_iter()
        .map(|&(sampling, k, repeat)| {
            let salt = match sampling {
                Sampling::Balanced => 0,
                Sampling::Unbalanced => 1 << 32,
            };
            let seed = cell_seed(spec.master_seed ^ salt, k, repeat);
            let start = Instant::now();
            let idx = sample_training_set(train_data, sampling, k, seed)?;
            let keys = train_data.docs.subset(&idx)?;
            let config = TrainConfig {
                seed,
                ..spec.train.clone()
            };
            let outcome = train(&keys, train_data.gold, train_data.queries, &config)?;
            let docs = outcome.adapter.apply_set(test_data.docs)?;
            let queries = outcome.adapter.apply_set(test_data.queries)?;
            let train_time = start.elapsed().as_secs_f64();
            [
                (COSINE, WeightMode::Fixed(0.0)),
                (SURPRISE, WeightMode::Crossover(spec.n_cross)),
            ]
            .into_iter()
            .map(|(variant, mode)| {
                let (eval, wall) = timed(spec.record_wall_time, || {
                    let preds = classify(&docs, &queries, &docs, &spec.mix(mode), spec.kind, spec.estimator)?;
                    evaluate(&preds, test_data.gold, &labels)
                })?;
                Ok(RunRecord {
                    variant: format!("{variant}-{}", sampling.tag()),
                    seed,
                    size: k,
                    accuracy: eval.accuracy,
                    macro_f1: eval.macro_f1,
                    wall_time_s: if spec.record_wall_time { wall + train_time } else { 0.0 },
                })
            })
            .collect()
        })
        .collect::<Result<_>>()?;
    let records = sorted(records.concat());
    let summary = summarize(&records);
    let series = f1_series(&summary);
    Ok(StudyReport {
        records,
        summary,
        series,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    Csv,
    TextTable,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "text" | "text-table" | "table" => Ok(ReportFormat::TextTable),
            other => Err(Error::input(format!("unknown report format {other:?}"))),
        }
    }
}

/// Records as CSV, sorted by variant, size and seed.
pub fn render_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in sorted(records.to_vec()) {
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6}",
            r.variant, r.seed, r.size, r.accuracy, r.macro_f1, r.wall_time_s
        )
        .unwrap();
    }
    out
}

/// Per-cell summary as an aligned plain-text table.
pub fn render_text_table(records: &[RunRecord]) -> String {
    let summary = summarize(records);
    let width = summary
        .iter()
        .map(|r| r.variant.len())
        .max()
        .unwrap_or(0)
        .max("variant".len());
    let mut out = String::new();
    writeln!(
        out,
        "{:<width$}  {:>6}  {:>4}  {:>10}  {:>10}  {:>10}  {:>10}",
        "variant", "size", "runs", "acc_mean", "acc_std", "f1_mean", "f1_std"
    )
    .unwrap();
    for r in &summary {
        writeln!(
            out,
            "{:<width$}  {:>6}  {:>4}  {:>10.6}  {:>10.6}  {:>10.6}  {:>10.6}",
            r.variant, r.size, r.runs, r.mean_accuracy, r.std_accuracy, r.mean_f1, r.std_f1
        )
        .unwrap();
    }
    out
}

/// Plot data: one `# name` block of `x,y,err` rows per series, blocks separated by a blank line.
pub fn render_plot_data(series: &[(String, Vec<PlotPoint>)]) -> String {
    let mut out = String::new();
    for (i, (name, points)) in series.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        writeln!(out, "# {name}").unwrap();
        out.push_str("x,y,err\n");
        for p in points {
            writeln!(out, "{:.6},{:.6},{:.6}", p.x, p.y, p.err).unwrap();
        }
    }
    out
}

pub fn emit_report(records: &[RunRecord], format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    if records.is_empty() {
        return Err(Error::input("no records to report"));
    }
    let text = match format {
        ReportFormat::Csv => render_csv(records),
        ReportFormat::TextTable => render_text_table(records),
    };
    crate::io::write_text(path, &text)
}

pub fn emit_plot_data(series: &[(String, Vec<PlotPoint>)], path: impl AsRef<Path>) -> Result<()> {
    crate::io::write_text(path, &render_plot_data(series))
}
