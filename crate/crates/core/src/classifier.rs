//! Zero-shot single-label classification by argmax over mixed surprise scores.
//!
//! Documents are the keys and the ensemble; templated labels are the queries.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixed::{MixConfig, MixedScorer};
use crate::similarity::{pairwise_matrix, EmbeddingRecord, EmbeddingSet, ScoreMatrix, SimilarityKind};
use crate::stats::StatsEstimator;

pub const DEFAULT_TEMPLATE: &str = "this matter is {label}";
const PLACEHOLDER: &str = "{label}";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    labels: Vec<String>,
    template: String,
}

impl LabelSet {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        Self::with_template(labels, DEFAULT_TEMPLATE)
    }

    pub fn with_template(labels: Vec<String>, template: impl Into<String>) -> Result<Self> {
        let template = template.into();
        if labels.is_empty() {
            return Err(Error::input("label set is empty"));
        }
        if template.matches(PLACEHOLDER).count() != 1 {
            return Err(Error::input(format!(
                "template {template:?} must contain exactly one {PLACEHOLDER}"
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = labels.iter().find(|l| !seen.insert(l.as_str())) {
            return Err(Error::input(format!("duplicate label {dup:?}")));
        }
        Ok(Self { labels, template })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The query text for `label`.
    pub fn render(&self, label: &str) -> String {
        self.template.replacen(PLACEHOLDER, label, 1)
    }

    pub fn queries_text(&self) -> Vec<String> {
        self.labels.iter().map(|l| self.render(l)).collect()
    }
}

/// Picks the label query embeddings out of an embedder's output, in label order.
///
/// A record belongs to a label when its text is the rendered template or its id
/// is the raw label. The returned records carry the raw label as id.
pub fn build_queries(labels: &LabelSet, embedder_output: &EmbeddingSet) -> Result<EmbeddingSet> {
    let mut out = Vec::with_capacity(labels.len());
    for label in labels.labels() {
        let rendered = labels.render(label);
        let mut matches = embedder_output
            .iter()
            .filter(|r| r.text.as_deref() == Some(rendered.as_str()) || r.id == *label);
        let found = matches
            .next()
            .ok_or_else(|| Error::input(format!("no embedding for label {label:?} ({rendered:?})")))?;
        if matches.next().is_some() {
            return Err(Error::input(format!("more than one embedding for label {label:?}")));
        }
        out.push(EmbeddingRecord {
            id: label.clone(),
            text: Some(rendered),
            vector: found.vector.clone(),
        });
    }
    EmbeddingSet::from_records(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub key_id: String,
    pub label: String,
    pub label_index: usize,
    pub score: f64,
    pub scores_all: Vec<f64>,
}

/// Index of the best score. Ties go to the larger raw similarity, then to the
/// lowest index, so the rescaling clamp never reorders equal raw scores' winners.
pub(crate) fn argmax_scores(scores: &[f64], psi: &[f64]) -> usize {
    let mut best = 0;
    for j in 1..scores.len() {
        let better = scores[j] > scores[best] || (scores[j] == scores[best] && psi[j] > psi[best]);
        if better {
            best = j;
        }
    }
    best
}

/// Predicts a label for every key of a keys × queries similarity matrix.
pub fn predict(
    key_ids: &[&str],
    label_ids: &[&str],
    psi: &ScoreMatrix,
    scorer: &MixedScorer,
) -> Result<Vec<Prediction>> {
    if label_ids.is_empty() {
        return Err(Error::input("no queries to classify against"));
    }
    if psi.shape() != (key_ids.len(), label_ids.len()) || scorer.num_queries() != label_ids.len() {
        return Err(Error::input("score matrix does not match keys and labels"));
    }
    let scores = scorer.score_matrix(psi)?;
    Ok((0..key_ids.len())
        .into_par_iter()
        .map(|i| {
            let row = scores.row(i);
            let best = argmax_scores(row, psi.row(i));
            Prediction {
                key_id: key_ids[i].to_string(),
                label: label_ids[best].to_string(),
                label_index: best,
                score: row[best],
                scores_all: row.to_vec(),
            }
        })
        .collect())
}

/// Classifies each key against the queries, normalising with the ensemble.
/// Pass the keys themselves as `ensemble` for the usual document-set context.
pub fn classify(
    keys: &EmbeddingSet,
    queries: &EmbeddingSet,
    ensemble: &EmbeddingSet,
    mix: &MixConfig,
    kind: SimilarityKind,
    estimator: StatsEstimator,
) -> Result<Vec<Prediction>> {
    if queries.is_empty() {
        return Err(Error::input("no queries to classify against"));
    }
    let ensemble_psi = pairwise_matrix(ensemble, queries, kind)?;
    let scorer = MixedScorer::fit(&ensemble_psi, queries, mix, kind, estimator)?;
    let psi = pairwise_matrix(keys, queries, kind)?;
    let key_ids: Vec<&str> = keys.ids().collect();
    let label_ids: Vec<&str> = queries.ids().collect();
    predict(&key_ids, &label_ids, &psi, &scorer)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// F1 per label; `None` for labels neither predicted nor in the gold set.
    pub per_label_f1: Vec<(String, Option<f64>)>,
}

/// Accuracy and macro-F1 of `predictions` against `gold` (key id → label).
///
/// `labels` fixes the reporting order; labels seen only in gold or predictions
/// are appended in sorted order.
pub fn evaluate(
    predictions: &[Prediction],
    gold: &HashMap<String, String>,
    labels: &[String],
) -> Result<Evaluation> {
    if predictions.is_empty() {
        return Err(Error::input("no predictions to evaluate"));
    }
    let mut counts: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
    let mut correct = 0usize;
    for p in predictions {
        let g = gold
            .get(&p.key_id)
            .ok_or_else(|| Error::input(format!("no gold label for {:?}", p.key_id)))?;
        if *g == p.label {
            correct += 1;
            counts.entry(g).or_default().0 += 1;
        } else {
            counts.entry(&p.label).or_default().1 += 1;
            counts.entry(g).or_default().2 += 1;
        }
    }
    let mut order: Vec<String> = labels.to_vec();
    for l in counts.keys() {
        if !labels.iter().any(|x| x == l) {
            order.push(l.to_string());
        }
    }
    let per_label_f1: Vec<(String, Option<f64>)> = order
        .into_iter()
        .map(|l| {
            let f1 = counts.get(l.as_str()).and_then(|&(tp, fp, fn_)| {
                let denom = 2 * tp + fp + fn_;
                (denom > 0).then(|| 2.0 * tp as f64 / denom as f64)
            });
            (l, f1)
        })
        .collect();
    let present: Vec<f64> = per_label_f1.iter().filter_map(|(_, f)| *f).collect();
    Ok(Evaluation {
        accuracy: correct as f64 / predictions.len() as f64,
        macro_f1: present.iter().sum::<f64>() / present.len() as f64,
        per_label_f1,
    })
}
