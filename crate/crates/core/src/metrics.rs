//! AUC, NMI and latent-space cluster assignment.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Task};
use crate::error::{Error, Result};
use crate::gmm;
use crate::train::{self, TrainedModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub metric: String,
    pub value: f64,
    pub split: String,
    pub ids: Vec<String>,
    /// Energies for the anomaly task, cluster indices for clustering.
    pub scores: Vec<f64>,
    pub labels: Vec<Option<i64>>,
}

/// Area under the ROC curve via the Mann-Whitney statistic with average
/// ranks for ties. Label 1 marks the positive (anomalous) class and higher
/// scores are more anomalous.
pub fn auc(scores: &[f64], labels: &[i64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l != 0 && l != 1) {
        return Err(Error::domain(format!("AUC labels must be 0 or 1, got {l}")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum_pos += avg * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
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

/// Normalized mutual information with geometric-mean normalization.
pub fn nmi(pred: &[i64], truth: &[i64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::LengthMismatch(format!(
            "nmi needs equal non-empty label vectors, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let n = pred.len() as f64;
    let mut joint: BTreeMap<(i64, i64), usize> = BTreeMap::new();
    let mut pa: BTreeMap<i64, usize> = BTreeMap::new();
    let mut pb: BTreeMap<i64, usize> = BTreeMap::new();
    for (&a, &b) in pred.iter().zip(truth) {
        *joint.entry((a, b)).or_default() += 1;
        *pa.entry(a).or_default() += 1;
        *pb.entry(b).or_default() += 1;
    }
    let ha = entropy(pa.values().copied(), n);
    let hb = entropy(pb.values().copied(), n);
    if pa.len() == 1 && pb.len() == 1 {
        return Ok(1.0);
    }
    if pa.len() == 1 || pb.len() == 1 {
        return Ok(0.0);
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(a, b), &c)| {
            let pab = c as f64 / n;
            let pa_ = pa[&a] as f64 / n;
            let pb_ = pb[&b] as f64 / n;
            pab * (pab / (pa_ * pb_)).ln()
        })
        .sum();
    Ok((mi / (ha * hb).sqrt()).clamp(0.0, 1.0))
}

/// Cluster labels from EM on latent vectors: argmax posterior membership.
pub fn assign_latents(latents: &[Vec<f64>], n_clusters: usize, seed: u64) -> Result<Vec<i64>> {
    if n_clusters < 2 {
        return Err(Error::domain(format!("need at least 2 clusters, got {n_clusters}")));
    }
    let fit = gmm::fit_em(latents, n_clusters, 200, seed)?;
    let prepared = fit.params.prepare()?;
    latents
        .iter()
        .map(|y| {
            let r = prepared.responsibilities(y)?;
            let best = r
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
                .0;
            Ok(best as i64)
        })
        .collect()
}

/// Clusters a dataset in the model's latent space.
pub fn assign_clusters(
    model: &TrainedModel,
    data: &Dataset,
    n_clusters: usize,
    seed: u64,
) -> Result<Vec<i64>> {
    let latents = train::latents(model, data)?;
    assign_latents(&latents, n_clusters, seed)
}

/// Scores every series of `data`: energies and AUC for the anomaly task,
/// cluster indices and NMI for clustering.
pub fn evaluate(model: &TrainedModel, data: &Dataset, task: Task, split: &str) -> Result<EvalReport> {
    let labels = data.labels();
    let truth: Vec<i64> = labels
        .iter()
        .zip(&data.series)
        .map(|(l, s)| l.ok_or_else(|| Error::invalid(format!("series {} has no label", s.id))))
        .collect::<Result<_>>()?;
    let (scores, value) = match task {
        Task::Anomaly => {
            let s = train::score_dataset(model, data)?;
            let v = auc(&s, &truth)?;
            (s, v)
        }
        Task::Cluster => {
            let pred = assign_clusters(model, data, data.class_counts().len(), 0)?;
            let v = nmi(&pred, &truth)?;
            (pred.iter().map(|&p| p as f64).collect(), v)
        }
    };
    Ok(EvalReport {
        task,
        metric: match task {
            Task::Anomaly => "auc".into(),
            Task::Cluster => "nmi".into(),
        },
        value,
        split: split.into(),
        ids: data.series.iter().map(|s| s.id.clone()).collect(),
        scores,
        labels,
    })
}

/// Writes `id,score,label` rows.
pub fn write_scores_csv(
    path: impl AsRef<Path>,
    ids: &[String],
    scores: &[f64],
    labels: &[Option<i64>],
) -> Result<()> {
    let mut out = String::from("id,score,label\n");
    for ((id, s), l) in ids.iter().zip(scores).zip(labels) {
        let label = l.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{id},{s},{label}").expect("write to string");
    }
    std::fs::write(path, out)?;
    Ok(())
}
