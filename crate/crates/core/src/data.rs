//! Dataset ingestion, normalization, splitting, irregular sampling and the
//! synthetic sine benchmark.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, derive_index};

/// A single, possibly multivariate, observation sequence.
///
/// `time_index` holds the original timestamp positions; after irregular
/// sampling it has gaps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub id: String,
    pub values: Vec<Vec<f64>>,
    pub time_index: Vec<usize>,
    pub label: Option<i64>,
}

impl TimeSeries {
    pub fn new(
        id: impl Into<String>,
        values: Vec<Vec<f64>>,
        time_index: Vec<usize>,
        label: Option<i64>,
    ) -> Result<Self> {
        let id = id.into();
        if values.is_empty() {
            return Err(Error::invalid(format!("series {id}: no observations")));
        }
        if values.len() != time_index.len() {
            return Err(Error::LengthMismatch(format!(
                "series {id}: {} values but {} timestamps",
                values.len(),
                time_index.len()
            )));
        }
        if time_index.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "series {id}: time_index must be strictly increasing"
            )));
        }
        let dim = values[0].len();
        if dim == 0 || values.iter().any(|v| v.len() != dim) {
            return Err(Error::Schema(format!(
                "series {id}: observation vectors must share a non-zero dimension"
            )));
        }
        Ok(Self {
            id,
            values,
            time_index,
            label,
        })
    }

    /// Univariate series with `time_index = 0..T`.
    pub fn univariate(id: impl Into<String>, values: &[f64], label: Option<i64>) -> Result<Self> {
        let time_index = (0..values.len()).collect();
        Self::new(
            id,
            values.iter().map(|&v| vec![v]).collect(),
            time_index,
            label,
        )
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// Values of one channel.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[c]).collect()
    }

    /// Row-major flattening, `T * D` entries.
    pub fn flat(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }

    pub(crate) fn with_values(&self, id: String, values: Vec<Vec<f64>>) -> Self {
        Self {
            id,
            time_index: (0..values.len()).collect(),
            values,
            label: self.label,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub channel_dim: usize,
    pub series: Vec<TimeSeries>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, channel_dim: usize, series: Vec<TimeSeries>) -> Result<Self> {
        if let Some(bad) = series.iter().find(|s| s.dim() != channel_dim) {
            return Err(Error::Schema(format!(
                "series {} has channel dimension {} but dataset declares {}",
                bad.id,
                bad.dim(),
                channel_dim
            )));
        }
        Ok(Self {
            name: name.into(),
            channel_dim,
            series,
        })
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn labels(&self) -> Vec<Option<i64>> {
        self.series.iter().map(|s| s.label).collect()
    }

    pub fn min_len(&self) -> usize {
        self.series.iter().map(TimeSeries::len).min().unwrap_or(0)
    }

    /// Number of series per label, unlabeled series ignored.
    pub fn class_counts(&self) -> BTreeMap<i64, usize> {
        let mut counts = BTreeMap::new();
        for l in self.series.iter().filter_map(|s| s.label) {
            *counts.entry(l).or_insert(0) += 1;
        }
        counts
    }

    /// Most frequent class; ties go to the smallest label.
    pub fn most_frequent_class(&self) -> Option<i64> {
        let counts = self.class_counts();
        let max = counts.values().copied().max()?;
        counts.into_iter().find(|&(_, n)| n == max).map(|(l, _)| l)
    }
}

/// Train/validation/test partition.
///
/// For the anomaly task every label is rewritten to 0 (normal) or 1
/// (anomalous).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Anomaly,
    Cluster,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Anomaly => "anomaly",
            Task::Cluster => "cluster",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub beta: f64,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn new(beta: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::domain(format!("beta must lie in [0, 1), got {beta}")));
        }
        Ok(Self { beta, seed })
    }
}

// ---------------------------------------------------------------------------
// Loading and writing
// ---------------------------------------------------------------------------

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string())
}

/// Loads a UCR-style TSV file: `label<TAB>v1<TAB>...<TAB>vT` per line.
pub fn load_ucr(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_ucr(&text, &dataset_name(path))
}

pub fn parse_ucr(text: &str, name: &str) -> Result<Dataset> {
    let mut series = Vec::new();
    let mut expected_len: Option<(usize, usize)> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split('\t').map(str::trim);
        let label_tok = tokens.next().unwrap_or_default();
        let label = parse_label(label_tok).ok_or_else(|| Error::Parse {
            line: line_no,
            msg: format!("invalid label {label_tok:?}"),
        })?;
        let values = tokens
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        line: line_no,
                        msg: format!("non-numeric value {t:?}"),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        if values.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: "no observations after the label".into(),
            });
        }
        match expected_len {
            None => expected_len = Some((values.len(), line_no)),
            Some((len, first)) if len != values.len() => {
                return Err(Error::LengthMismatch(format!(
                    "line {line_no} has {} values but line {first} has {len}",
                    values.len()
                )));
            }
            Some(_) => {}
        }
        series.push(TimeSeries::univariate(
            format!("{name}_{:05}", series.len()),
            &values,
            Some(label),
        )?);
    }
    if series.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Dataset::new(name, 1, series)
}

fn parse_label(tok: &str) -> Option<i64> {
    if let Ok(l) = tok.parse::<i64>() {
        return Some(l);
    }
    // Some archive files store labels as "1.0".
    let f = tok.parse::<f64>().ok()?;
    (f.is_finite() && f.fract() == 0.0).then_some(f as i64)
}

/// Writes a univariate, equal-length dataset as UCR TSV.
pub fn write_ucr(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    if dataset.channel_dim != 1 {
        return Err(Error::invalid("UCR TSV holds univariate series only"));
    }
    if dataset.series.iter().any(|s| s.len() != dataset.series[0].len()) {
        return Err(Error::LengthMismatch(
            "UCR TSV requires equal-length series; use the JSON format".into(),
        ));
    }
    let mut out = String::new();
    for s in &dataset.series {
        out.push_str(&s.label.unwrap_or(0).to_string());
        for v in &s.values {
            out.push('\t');
            out.push_str(&v[0].to_string());
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonDataset {
    channel_dim: usize,
    series: Vec<JsonSeries>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonSeries {
    id: String,
    label: Option<i64>,
    values: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    time_index: Option<Vec<usize>>,
}

/// Loads the multivariate JSON container
/// `{"channel_dim": D, "series": [{"id", "label", "values", ["time_index"]}]}`.
pub fn load_multivariate(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_multivariate(&text, &dataset_name(path))
}

pub fn parse_multivariate(text: &str, name: &str) -> Result<Dataset> {
    let raw: JsonDataset =
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    if raw.series.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if raw.channel_dim == 0 {
        return Err(Error::Schema("channel_dim must be at least 1".into()));
    }
    let mut series = Vec::with_capacity(raw.series.len());
    for s in raw.series {
        if let Some(row) = s.values.iter().position(|v| v.len() != raw.channel_dim) {
            return Err(Error::Schema(format!(
                "series {}: observation {row} has {} channels, expected {}",
                s.id,
                s.values[row].len(),
                raw.channel_dim
            )));
        }
        let time_index = s.time_index.unwrap_or_else(|| (0..s.values.len()).collect());
        series.push(TimeSeries::new(s.id, s.values, time_index, s.label)?);
    }
    Dataset::new(name, raw.channel_dim, series)
}

pub fn write_multivariate(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_multivariate_json(dataset)?)?;
    Ok(())
}

pub fn to_multivariate_json(dataset: &Dataset) -> Result<String> {
    let raw = JsonDataset {
        channel_dim: dataset.channel_dim,
        series: dataset
            .series
            .iter()
            .map(|s| JsonSeries {
                id: s.id.clone(),
                label: s.label,
                values: s.values.clone(),
                time_index: Some(s.time_index.clone()),
            })
            .collect(),
    };
    Ok(serde_json::to_string(&raw)?)
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

/// Per-series, per-channel z-normalization with the population standard
/// deviation. Constant channels become zeros.
pub fn znormalize(dataset: &Dataset) -> Dataset {
    let series = dataset.series.iter().map(znormalize_series).collect();
    Dataset {
        name: dataset.name.clone(),
        channel_dim: dataset.channel_dim,
        series,
    }
}

pub fn znormalize_series(series: &TimeSeries) -> TimeSeries {
    let t = series.len() as f64;
    let mut values = series.values.clone();
    for c in 0..series.dim() {
        let mean = series.values.iter().map(|v| v[c]).sum::<f64>() / t;
        let var = series
            .values
            .iter()
            .map(|v| (v[c] - mean).powi(2))
            .sum::<f64>()
            / t;
        let std = var.sqrt();
        for v in values.iter_mut() {
            v[c] = if std > 1e-12 { (v[c] - mean) / std } else { 0.0 };
        }
    }
    TimeSeries {
        values,
        ..series.clone()
    }
}

/// Removes exactly `floor(beta * T)` timestamps uniformly at random.
pub fn irregular_sample(series: &TimeSeries, cfg: &SamplerConfig) -> Result<TimeSeries> {
    SamplerConfig::new(cfg.beta, cfg.seed)?;
    let t = series.len();
    let remove = (cfg.beta * t as f64).floor() as usize;
    if remove >= t {
        return Err(Error::domain(format!(
            "beta {} would remove all {t} observations of {}",
            cfg.beta, series.id
        )));
    }
    if remove == 0 {
        return Ok(series.clone());
    }
    let mut rng = rng::rng(cfg.seed);
    let mut drop = vec![false; t];
    for i in rand::seq::index::sample(&mut rng, t, remove) {
        drop[i] = true;
    }
    let (values, time_index) = series
        .values
        .iter()
        .zip(&series.time_index)
        .zip(&drop)
        .filter(|(_, &d)| !d)
        .map(|((v, &ti), _)| (v.clone(), ti))
        .unzip();
    Ok(TimeSeries {
        values,
        time_index,
        ..series.clone()
    })
}

/// Applies [`irregular_sample`] to every series with per-series sub-seeds.
pub fn irregular_sample_dataset(dataset: &Dataset, cfg: &SamplerConfig) -> Result<Dataset> {
    let series = dataset
        .series
        .iter()
        .enumerate()
        .map(|(i, s)| {
            irregular_sample(
                s,
                &SamplerConfig {
                    beta: cfg.beta,
                    seed: derive_index(cfg.seed, i as u64),
                },
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        name: dataset.name.clone(),
        channel_dim: dataset.channel_dim,
        series,
    })
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub task: Task,
    /// Defaults to the most frequent class.
    pub normal_class: Option<i64>,
    pub contamination: f64,
    pub ratios: (f64, f64, f64),
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            task: Task::Anomaly,
            normal_class: None,
            contamination: 0.0,
            ratios: (0.5, 0.2, 0.3),
            seed: 0,
        }
    }
}

fn round_count(x: f64) -> usize {
    x.round().max(0.0) as usize
}

/// Splits a labeled dataset into train/val/test.
///
/// Anomaly task: train draws from the normal class only, then
/// `round(contamination * |train|)` of its members are swapped for anomalous
/// series. Remaining anomalies are shared between val and test in the ratio
/// `val : test`. Cluster task: stratified split of every class.
pub fn split(dataset: &Dataset, cfg: &SplitConfig) -> Result<SplitDataset> {
    let (rt, rv, rs) = cfg.ratios;
    if [rt, rv, rs].iter().any(|r| !(0.0..=1.0).contains(r)) || (rt + rv + rs - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!(
            "split ratios must be non-negative and sum to 1, got ({rt}, {rv}, {rs})"
        )));
    }
    if !(0.0..=1.0).contains(&cfg.contamination) {
        return Err(Error::domain(format!(
            "contamination must lie in [0, 1], got {}",
            cfg.contamination
        )));
    }
    if dataset.series.iter().any(|s| s.label.is_none()) {
        return Err(Error::invalid("split requires every series to be labeled"));
    }
    let mut rng = rng::rng(cfg.seed);
    let part = |name: &str, series: Vec<TimeSeries>| Dataset {
        name: format!("{}-{name}", dataset.name),
        channel_dim: dataset.channel_dim,
        series,
    };

    match cfg.task {
        Task::Anomaly => {
            let normal = match cfg.normal_class {
                Some(c) => c,
                None => dataset.most_frequent_class().ok_or(Error::EmptyDataset)?,
            };
            let relabel = |s: &TimeSeries, anomalous: bool| TimeSeries {
                label: Some(i64::from(anomalous)),
                ..s.clone()
            };
            let mut normals: Vec<TimeSeries> = dataset
                .series
                .iter()
                .filter(|s| s.label == Some(normal))
                .map(|s| relabel(s, false))
                .collect();
            let mut anomalies: Vec<TimeSeries> = dataset
                .series
                .iter()
                .filter(|s| s.label != Some(normal))
                .map(|s| relabel(s, true))
                .collect();
            if normals.is_empty() {
                return Err(Error::invalid(format!("normal class {normal} is absent")));
            }
            if anomalies.is_empty() {
                return Err(Error::invalid(format!(
                    "no series outside normal class {normal}"
                )));
            }
            normals.shuffle(&mut rng);
            anomalies.shuffle(&mut rng);

            let n_train = round_count(rt * normals.len() as f64).min(normals.len());
            let n_val = round_count(rv * normals.len() as f64).min(normals.len() - n_train);
            let n_contam = round_count(cfg.contamination * n_train as f64);
            if n_contam > anomalies.len() {
                return Err(Error::invalid(format!(
                    "contamination needs {n_contam} anomalies but only {} exist",
                    anomalies.len()
                )));
            }
            let mut normals = normals.into_iter();
            let mut train: Vec<TimeSeries> = normals.by_ref().take(n_train).collect();
            let mut val: Vec<TimeSeries> = normals.by_ref().take(n_val).collect();
            let mut test: Vec<TimeSeries> = normals.collect();

            let mut anomalies = anomalies.into_iter();
            train.truncate(n_train - n_contam);
            train.extend(anomalies.by_ref().take(n_contam));
            let rest: Vec<TimeSeries> = anomalies.collect();
            let val_share = if rv + rs > 0.0 { rv / (rv + rs) } else { 0.0 };
            let n_val_anom = round_count(val_share * rest.len() as f64).min(rest.len());
            let mut rest = rest.into_iter();
            val.extend(rest.by_ref().take(n_val_anom));
            test.extend(rest);

            train.shuffle(&mut rng);
            val.shuffle(&mut rng);
            test.shuffle(&mut rng);
            Ok(SplitDataset {
                train: part("train", train),
                val: part("val", val),
                test: part("test", test),
            })
        }
        Task::Cluster => {
            let mut train = Vec::new();
            let mut val = Vec::new();
            let mut test = Vec::new();
            for class in dataset.class_counts().keys() {
                let mut members: Vec<TimeSeries> = dataset
                    .series
                    .iter()
                    .filter(|s| s.label == Some(*class))
                    .cloned()
                    .collect();
                members.shuffle(&mut rng);
                let n = members.len();
                let n_train = round_count(rt * n as f64).min(n);
                let n_val = round_count(rv * n as f64).min(n - n_train);
                let mut it = members.into_iter();
                train.extend(it.by_ref().take(n_train));
                val.extend(it.by_ref().take(n_val));
                test.extend(it);
            }
            train.shuffle(&mut rng);
            val.shuffle(&mut rng);
            test.shuffle(&mut rng);
            Ok(SplitDataset {
                train: part("train", train),
                val: part("val", val),
                test: part("test", test),
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Synthetic benchmark
// ---------------------------------------------------------------------------

/// Smooth sines (label 0) and sines with uniform noise over one short
/// contiguous window (label 1).
pub fn make_synthetic_sine(
    n_normal: usize,
    n_anomalous: usize,
    length: usize,
    noise_span: (f64, f64),
    seed: u64,
) -> Result<Dataset> {
    if length < 8 {
        return Err(Error::domain(format!("synthetic length must be >= 8, got {length}")));
    }
    let (lo, hi) = noise_span;
    if !(0.0 < lo && lo <= hi && hi <= 1.0) {
        return Err(Error::domain(format!(
            "noise span must satisfy 0 < lo <= hi <= 1, got ({lo}, {hi})"
        )));
    }
    let mut rng = rng::rng(seed);
    let mut series = Vec::with_capacity(n_normal + n_anomalous);
    for i in 0..n_normal {
        let values = random_sine(&mut rng, length);
        series.push(TimeSeries::univariate(format!("sine_{i:05}"), &values, Some(0))?);
    }
    for i in 0..n_anomalous {
        let mut values = random_sine(&mut rng, length);
        let frac = rng.random_range(lo..=hi);
        let width = ((frac * length as f64).round() as usize).clamp(1, length);
        let start = rng.random_range(0..=length - width);
        for v in &mut values[start..start + width] {
            *v += rng.random_range(-1.0..=1.0);
        }
        series.push(TimeSeries::univariate(format!("noisy_{i:05}"), &values, Some(1))?);
    }
    Dataset::new("synthetic_sine", 1, series)
}

fn random_sine(rng: &mut rng::Rng, length: usize) -> Vec<f64> {
    let k = if rng.random_bool(0.5) { 1.0 } else { 2.0 };
    let t_len = length as f64;
    let phase = rng.random_range(0.0..t_len);
    (0..length)
        .map(|t| (2.0 * std::f64::consts::PI * k * (t as f64 + phase) / t_len).sin())
        .collect()
}
