//! End-to-end search: Thompson sampling over pipelines, Bayesian
//! optimization over each pipeline's hyperparameters, then one final
//! retrain scored once on the test split.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bandit::{self, BetaState, PipelineConfig, RewardConfig, SearchSpace};
use crate::bo::{BoHistory, HyperparamVector};
use crate::data::{self, Dataset, SamplerConfig, SplitConfig, SplitDataset, Task};
use crate::error::{Error, Result};
use crate::rng;
use crate::train::{self, TrainConfig, TrainedModel};

pub const DEFAULT_ITERATIONS: usize = 40;
pub const DEFAULT_BO_ITERS: usize = 25;
pub const DEFAULT_SEARCH_EPOCHS: usize = 20;
pub const DEFAULT_FINAL_EPOCHS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Ucr,
    Mvjson,
}

impl DataFormat {
    /// `.json` means multivariate JSON, anything else UCR TSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => DataFormat::Mvjson,
            _ => DataFormat::Ucr,
        }
    }

    pub fn load(self, path: impl AsRef<Path>) -> Result<Dataset> {
        match self {
            DataFormat::Ucr => data::load_ucr(path),
            DataFormat::Mvjson => data::load_multivariate(path),
        }
    }

    pub fn write(self, dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
        match self {
            DataFormat::Ucr => data::write_ucr(dataset, path),
            DataFormat::Mvjson => data::write_multivariate(dataset, path),
        }
    }
}

/// Training settings shared by every model of a run. Seeds come from the
/// run seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOverrides {
    pub lambda1: f64,
    pub lambda2: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub search_epochs: usize,
    pub final_epochs: usize,
}

impl Default for TrainOverrides {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            lambda1: d.lambda1,
            lambda2: d.lambda2,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            search_epochs: DEFAULT_SEARCH_EPOCHS,
            final_epochs: DEFAULT_FINAL_EPOCHS,
        }
    }
}

impl TrainOverrides {
    pub fn config(&self, epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub format: DataFormat,
    pub task: Task,
    /// Irregular sampling rate applied once per series before splitting.
    pub beta: f64,
    pub contamination: f64,
    /// Anomaly task only; defaults to the most frequent class.
    pub normal_class: Option<i64>,
    pub ratios: (f64, f64, f64),
    pub znormalize: bool,
    /// Thompson-sampling iterations.
    pub iterations: usize,
    /// BO steps per iteration.
    pub bo_iters: usize,
    pub seed: u64,
    pub train: TrainOverrides,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(dataset: impl Into<PathBuf>, task: Task) -> Self {
        let dataset = dataset.into();
        Self {
            format: DataFormat::from_path(&dataset),
            dataset,
            task,
            beta: 0.0,
            contamination: 0.0,
            normal_class: None,
            ratios: SplitConfig::default().ratios,
            znormalize: true,
            iterations: DEFAULT_ITERATIONS,
            bo_iters: DEFAULT_BO_ITERS,
            seed: 0,
            train: TrainOverrides::default(),
            out: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.bo_iters == 0 {
            return Err(Error::domain("iterations and bo-iters must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::domain(format!("beta must lie in [0, 1), got {}", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.contamination) {
            return Err(Error::domain(format!(
                "contamination must lie in [0, 1], got {}",
                self.contamination
            )));
        }
        if self.task == Task::Cluster && self.contamination > 0.0 {
            return Err(Error::domain("contamination applies to the anomaly task only"));
        }
        if self.train.search_epochs == 0 || self.train.final_epochs == 0 {
            return Err(Error::domain("epochs must be at least 1"));
        }
        self.train.config(1, 0).validate()
    }
}

/// Named sub-seeds of one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubSeeds {
    pub data: u64,
    pub bandit: u64,
    pub bo: u64,
    pub train: u64,
}

impl SubSeeds {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            data: rng::derive(seed, "data"),
            bandit: rng::derive(seed, "bandit"),
            bo: rng::derive(seed, "bo"),
            train: rng::derive(seed, "train"),
        }
    }

    fn pair(seed: u64, t: usize, b: usize) -> u64 {
        rng::derive_index(rng::derive_index(seed, t as u64), b as u64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepStatus {
    Ok,
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub point: Vec<f64>,
    pub hyperparams: HyperparamVector,
    pub value: f64,
    pub status: StepStatus,
    pub final_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceIteration {
    pub iteration: usize,
    pub pipeline: PipelineConfig,
    pub description: String,
    pub steps: Vec<TraceStep>,
    /// Best value over `steps`.
    pub value: f64,
    pub reward_tilde: f64,
    pub reward: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestEntry {
    pub iteration: usize,
    pub step: usize,
    pub pipeline: PipelineConfig,
    pub description: String,
    pub hyperparams: HyperparamVector,
    pub value: f64,
}

/// One read of a data split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataAccess {
    pub stage: String,
    pub split: String,
    pub labels: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub search_secs: f64,
    pub final_secs: f64,
    pub total_secs: f64,
    /// Per trained model, in trace order.
    pub model_secs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub seeds: SubSeeds,
    pub metric: String,
    pub split_sizes: SplitSizes,
    pub space: SearchSpace,
    pub best: BestEntry,
    pub trace: Vec<TraceIteration>,
    pub beta_state: BetaState,
    /// Observation history per pipeline, keyed by its description.
    pub gp_histories: BTreeMap<String, BoHistory>,
    pub models_trained: usize,
    pub final_seed: u64,
    pub test_metric: f64,
    pub access_log: Vec<DataAccess>,
    pub timings: Timings,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// JSON with every timing field zeroed; equal for equal seeded runs.
    pub fn canonical_json(&self) -> Result<String> {
        let mut r = self.clone();
        r.timings = Timings::default();
        r.to_json()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

pub struct SearchOutcome {
    pub report: RunReport,
    pub model: TrainedModel,
}

/// Called after every trained model with the iteration record so far.
pub type Progress<'a> = &'a mut dyn FnMut(&TraceIteration, &TraceStep);

fn metric_name(task: Task) -> &'static str {
    match task {
        Task::Anomaly => "auc",
        Task::Cluster => "nmi",
    }
}

/// Normalization, irregular sampling and splitting as configured.
pub fn prepare(cfg: &RunConfig, dataset: &Dataset, data_seed: u64) -> Result<SplitDataset> {
    let ds = if cfg.znormalize { data::znormalize(dataset) } else { dataset.clone() };
    let ds = if cfg.beta > 0.0 {
        let sampler = SamplerConfig::new(cfg.beta, rng::derive(data_seed, "sample"))?;
        data::irregular_sample_dataset(&ds, &sampler)?
    } else {
        ds
    };
    data::split(
        &ds,
        &SplitConfig {
            task: cfg.task,
            normal_class: cfg.normal_class,
            contamination: cfg.contamination,
            ratios: cfg.ratios,
            seed: rng::derive(data_seed, "split"),
        },
    )
}

/// Loads `cfg.dataset` and runs the search.
pub fn run_search(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let dataset = cfg.format.load(&cfg.dataset)?;
    Ok(search(cfg, &dataset, None)?.report)
}

/// Runs the full search on an in-memory dataset.
pub fn search(cfg: &RunConfig, dataset: &Dataset, mut progress: Option<Progress<'_>>) -> Result<SearchOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let seeds = SubSeeds::from_seed(cfg.seed);
    let splits = prepare(cfg, dataset, seeds.data)?;
    if splits.train.is_empty() || splits.val.is_empty() || splits.test.is_empty() {
        return Err(Error::invalid(format!(
            "split left an empty part (train {}, val {}, test {})",
            splits.train.len(),
            splits.val.len(),
            splits.test.len()
        )));
    }
    let space = SearchSpace::new(splits.train.channel_dim, splits.train.min_len())?;
    let reward_cfg = RewardConfig::for_task(cfg.task);
    let mut state = BetaState::for_space(&space);
    let mut histories: BTreeMap<String, BoHistory> = BTreeMap::new();
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut access_log = Vec::new();
    let mut timings = Timings::default();
    let mut best: Option<BestEntry> = None;

    for t in 1..=cfg.iterations {
        let it_seed = rng::derive_index(seeds.bandit, t as u64);
        let pipeline = bandit::sample_config(&state, rng::derive(it_seed, "sample"))?;
        let description = space.describe(&pipeline);
        let dims = space.dimensions(&pipeline)?;
        let hist = histories
            .entry(description.clone())
            .or_insert_with(|| BoHistory::new(dims));
        let mut record = TraceIteration {
            iteration: t,
            pipeline: pipeline.clone(),
            description: description.clone(),
            steps: Vec::with_capacity(cfg.bo_iters),
            value: f64::NEG_INFINITY,
            reward_tilde: 0.0,
            reward: 0,
        };

        for b in 1..=cfg.bo_iters {
            let context = |e: Error| Error::invalid(format!("iteration {t}, step {b}: {e}"));
            let (point, hp) = hist.suggest(SubSeeds::pair(seeds.bo, t, b)).map_err(context)?;
            let tc = cfg.train.config(cfg.train.search_epochs, SubSeeds::pair(seeds.train, t, b));
            let clock = Instant::now();
            access_log.push(DataAccess {
                stage: format!("search {t}.{b}"),
                split: "train".into(),
                labels: false,
            });
            let (value, status, final_loss) = match train::train_model(&pipeline, &hp, &splits, &tc) {
                Ok(model) => {
                    access_log.push(DataAccess {
                        stage: format!("search {t}.{b}"),
                        split: "val".into(),
                        labels: true,
                    });
                    let f = train::objective(&model, &splits.val, cfg.task);
                    let f = match f {
                        Ok(f) => f,
                        Err(Error::Singular | Error::Numeric(_)) => reward_cfg.f_low,
                        Err(e) => return Err(context(e)),
                    };
                    (f, StepStatus::Ok, model.log.last().map(|l| l.total))
                }
                Err(Error::Diverged { .. }) => (reward_cfg.f_low, StepStatus::Diverged, None),
                Err(e) => return Err(context(e)),
            };
            timings.model_secs.push(clock.elapsed().as_secs_f64());
            hist.record(point.clone(), hp.clone(), value);
            let step = TraceStep {
                step: b,
                point,
                hyperparams: hp.clone(),
                value,
                status,
                final_loss,
            };
            if best.as_ref().is_none_or(|bst| value > bst.value) {
                best = Some(BestEntry {
                    iteration: t,
                    step: b,
                    pipeline: pipeline.clone(),
                    description: description.clone(),
                    hyperparams: hp,
                    value,
                });
            }
            record.value = record.value.max(value);
            record.steps.push(step);
            if let Some(p) = progress.as_mut() {
                p(&record, record.steps.last().expect("just pushed"));
            }
        }

        let (r_tilde, r) = bandit::reward(record.value, &reward_cfg, rng::derive(it_seed, "reward"));
        state = bandit::update(&state, &pipeline, r)?;
        record.reward_tilde = r_tilde;
        record.reward = r;
        trace.push(record);
    }
    timings.search_secs = start.elapsed().as_secs_f64();

    let best = best.expect("at least one step ran");
    let final_seed = rng::derive(seeds.train, "final");
    let clock = Instant::now();
    access_log.push(DataAccess {
        stage: "final".into(),
        split: "train".into(),
        labels: false,
    });
    let model = train::train_model(
        &best.pipeline,
        &best.hyperparams,
        &splits,
        &cfg.train.config(cfg.train.final_epochs, final_seed),
    )
    .map_err(|e| Error::invalid(format!("final retrain: {e}")))?;
    access_log.push(DataAccess {
        stage: "final".into(),
        split: "test".into(),
        labels: true,
    });
    let test_metric = train::objective(&model, &splits.test, cfg.task)
        .map_err(|e| Error::invalid(format!("test evaluation: {e}")))?;
    timings.final_secs = clock.elapsed().as_secs_f64();
    timings.total_secs = start.elapsed().as_secs_f64();

    let report = RunReport {
        config: cfg.clone(),
        seeds,
        metric: metric_name(cfg.task).into(),
        split_sizes: SplitSizes {
            train: splits.train.len(),
            val: splits.val.len(),
            test: splits.test.len(),
        },
        space,
        best,
        models_trained: trace.iter().map(|i| i.steps.len()).sum(),
        trace,
        beta_state: state,
        gp_histories: histories,
        final_seed,
        test_metric,
        access_log,
        timings,
    };
    Ok(SearchOutcome { report, model })
}
