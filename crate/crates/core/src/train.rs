//! Loss assembly, the training loop for a fixed pipeline and hyperparameter
//! vector, and objective evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_dataset, gen_negative, AugmentParams};
use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::bandit::PipelineConfig;
use crate::bo::HyperparamVector;
use crate::data::{Dataset, SplitDataset, Task, TimeSeries};
use crate::error::{Error, Result};
use crate::gmm::{self, GmmParams, COV_EPS};
use crate::metrics;
use crate::nets::{self, Batch, Bound, LatentRep, ModelWeights, NetConfig};
use crate::rng;

/// Probabilities entering the contrastive loss are clamped to
/// `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-7;
const INFER_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 0.5,
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::domain("loss weights must be non-negative"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::domain("epochs and batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::domain("learning_rate must be positive"));
        }
        Ok(())
    }
}

/// Mean loss components over one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub recon: f64,
    pub energy: f64,
    #[serde(rename = "self")]
    pub contrastive: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub weights: ModelWeights,
    pub net: NetConfig,
    pub gmm: GmmParams,
    pub pipeline: PipelineConfig,
    pub hyperparams: HyperparamVector,
    pub log: Vec<EpochLog>,
}

impl TrainedModel {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let m: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        m.weights.check(&m.net)?;
        if m.gmm.dim() != m.net.latent_dim() {
            return Err(Error::invalid(format!(
                "mixture dimension {} does not match latent width {}",
                m.gmm.dim(),
                m.net.latent_dim()
            )));
        }
        Ok(m)
    }

    /// Training log as JSON lines.
    pub fn log_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.log {
            let line = serde_json::to_string(e).expect("log entry serializes");
            writeln!(out, "{line}").expect("write to string");
        }
        out
    }
}

/// Network shape selected by `pipeline` and `hp`.
pub fn net_config(pipeline: &PipelineConfig, hp: &HyperparamVector, channel_dim: usize) -> Result<NetConfig> {
    let u = |name: &str| -> Result<usize> {
        let v = hp.int(name)?;
        usize::try_from(v).map_err(|_| Error::domain(format!("{name} = {v} is negative")))
    };
    let cfg = NetConfig {
        channel_dim,
        encoder: pipeline.encoder(),
        decoder: pipeline.decoder(),
        attention: pipeline.attention(),
        h_enc: u("h_enc")?,
        h_dec: u("h_dec")?,
        sim: pipeline.similarity(),
        est_layers: u("est_layers")?,
        est_nodes: u("est_nodes")?,
        clas_layers: u("clas_layers")?,
        clas_nodes: u("clas_nodes")?,
        components: u("components")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Augmentation settings selected by `pipeline` and `hp`.
pub fn augment_params(pipeline: &PipelineConfig, hp: &HyperparamVector, seed: u64) -> Result<AugmentParams> {
    use crate::augment::AugmentKind::*;
    let kind = pipeline.augmentation();
    let n_aug = usize::try_from(hp.int("n_aug")?).map_err(|_| Error::domain("n_aug is negative"))?;
    let mut p = AugmentParams {
        kind,
        n_aug,
        seed,
        ..AugmentParams::default()
    };
    match kind {
        Scaling => p.h_amp = hp.real("h_amp")?,
        Shifting => p.h_shift = hp.int("h_shift")?,
        Timewarp => p.h_tm = usize::try_from(hp.int("h_tm")?).map_err(|_| Error::domain("h_tm is negative"))?,
    }
    Ok(p)
}

/// Mean squared error over all timesteps and channels.
pub fn recon_loss(x: &[Vec<f64>], x_rec: &[Vec<f64>]) -> Result<f64> {
    if x.len() != x_rec.len() || x.is_empty() || x.iter().zip(x_rec).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::LengthMismatch(format!(
            "reconstruction of length {} for series of length {}",
            x_rec.len(),
            x.len()
        )));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (a, b) in x.iter().flatten().zip(x_rec.iter().flatten()) {
        sum += (a - b) * (a - b);
        n += 1;
    }
    Ok(sum / n as f64)
}

/// `-ln(1 - o_pos) - ln(o_neg)` with clamped probabilities.
pub fn contrastive_loss(o_pos: f64, o_neg: f64) -> f64 {
    let p = o_pos.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let n = o_neg.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(1.0 - p).ln() - n.ln()
}

/// Loss components; `total = recon + λ₁·energy + λ₂·contrastive`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParts<T> {
    pub recon: T,
    pub energy: T,
    pub contrastive: T,
    pub total: T,
}

/// Builds the overall loss for a batch of originals and their negatives.
/// Mixture parameters come from the batch's own memberships.
pub fn loss_graph(
    tape: &mut Tape,
    bound: &Bound,
    cfg: &NetConfig,
    pos: &Batch,
    neg: &Batch,
    lambda1: f64,
    lambda2: f64,
) -> Result<LossParts<Var>> {
    let f = nets::forward(tape, bound, cfg, pos)?;
    let recon = tape.mean(f.recon);

    let gamma = nets::estimate_graph(tape, bound, cfg, f.y)?;
    let e = gmm::energy_graph(tape, f.y, gamma, COV_EPS)?;
    let energy = tape.mean(e);

    let h_neg = nets::latent_h_graph(tape, bound, cfg, neg)?;
    let o_pos = nets::classify_graph(tape, bound, cfg, f.h)?;
    let o_neg = nets::classify_graph(tape, bound, cfg, h_neg)?;
    let o_pos = tape.clamp(o_pos, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let o_neg = tape.clamp(o_neg, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let not_pos = tape.scale(o_pos, -1.0);
    let not_pos = tape.add_scalar(not_pos, 1.0);
    let lp = tape.log(not_pos);
    let ln = tape.log(o_neg);
    let both = tape.add(lp, ln)?;
    let contrastive = tape.mean(both);
    let contrastive = tape.scale(contrastive, -1.0);

    let we = tape.scale(energy, lambda1);
    let wc = tape.scale(contrastive, lambda2);
    let total = tape.add(recon, we)?;
    let total = tape.add(total, wc)?;
    Ok(LossParts {
        recon,
        energy,
        contrastive,
        total,
    })
}

/// Evaluates the overall loss of one batch without training.
pub fn overall_loss(
    weights: &ModelWeights,
    cfg: &NetConfig,
    pos: &[&TimeSeries],
    neg: &[&TimeSeries],
    lambda1: f64,
    lambda2: f64,
) -> Result<LossParts<f64>> {
    if pos.len() != neg.len() {
        return Err(Error::LengthMismatch(format!(
            "{} originals but {} negatives",
            pos.len(),
            neg.len()
        )));
    }
    let (pb, nb) = (Batch::from_series(pos)?, Batch::from_series(neg)?);
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, weights, cfg, false)?;
    let parts = loss_graph(&mut tape, &bound, cfg, &pb, &nb, lambda1, lambda2)?;
    let v = |x: Var| tape.value(x).item();
    Ok(LossParts {
        recon: v(parts.recon),
        energy: v(parts.energy),
        contrastive: v(parts.contrastive),
        total: v(parts.total),
    })
}

/// Adam with the usual defaults (`β₁ = 0.9`, `β₂ = 0.999`, `ε = 1e-8`).
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    step: i32,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(weights: &ModelWeights, lr: f64) -> Self {
        let zeros: BTreeMap<String, Tensor> = weights
            .iter()
            .map(|(k, t)| (k.clone(), Tensor::zeros(t.rows(), t.cols())))
            .collect();
        Self {
            lr,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, weights: &mut ModelWeights, bound: &Bound, grads: &Gradients) {
        self.step += 1;
        let c1 = 1.0 - Self::B1.powi(self.step);
        let c2 = 1.0 - Self::B2.powi(self.step);
        for (name, w) in weights.iter_mut() {
            let Some(g) = grads.get(bound.var(name)) else { continue };
            let m = self.m.get_mut(name).expect("moment for every weight");
            let v = self.v.get_mut(name).expect("moment for every weight");
            for (((wi, &gi), mi), vi) in w
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = Self::B1 * *mi + (1.0 - Self::B1) * gi;
                *vi = Self::B2 * *vi + (1.0 - Self::B2) * gi * gi;
                *wi -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + Self::EPS);
            }
        }
    }
}

fn diverged(e: Error, epoch: usize) -> Error {
    match e {
        Error::Singular | Error::Numeric(_) => Error::Diverged { epoch },
        other => other,
    }
}

/// Trains on `splits.train` only; validation and test data are not read.
pub fn train_model(
    pipeline: &PipelineConfig,
    hp: &HyperparamVector,
    splits: &SplitDataset,
    tc: &TrainConfig,
) -> Result<TrainedModel> {
    train_on(pipeline, hp, &splits.train, tc)
}

pub fn train_on(pipeline: &PipelineConfig, hp: &HyperparamVector, train: &Dataset, tc: &TrainConfig) -> Result<TrainedModel> {
    tc.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let cfg = net_config(pipeline, hp, train.channel_dim)?;
    let aug = augment_params(pipeline, hp, rng::derive(tc.seed, "augment"))?;
    let data = augment_dataset(train, &aug)?;
    let neg_seed = rng::derive(tc.seed, "negatives");
    let negatives: Vec<TimeSeries> = data
        .series
        .iter()
        .enumerate()
        .map(|(i, s)| gen_negative(s, rng::derive_index(neg_seed, i as u64)).series)
        .collect();

    let mut weights = ModelWeights::init(&cfg, rng::derive(tc.seed, "init"))?;
    let mut adam = Adam::new(&weights, tc.learning_rate);
    let shuffle_seed = rng::derive(tc.seed, "shuffle");
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(tc.epochs);

    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng::rng(rng::derive_index(shuffle_seed, epoch as u64)));
        let mut sums = [0.0; 4];
        for chunk in order.chunks(tc.batch_size) {
            let pos: Vec<&TimeSeries> = chunk.iter().map(|&i| &data.series[i]).collect();
            let neg: Vec<&TimeSeries> = chunk.iter().map(|&i| &negatives[i]).collect();
            let (pb, nb) = (Batch::from_series(&pos)?, Batch::from_series(&neg)?);
            let mut tape = Tape::new();
            let bound = Bound::new(&mut tape, &weights, &cfg, true)?;
            let parts = loss_graph(&mut tape, &bound, &cfg, &pb, &nb, tc.lambda1, tc.lambda2)
                .map_err(|e| diverged(e, epoch))?;
            let vals = [parts.recon, parts.energy, parts.contrastive, parts.total].map(|v| tape.value(v).item());
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            for (s, v) in sums.iter_mut().zip(vals) {
                *s += v * chunk.len() as f64;
            }
            let grads = tape.backward(parts.total)?;
            adam.update(&mut weights, &bound, &grads);
        }
        if !weights.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let n = data.len() as f64;
        log.push(EpochLog {
            epoch,
            recon: sums[0] / n,
            energy: sums[1] / n,
            contrastive: sums[2] / n,
            total: sums[3] / n,
        });
    }

    let gmm = frozen_gmm(&weights, &cfg, &data).map_err(|e| diverged(e, tc.epochs))?;
    Ok(TrainedModel {
        weights,
        net: cfg,
        gmm,
        pipeline: pipeline.clone(),
        hyperparams: hp.clone(),
        log,
    })
}

/// Mixture parameters from memberships and latents over the whole of `data`.
pub fn frozen_gmm(weights: &ModelWeights, cfg: &NetConfig, data: &Dataset) -> Result<GmmParams> {
    let mut ys = Vec::with_capacity(data.len());
    let mut gammas = Vec::with_capacity(data.len());
    let seqs: Vec<&[Vec<f64>]> = data.series.iter().map(|s| s.values.as_slice()).collect();
    for part in seqs.chunks(INFER_CHUNK) {
        let batch = Batch::new(part)?;
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, weights, cfg, false)?;
        let f = nets::forward(&mut tape, &bound, cfg, &batch)?;
        let g = nets::estimate_graph(&mut tape, &bound, cfg, f.y)?;
        let (y, g) = (tape.value(f.y), tape.value(g));
        if !y.is_finite() || !g.is_finite() {
            return Err(Error::Numeric("non-finite latent or membership".into()));
        }
        ys.extend(y.to_rows());
        gammas.extend(g.to_rows());
    }
    gmm::m_step(&ys, &gammas, COV_EPS)
}

/// Latent representations of every series in `data`.
pub fn embed(model: &TrainedModel, data: &Dataset) -> Result<Vec<LatentRep>> {
    let seqs: Vec<&[Vec<f64>]> = data.series.iter().map(|s| s.values.as_slice()).collect();
    nets::latents(&model.weights, &model.net, &seqs, INFER_CHUNK)
}

/// Latent vectors `y = [h; z]` of every series in `data`.
pub fn latents(model: &TrainedModel, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    Ok(embed(model, data)?.into_iter().map(|r| r.y).collect())
}

/// Energy of one series under the frozen mixture.
pub fn score(model: &TrainedModel, series: &TimeSeries) -> Result<f64> {
    let rep = nets::latent(&model.weights, &model.net, series)?;
    model.gmm.prepare()?.energy(&rep.y)
}

pub fn score_dataset(model: &TrainedModel, data: &Dataset) -> Result<Vec<f64>> {
    let prepared = model.gmm.prepare()?;
    embed(model, data)?
        .iter()
        .map(|r| prepared.energy(&r.y))
        .collect()
}

fn labels_of(data: &Dataset) -> Result<Vec<i64>> {
    data.series
        .iter()
        .map(|s| s.label.ok_or_else(|| Error::invalid(format!("series {} has no label", s.id))))
        .collect()
}

/// AUC of energies for the anomaly task; NMI of latent-space EM clusters
/// (one component per class) for clustering.
pub fn objective(model: &TrainedModel, val: &Dataset, task: Task) -> Result<f64> {
    let labels = labels_of(val)?;
    match task {
        Task::Anomaly => metrics::auc(&score_dataset(model, val)?, &labels),
        Task::Cluster => {
            let k = val.class_counts().len();
            let pred = metrics::assign_latents(&latents(model, val)?, k, 0)?;
            metrics::nmi(&pred, &labels)
        }
    }
}
