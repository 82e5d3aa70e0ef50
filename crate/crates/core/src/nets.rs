//! Recurrent autoencoder, self-attention, reconstruction-similarity features
//! and the estimation / auxiliary classifier heads.
//!
//! Everything is built on the autodiff tape over batches of padded sequences.
//! Series in a batch may differ in length: a per-step mask freezes the
//! recurrent state of a series once its observations run out, so a series
//! encodes to the same vector whether it is scored alone or in a batch.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::TimeSeries;
use crate::error::{Error, Result};
use crate::rng;

pub const MAX_H_ENC: usize = 32;
pub const MAX_LAYERS: usize = 5;
pub const NODE_RANGE: (usize, usize) = (8, 128);

const NORM_FLOOR: f64 = 1e-12;
const MASK_PENALTY: f64 = -1e30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Rnn,
    Lstm,
    Gru,
}

impl CellKind {
    pub const ALL: [CellKind; 3] = [CellKind::Rnn, CellKind::Lstm, CellKind::Gru];

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Rnn => "rnn",
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
        }
    }

    fn gates(self) -> usize {
        match self {
            CellKind::Rnn => 1,
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Attention {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "self")]
    SelfAttention,
}

impl Attention {
    pub const ALL: [Attention; 2] = [Attention::None, Attention::SelfAttention];

    pub fn name(self) -> &'static str {
        match self {
            Attention::None => "none",
            Attention::SelfAttention => "self",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimKind {
    RelEuclid,
    Cosine,
    Both,
}

impl SimKind {
    pub const ALL: [SimKind; 3] = [SimKind::RelEuclid, SimKind::Cosine, SimKind::Both];

    pub fn name(self) -> &'static str {
        match self {
            SimKind::RelEuclid => "rel_euclid",
            SimKind::Cosine => "cosine",
            SimKind::Both => "both",
        }
    }

    /// Number of similarity features.
    pub fn width(self) -> usize {
        match self {
            SimKind::Both => 2,
            _ => 1,
        }
    }
}

/// Allowed decoder widths for `d` channels.
pub fn h_dec_range(d: usize) -> (usize, usize) {
    if d <= 1 {
        (1, MAX_H_ENC)
    } else {
        (d, 4 * d)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub channel_dim: usize,
    pub encoder: CellKind,
    pub decoder: CellKind,
    pub attention: Attention,
    pub h_enc: usize,
    pub h_dec: usize,
    pub sim: SimKind,
    pub est_layers: usize,
    pub est_nodes: usize,
    pub clas_layers: usize,
    pub clas_nodes: usize,
    /// Mixture component count `H`.
    pub components: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            channel_dim: 1,
            encoder: CellKind::Gru,
            decoder: CellKind::Gru,
            attention: Attention::None,
            h_enc: 8,
            h_dec: 8,
            sim: SimKind::Both,
            est_layers: 1,
            est_nodes: 16,
            clas_layers: 1,
            clas_nodes: 16,
            components: 2,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: usize, lo: usize, hi: usize| {
            if v < lo || v > hi {
                Err(Error::domain(format!("{name} = {v} outside [{lo}, {hi}]")))
            } else {
                Ok(())
            }
        };
        check("channel_dim", self.channel_dim, 1, usize::MAX)?;
        check("h_enc", self.h_enc, 1, MAX_H_ENC)?;
        let (lo, hi) = h_dec_range(self.channel_dim);
        check("h_dec", self.h_dec, lo, hi)?;
        check("est_layers", self.est_layers, 1, MAX_LAYERS)?;
        check("clas_layers", self.clas_layers, 1, MAX_LAYERS)?;
        check("est_nodes", self.est_nodes, NODE_RANGE.0, NODE_RANGE.1)?;
        check("clas_nodes", self.clas_nodes, NODE_RANGE.0, NODE_RANGE.1)?;
        check("components", self.components, 1, usize::MAX)?;
        Ok(())
    }

    /// Width of `y = [h; z]`.
    pub fn latent_dim(&self) -> usize {
        self.h_enc + self.sim.width()
    }

    /// `(name, shape, fan_in)` of every tensor, in initialization order.
    fn layout(&self) -> Vec<(String, [usize; 2], usize)> {
        let d = self.channel_dim;
        let mut out = Vec::new();
        let cell = |out: &mut Vec<_>, p: &str, kind: CellKind, input: usize, hidden: usize| {
            let g = kind.gates() * hidden;
            out.push((format!("{p}.w_x"), [input, g], hidden));
            out.push((format!("{p}.w_h"), [hidden, g], hidden));
            out.push((format!("{p}.b"), [1, g], hidden));
            if kind == CellKind::Gru {
                out.push((format!("{p}.b_hn"), [1, hidden], hidden));
            }
        };
        cell(&mut out, "enc", self.encoder, d, self.h_enc);
        out.push(("dec.init.w".into(), [self.h_enc, self.h_dec], self.h_enc));
        out.push(("dec.init.b".into(), [1, self.h_dec], self.h_enc));
        cell(&mut out, "dec", self.decoder, d, self.h_dec);
        out.push(("dec.out.w".into(), [self.h_dec, d], self.h_dec));
        out.push(("dec.out.b".into(), [1, d], self.h_dec));
        let mut mlp = |p: &str, input: usize, layers: usize, nodes: usize, output: usize| {
            let mut fan = input;
            for l in 0..layers {
                out.push((format!("{p}.{l}.w"), [fan, nodes], fan));
                out.push((format!("{p}.{l}.b"), [1, nodes], fan));
                fan = nodes;
            }
            out.push((format!("{p}.out.w"), [fan, output], fan));
            out.push((format!("{p}.out.b"), [1, output], fan));
        };
        mlp("est", self.latent_dim(), self.est_layers, self.est_nodes, self.components);
        mlp("clas", self.h_enc, self.clas_layers, self.clas_nodes, 1);
        out
    }
}

/// Named weight tensors of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelWeights {
    tensors: BTreeMap<String, Tensor>,
}

impl ModelWeights {
    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialization.
    pub fn init(cfg: &NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng::rng(seed);
        let tensors = cfg
            .layout()
            .into_iter()
            .map(|(name, [rows, cols], fan_in)| {
                let a = 1.0 / (fan_in as f64).sqrt();
                let data = (0..rows * cols).map(|_| r.random_range(-a..=a)).collect();
                (name, Tensor::new(rows, cols, data).expect("layout shape"))
            })
            .collect();
        Ok(Self { tensors })
    }

    pub fn zeros(cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        let tensors = cfg
            .layout()
            .into_iter()
            .map(|(name, [r, c], _)| (name, Tensor::zeros(r, c)))
            .collect();
        Ok(Self { tensors })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// Checks names and shapes against `cfg`.
    pub fn check(&self, cfg: &NetConfig) -> Result<()> {
        cfg.validate()?;
        let layout = cfg.layout();
        if layout.len() != self.tensors.len() {
            return Err(Error::invalid(format!(
                "expected {} weight tensors, found {}",
                layout.len(),
                self.tensors.len()
            )));
        }
        for (name, shape, _) in layout {
            match self.tensors.get(&name) {
                None => return Err(Error::invalid(format!("missing weight tensor {name}"))),
                Some(t) if t.shape() != shape => {
                    return Err(Error::invalid(format!(
                        "weight {name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

/// Weights placed on a tape.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn new(tape: &mut Tape, weights: &ModelWeights, cfg: &NetConfig, trainable: bool) -> Result<Self> {
        weights.check(cfg)?;
        let vars = weights
            .iter()
            .map(|(k, t)| (k.clone(), tape.leaf(t.clone(), trainable)))
            .collect();
        Ok(Self { vars })
    }

    /// Binds already-placed tape leaves by name.
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self {
            vars: vars.into_iter().collect(),
        }
    }

    pub fn var(&self, name: &str) -> Var {
        *self.vars.get(name).unwrap_or_else(|| panic!("unbound weight {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// Zero-padded batch of variable-length sequences.
#[derive(Clone, Debug)]
pub struct Batch {
    dim: usize,
    lengths: Vec<usize>,
    steps: Vec<Tensor>,
    masks: Vec<Option<Tensor>>,
    flat: Tensor,
    flat_mask: Tensor,
}

impl Batch {
    pub fn new(seqs: &[&[Vec<f64>]]) -> Result<Self> {
        let first = seqs.first().ok_or(Error::EmptyDataset)?;
        let dim = first.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::invalid("batch sequences need at least one observation"));
        }
        for s in seqs {
            if s.is_empty() || s.iter().any(|v| v.len() != dim) {
                return Err(Error::LengthMismatch(format!(
                    "batch sequences must be non-empty with {dim} channels"
                )));
            }
        }
        let rows = seqs.len();
        let lengths: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
        let t_max = *lengths.iter().max().expect("non-empty");
        let mut steps = Vec::with_capacity(t_max);
        let mut masks = Vec::with_capacity(t_max);
        let mut flat = Tensor::zeros(rows, t_max * dim);
        let mut flat_mask = Tensor::zeros(rows, t_max * dim);
        for t in 0..t_max {
            let mut step = Tensor::zeros(rows, dim);
            let mut mask = Tensor::zeros(rows, 1);
            for (i, s) in seqs.iter().enumerate() {
                if let Some(obs) = s.get(t) {
                    mask.set(i, 0, 1.0);
                    for (c, &v) in obs.iter().enumerate() {
                        step.set(i, c, v);
                        flat.set(i, t * dim + c, v);
                        flat_mask.set(i, t * dim + c, 1.0);
                    }
                }
            }
            steps.push(step);
            masks.push(if mask.data().iter().all(|&m| m == 1.0) {
                None
            } else {
                Some(mask)
            });
        }
        Ok(Self {
            dim,
            lengths,
            steps,
            masks,
            flat,
            flat_mask,
        })
    }

    pub fn from_series(series: &[&TimeSeries]) -> Result<Self> {
        let seqs: Vec<&[Vec<f64>]> = series.iter().map(|s| s.values.as_slice()).collect();
        Self::new(&seqs)
    }

    pub fn rows(&self) -> usize {
        self.lengths.len()
    }

    pub fn t_max(&self) -> usize {
        self.steps.len()
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }
}

fn cell_step(
    tape: &mut Tape,
    bound: &Bound,
    prefix: &str,
    kind: CellKind,
    hidden: usize,
    x: Var,
    h: Var,
    c: Option<Var>,
) -> Result<(Var, Option<Var>)> {
    let wx = bound.var(&format!("{prefix}.w_x"));
    let wh = bound.var(&format!("{prefix}.w_h"));
    let b = bound.var(&format!("{prefix}.b"));
    let xw = tape.matmul(x, wx)?;
    let hw = tape.matmul(h, wh)?;
    match kind {
        CellKind::Rnn => {
            let pre = tape.add(xw, hw)?;
            let pre = tape.add(pre, b)?;
            Ok((tape.tanh(pre), None))
        }
        CellKind::Lstm => {
            let pre = tape.add(xw, hw)?;
            let pre = tape.add(pre, b)?;
            let i = tape.slice(pre, 0, hidden)?;
            let i = tape.sigmoid(i);
            let f = tape.slice(pre, hidden, hidden)?;
            let f = tape.sigmoid(f);
            let g = tape.slice(pre, 2 * hidden, hidden)?;
            let g = tape.tanh(g);
            let o = tape.slice(pre, 3 * hidden, hidden)?;
            let o = tape.sigmoid(o);
            let c = c.expect("lstm cell state");
            let keep = tape.mul(f, c)?;
            let write = tape.mul(i, g)?;
            let c_new = tape.add(keep, write)?;
            let tc = tape.tanh(c_new);
            Ok((tape.mul(o, tc)?, Some(c_new)))
        }
        CellKind::Gru => {
            let gx = tape.add(xw, b)?;
            let rz_x = tape.slice(gx, 0, 2 * hidden)?;
            let rz_h = tape.slice(hw, 0, 2 * hidden)?;
            let rz = tape.add(rz_x, rz_h)?;
            let rz = tape.sigmoid(rz);
            let r = tape.slice(rz, 0, hidden)?;
            let z = tape.slice(rz, hidden, hidden)?;
            let nx = tape.slice(gx, 2 * hidden, hidden)?;
            let nh = tape.slice(hw, 2 * hidden, hidden)?;
            let nh = tape.add(nh, bound.var(&format!("{prefix}.b_hn")))?;
            let gated = tape.mul(r, nh)?;
            let n = tape.add(nx, gated)?;
            let n = tape.tanh(n);
            // (1 - z) * n + z * h
            let hn = tape.sub(h, n)?;
            let zhn = tape.mul(z, hn)?;
            Ok((tape.add(n, zhn)?, None))
        }
    }
}

/// Keeps `old` where `mask` is 0.
fn masked(tape: &mut Tape, old: Var, new: Var, mask: Option<&Tensor>) -> Result<Var> {
    match mask {
        None => Ok(new),
        Some(m) => {
            let m = tape.constant(m.clone());
            let delta = tape.sub(new, old)?;
            let delta = tape.mul(delta, m)?;
            tape.add(old, delta)
        }
    }
}

/// Runs the encoder; returns the final state of every row and the state after
/// every step.
pub fn encode_graph(tape: &mut Tape, bound: &Bound, cfg: &NetConfig, batch: &Batch) -> Result<(Var, Vec<Var>)> {
    if batch.dim != cfg.channel_dim {
        return Err(Error::invalid(format!(
            "batch has {} channels, model expects {}",
            batch.dim, cfg.channel_dim
        )));
    }
    let rows = batch.rows();
    let mut h = tape.constant(Tensor::zeros(rows, cfg.h_enc));
    let mut c = (cfg.encoder == CellKind::Lstm).then(|| tape.constant(Tensor::zeros(rows, cfg.h_enc)));
    let mut states = Vec::with_capacity(batch.t_max());
    for (x, mask) in batch.steps.iter().zip(&batch.masks) {
        let x = tape.constant(x.clone());
        let (h_new, c_new) = cell_step(tape, bound, "enc", cfg.encoder, cfg.h_enc, x, h, c)?;
        h = masked(tape, h, h_new, mask.as_ref())?;
        if let (Some(old), Some(new)) = (c, c_new) {
            c = Some(masked(tape, old, new, mask.as_ref())?);
        }
        states.push(h);
    }
    Ok((h, states))
}

/// Scaled dot-product attention with each row's final state as the query.
/// `lengths` restricts row `i` to its first `lengths[i]` states.
pub fn attend_graph(tape: &mut Tape, states: &[Var], query: Var, lengths: &[usize]) -> Result<Var> {
    let (&first, rest) = states
        .split_first()
        .ok_or_else(|| Error::invalid("attention over zero states"))?;
    if rest.is_empty() {
        return Ok(first);
    }
    let [rows, width] = tape.shape(query);
    let mut scores = Vec::with_capacity(states.len());
    for &s in states {
        let qs = tape.mul(query, s)?;
        scores.push(tape.sum_cols(qs));
    }
    let scores = tape.concat(&scores)?;
    let mut scores = tape.scale(scores, 1.0 / (width as f64).sqrt());
    if lengths.iter().any(|&l| l < states.len()) {
        let mut pen = Tensor::zeros(rows, states.len());
        for (i, &l) in lengths.iter().enumerate() {
            for t in l..states.len() {
                pen.set(i, t, MASK_PENALTY);
            }
        }
        let pen = tape.constant(pen);
        scores = tape.add(scores, pen)?;
    }
    let w = tape.softmax(scores);
    let mut out: Option<Var> = None;
    for (t, &s) in states.iter().enumerate() {
        let wt = tape.slice(w, t, 1)?;
        let term = tape.mul(wt, s)?;
        out = Some(match out {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok(out.expect("at least two states"))
}

/// Encoder output `h` after the configured attention.
pub fn latent_h_graph(tape: &mut Tape, bound: &Bound, cfg: &NetConfig, batch: &Batch) -> Result<Var> {
    let (last, states) = encode_graph(tape, bound, cfg, batch)?;
    match cfg.attention {
        Attention::None => Ok(last),
        Attention::SelfAttention => attend_graph(tape, &states, last, &batch.lengths),
    }
}

/// Autoregressive decoder: `steps` readouts of shape `rows x D`.
pub fn decode_graph(tape: &mut Tape, bound: &Bound, cfg: &NetConfig, h: Var, steps: usize) -> Result<Vec<Var>> {
    let rows = tape.shape(h)[0];
    let hw = tape.matmul(h, bound.var("dec.init.w"))?;
    let mut hd = tape.add(hw, bound.var("dec.init.b"))?;
    let mut c = (cfg.decoder == CellKind::Lstm).then(|| tape.constant(Tensor::zeros(rows, cfg.h_dec)));
    let mut x = tape.constant(Tensor::zeros(rows, cfg.channel_dim));
    let (ow, ob) = (bound.var("dec.out.w"), bound.var("dec.out.b"));
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (h_new, c_new) = cell_step(tape, bound, "dec", cfg.decoder, cfg.h_dec, x, hd, c)?;
        hd = h_new;
        c = c_new;
        let r = tape.matmul(hd, ow)?;
        let r = tape.add(r, ob)?;
        out.push(r);
        x = r;
    }
    Ok(out)
}

/// Per-row similarity features (`rows x width`) and mean squared
/// reconstruction error (`rows x 1`).
pub fn similarity_graph(tape: &mut Tape, batch: &Batch, readouts: &[Var], kind: SimKind) -> Result<(Var, Var)> {
    let rows = batch.rows();
    let recon = tape.concat(readouts)?;
    let x = tape.constant(batch.flat.clone());
    let m = tape.constant(batch.flat_mask.clone());
    let rm = tape.mul(recon, m)?;
    let diff = tape.sub(rm, x)?;
    let sq = tape.square(diff);
    let sse = tape.sum_cols(sq);

    let mut inv_count = Tensor::zeros(rows, 1);
    let mut inv_xnorm = Tensor::zeros(rows, 1);
    for i in 0..rows {
        inv_count.set(i, 0, 1.0 / (batch.lengths[i] * batch.dim) as f64);
        let n2: f64 = batch.flat.row(i).iter().map(|v| v * v).sum();
        inv_xnorm.set(i, 0, 1.0 / n2.sqrt().max(NORM_FLOOR));
    }
    let inv_count = tape.constant(inv_count);
    let inv_xnorm = tape.constant(inv_xnorm);
    let mse = tape.mul(sse, inv_count)?;

    let rel = |tape: &mut Tape| -> Result<Var> {
        let dist = tape.sqrt(sse);
        tape.mul(dist, inv_xnorm)
    };
    let cos = |tape: &mut Tape| -> Result<Var> {
        let xr = tape.mul(rm, x)?;
        let dot = tape.sum_cols(xr);
        let r2 = tape.square(rm);
        let r2 = tape.sum_cols(r2);
        let rn = tape.sqrt(r2);
        let rn = tape.clamp(rn, NORM_FLOOR, f64::INFINITY);
        let c = tape.mul(dot, inv_xnorm)?;
        tape.div(c, rn)
    };
    let z = match kind {
        SimKind::RelEuclid => rel(tape)?,
        SimKind::Cosine => cos(tape)?,
        SimKind::Both => {
            let a = rel(tape)?;
            let b = cos(tape)?;
            tape.concat(&[a, b])?
        }
    };
    Ok((z, mse))
}

fn mlp_graph(tape: &mut Tape, bound: &Bound, prefix: &str, layers: usize, input: Var) -> Result<Var> {
    let mut x = input;
    for l in 0..layers {
        let w = tape.matmul(x, bound.var(&format!("{prefix}.{l}.w")))?;
        let a = tape.add(w, bound.var(&format!("{prefix}.{l}.b")))?;
        x = tape.tanh(a);
    }
    let w = tape.matmul(x, bound.var(&format!("{prefix}.out.w")))?;
    tape.add(w, bound.var(&format!("{prefix}.out.b")))
}

/// Mixture memberships `rows x H`.
pub fn estimate_graph(tape: &mut Tape, bound: &Bound, cfg: &NetConfig, y: Var) -> Result<Var> {
    let logits = mlp_graph(tape, bound, "est", cfg.est_layers, y)?;
    Ok(tape.softmax(logits))
}

/// Probability that each row of `h` is a corrupted sample, `rows x 1`.
pub fn classify_graph(tape: &mut Tape, bound: &Bound, cfg: &NetConfig, h: Var) -> Result<Var> {
    let logit = mlp_graph(tape, bound, "clas", cfg.clas_layers, h)?;
    Ok(tape.sigmoid(logit))
}

/// Tape handles for one autoencoder pass over a batch.
#[derive(Clone, Debug)]
pub struct Forward {
    pub h: Var,
    pub z: Var,
    pub y: Var,
    /// Per-row mean squared reconstruction error.
    pub recon: Var,
    pub readouts: Vec<Var>,
}

pub fn forward(tape: &mut Tape, bound: &Bound, cfg: &NetConfig, batch: &Batch) -> Result<Forward> {
    let h = latent_h_graph(tape, bound, cfg, batch)?;
    let readouts = decode_graph(tape, bound, cfg, h, batch.t_max())?;
    let (z, recon) = similarity_graph(tape, batch, &readouts, cfg.sim)?;
    let y = tape.concat(&[h, z])?;
    Ok(Forward {
        h,
        z,
        y,
        recon,
        readouts,
    })
}

/// Latent representation of one series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentRep {
    pub h: Vec<f64>,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
}

fn check_finite(t: &Tensor, what: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite {what}")))
    }
}

/// Latent representations of many sequences, evaluated in chunks of `chunk`.
pub fn latents(weights: &ModelWeights, cfg: &NetConfig, seqs: &[&[Vec<f64>]], chunk: usize) -> Result<Vec<LatentRep>> {
    let mut out = Vec::with_capacity(seqs.len());
    for part in seqs.chunks(chunk.max(1)) {
        let batch = Batch::new(part)?;
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, weights, cfg, false)?;
        let f = forward(&mut tape, &bound, cfg, &batch)?;
        let (h, z) = (tape.value(f.h), tape.value(f.z));
        check_finite(tape.value(f.y), "latent vector")?;
        for i in 0..part.len() {
            let (h, z) = (h.row(i).to_vec(), z.row(i).to_vec());
            let y = h.iter().chain(&z).copied().collect();
            out.push(LatentRep { h, z, y });
        }
    }
    Ok(out)
}

pub fn latent(weights: &ModelWeights, cfg: &NetConfig, series: &TimeSeries) -> Result<LatentRep> {
    Ok(latents(weights, cfg, &[series.values.as_slice()], 1)?.remove(0))
}

/// Final encoder state (before attention) and the state after every step.
pub fn encode(weights: &ModelWeights, cfg: &NetConfig, series: &TimeSeries) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let batch = Batch::from_series(&[series])?;
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, weights, cfg, false)?;
    let (h, states) = encode_graph(&mut tape, &bound, cfg, &batch)?;
    check_finite(tape.value(h), "encoder state")?;
    let states = states.iter().map(|&s| tape.value(s).data().to_vec()).collect();
    Ok((tape.value(h).data().to_vec(), states))
}

/// Self-attention over encoder states with the last state as query.
pub fn attend(states: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = states
        .iter()
        .map(|s| tape.constant(Tensor::row_vector(s)))
        .collect();
    let query = *vars.last().ok_or_else(|| Error::invalid("attention over zero states"))?;
    let h = attend_graph(&mut tape, &vars, query, &[states.len()])?;
    Ok(tape.value(h).data().to_vec())
}

/// Reconstruction of length `steps` from latent `h`.
pub fn decode(weights: &ModelWeights, cfg: &NetConfig, h: &[f64], steps: usize) -> Result<Vec<Vec<f64>>> {
    if steps == 0 {
        return Err(Error::domain("decode needs at least one step"));
    }
    if h.len() != cfg.h_enc {
        return Err(Error::LengthMismatch(format!("h has length {}, expected {}", h.len(), cfg.h_enc)));
    }
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, weights, cfg, false)?;
    let hv = tape.constant(Tensor::row_vector(h));
    let outs = decode_graph(&mut tape, &bound, cfg, hv, steps)?;
    outs.iter()
        .map(|&r| {
            check_finite(tape.value(r), "reconstruction")?;
            Ok(tape.value(r).data().to_vec())
        })
        .collect()
}

/// Similarity features between `x` and its reconstruction, both flattened.
pub fn similarity(x: &[Vec<f64>], x_rec: &[Vec<f64>], kind: SimKind) -> Result<Vec<f64>> {
    if x.len() != x_rec.len() || x.iter().zip(x_rec).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::LengthMismatch(format!(
            "similarity of sequences with lengths {} and {}",
            x.len(),
            x_rec.len()
        )));
    }
    let pairs = || x.iter().flatten().zip(x_rec.iter().flatten());
    let xn = x.iter().flatten().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR);
    let rn = x_rec.iter().flatten().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR);
    let rel = pairs().map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() / xn;
    let cos = pairs().map(|(a, b)| a * b).sum::<f64>() / (xn * rn);
    Ok(match kind {
        SimKind::RelEuclid => vec![rel],
        SimKind::Cosine => vec![cos],
        SimKind::Both => vec![rel, cos],
    })
}

/// Mixture memberships for one latent vector.
pub fn estimate(weights: &ModelWeights, cfg: &NetConfig, y: &[f64]) -> Result<Vec<f64>> {
    if y.len() != cfg.latent_dim() {
        return Err(Error::LengthMismatch(format!(
            "y has length {}, expected {}",
            y.len(),
            cfg.latent_dim()
        )));
    }
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, weights, cfg, false)?;
    let yv = tape.constant(Tensor::row_vector(y));
    let g = estimate_graph(&mut tape, &bound, cfg, yv)?;
    Ok(tape.value(g).data().to_vec())
}

pub fn classify(weights: &ModelWeights, cfg: &NetConfig, h: &[f64]) -> Result<f64> {
    if h.len() != cfg.h_enc {
        return Err(Error::LengthMismatch(format!("h has length {}, expected {}", h.len(), cfg.h_enc)));
    }
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, weights, cfg, false)?;
    let hv = tape.constant(Tensor::row_vector(h));
    let o = classify_graph(&mut tape, &bound, cfg, hv)?;
    Ok(tape.value(o).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;

    fn cfg(kind: CellKind) -> NetConfig {
        NetConfig {
            encoder: kind,
            decoder: kind,
            h_enc: 3,
            h_dec: 2,
            est_nodes: 8,
            clas_nodes: 8,
            ..NetConfig::default()
        }
    }

    fn series(v: &[f64]) -> TimeSeries {
        TimeSeries::univariate("s", v, None).unwrap()
    }

    #[test]
    fn zero_weights_fixed_point() {
        for kind in CellKind::ALL {
            let c = cfg(kind);
            let w = ModelWeights::zeros(&c).unwrap();
            let (h, states) = encode(&w, &c, &series(&[0.0; 4])).unwrap();
            assert_eq!(h, vec![0.0; 3]);
            assert_eq!(states.len(), 4);
            let rec = decode(&w, &c, &h, 5).unwrap();
            assert_eq!(rec, vec![vec![0.0]; 5]);
            let g = estimate(&w, &c, &[0.0; 5]).unwrap();
            assert_eq!(g, vec![0.5, 0.5]);
            assert_eq!(classify(&w, &c, &h).unwrap(), 0.5);
        }
    }

    #[test]
    fn variable_lengths_share_weights() {
        for kind in CellKind::ALL {
            let c = cfg(kind);
            let w = ModelWeights::init(&c, 3).unwrap();
            let a = series(&[0.1, 0.5, -0.2, 0.3, 0.9]);
            let b = series(&[1.0, -1.0, 0.5, 0.2, 0.0, 0.3, -0.4, 0.8, 0.1]);
            let (ha, _) = encode(&w, &c, &a).unwrap();
            let (hb, _) = encode(&w, &c, &b).unwrap();
            assert_eq!(ha.len(), 3);
            assert_eq!(hb.len(), 3);
            // batching with padding leaves each row's latent unchanged
            let solo = latents(&w, &c, &[a.values.as_slice()], 1).unwrap();
            let both = latents(&w, &c, &[a.values.as_slice(), b.values.as_slice()], 8).unwrap();
            for (x, y) in solo[0].y.iter().zip(&both[0].y) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_properties() {
        let s = vec![vec![0.3, -0.2]];
        assert_eq!(attend(&s).unwrap(), s[0]);
        let same = vec![vec![0.4, 0.1]; 5];
        for (a, b) in attend(&same).unwrap().iter().zip(&same[0]) {
            assert!((a - b).abs() < 1e-15);
        }
        let mixed = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]];
        let h = attend(&mixed).unwrap();
        // convex combination of the states: coordinates sum to 1 here
        assert!((h[0] + h[1] - 1.0).abs() < 1e-12);
        assert!(h.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn similarity_examples() {
        let x = vec![vec![3.0], vec![4.0]];
        let z = similarity(&x, &x, SimKind::Both).unwrap();
        assert_eq!(z[0], 0.0);
        assert!((z[1] - 1.0).abs() < 1e-15);
        let zero = vec![vec![0.0], vec![0.0]];
        assert_eq!(similarity(&x, &zero, SimKind::RelEuclid).unwrap(), vec![1.0]);
        let orth = vec![vec![4.0], vec![-3.0]];
        assert_eq!(similarity(&x, &orth, SimKind::Cosine).unwrap(), vec![0.0]);
        assert!(similarity(&x, &x[..1], SimKind::Cosine).is_err());
    }

    #[test]
    fn graph_similarity_matches_direct() {
        let c = NetConfig {
            attention: Attention::SelfAttention,
            ..cfg(CellKind::Lstm)
        };
        let w = ModelWeights::init(&c, 11).unwrap();
        let s = series(&[0.2, -0.7, 1.1, 0.4, -0.3, 0.0]);
        let rep = latent(&w, &c, &s).unwrap();
        let (_, states) = encode(&w, &c, &s).unwrap();
        let h = attend(&states).unwrap();
        for (a, b) in h.iter().zip(&rep.h) {
            assert!((a - b).abs() < 1e-12);
        }
        let rec = decode(&w, &c, &h, s.len()).unwrap();
        let z = similarity(&s.values, &rec, SimKind::Both).unwrap();
        for (a, b) in z.iter().zip(&rep.z) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn estimate_on_simplex() {
        let c = NetConfig {
            components: 4,
            ..cfg(CellKind::Rnn)
        };
        let w = ModelWeights::init(&c, 5).unwrap();
        let g = estimate(&w, &c, &[5.0, -3.0, 0.1, 2.0, 9.0]).unwrap();
        assert_eq!(g.len(), 4);
        assert!(g.iter().all(|&v| v >= 0.0));
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let o = classify(&w, &c, &[0.1, 0.2, 0.3]).unwrap();
        assert!(o > 0.0 && o < 1.0);
        assert_eq!(o, classify(&w, &c, &[0.1, 0.2, 0.3]).unwrap());
    }

    #[test]
    fn config_bounds() {
        let mut c = NetConfig::default();
        assert!(c.validate().is_ok());
        c.h_enc = 33;
        assert!(c.validate().is_err());
        let mv = NetConfig {
            channel_dim: 3,
            h_dec: 2,
            ..NetConfig::default()
        };
        assert!(mv.validate().is_err());
        assert!(NetConfig { h_dec: 12, ..mv }.validate().is_ok());
    }

    #[test]
    fn weights_round_trip_and_check() {
        let c = cfg(CellKind::Gru);
        let w = ModelWeights::init(&c, 1).unwrap();
        let json = serde_json::to_string(&w).unwrap();
        let back: ModelWeights = serde_json::from_str(&json).unwrap();
        assert_eq!(w, back);
        assert!(back.check(&c).is_ok());
        assert!(back.check(&cfg(CellKind::Lstm)).is_err());
    }

    #[test]
    fn autoencoder_gradients() {
        for kind in CellKind::ALL {
            let c = NetConfig {
                attention: Attention::SelfAttention,
                ..cfg(kind)
            };
            let w = ModelWeights::init(&c, 9).unwrap();
            let names: Vec<String> = w.iter().map(|(k, _)| k.clone()).collect();
            let params: Vec<Tensor> = w.iter().map(|(_, t)| t.clone()).collect();
            let a = series(&[0.5, -0.1, 0.8, 0.2]);
            let b = series(&[-0.3, 0.6, 0.1]);
            let batch = Batch::from_series(&[&a, &b]).unwrap();
            let err = grad_check(
                |tape, vars| {
                    let bound = Bound::from_vars(names.iter().cloned().zip(vars.iter().copied()));
                    let f = forward(tape, &bound, &c, &batch)?;
                    let s = tape.sum(f.z);
                    let r = tape.sum(f.recon);
                    Ok(tape.add(s, r)?)
                },
                &params,
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-3, "{kind:?}: {err}");
        }
    }
}
