//! Gaussian-process Bayesian optimization over a mixed continuous/discrete
//! box, with an ARD Matérn 5/2 kernel and expected improvement.
//!
//! Points live in the unit cube; [`Dimension`] maps them to and from the
//! original domains. Discrete dimensions are stored continuous and rounded
//! on decode.

use std::collections::BTreeMap;
use std::f64::consts::LN_10;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::rng;

pub const NOISE_FLOOR: f64 = 1e-8;
pub const DEFAULT_CANDIDATES: usize = 1000;
pub const DEFAULT_RESTARTS: usize = 5;
/// Observations needed before the GP is consulted.
pub const RANDOM_WARMUP: usize = 2;

const SQRT5: f64 = 2.236_067_977_499_79;
/// `ln 1e-3` and `ln 1e3`.
const LOG_BOUNDS: (f64, f64) = (-3.0 * LN_10, 3.0 * LN_10);
const NOISE_LOG_MAX: f64 = LN_10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Domain {
    Continuous { lo: f64, hi: f64 },
    Discrete { lo: i64, hi: i64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub domain: Domain,
}

/// A hyperparameter value; integers for discrete dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HpValue {
    Int(i64),
    Real(f64),
}

impl HpValue {
    pub fn as_f64(self) -> f64 {
        match self {
            HpValue::Int(v) => v as f64,
            HpValue::Real(v) => v,
        }
    }
}

impl Dimension {
    pub fn continuous(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            domain: Domain::Continuous { lo, hi },
        }
    }

    pub fn discrete(name: impl Into<String>, lo: i64, hi: i64) -> Self {
        Self {
            name: name.into(),
            domain: Domain::Discrete { lo, hi },
        }
    }

    /// Maps `u ∈ [0, 1]` into the domain.
    pub fn decode(&self, u: f64) -> HpValue {
        let u = u.clamp(0.0, 1.0);
        match self.domain {
            Domain::Continuous { lo, hi } => HpValue::Real(lo + u * (hi - lo)),
            Domain::Discrete { lo, hi } => HpValue::Int(lo + (u * (hi - lo) as f64).round() as i64),
        }
    }

    /// Inverse of [`decode`](Self::decode) for in-domain values.
    pub fn encode(&self, v: HpValue) -> f64 {
        let (lo, hi) = match self.domain {
            Domain::Continuous { lo, hi } => (lo, hi),
            Domain::Discrete { lo, hi } => (lo as f64, hi as f64),
        };
        if hi == lo {
            0.5
        } else {
            ((v.as_f64() - lo) / (hi - lo)).clamp(0.0, 1.0)
        }
    }

    pub fn contains(&self, v: HpValue) -> bool {
        match (self.domain, v) {
            (Domain::Continuous { lo, hi }, HpValue::Real(x)) => x >= lo && x <= hi,
            (Domain::Discrete { lo, hi }, HpValue::Int(x)) => x >= lo && x <= hi,
            _ => false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HyperparamVector {
    pub values: BTreeMap<String, HpValue>,
}

impl HyperparamVector {
    pub fn decode(dims: &[Dimension], point: &[f64]) -> Self {
        Self {
            values: dims
                .iter()
                .zip(point)
                .map(|(d, &u)| (d.name.clone(), d.decode(u)))
                .collect(),
        }
    }

    /// Point in the unit cube; missing dimensions map to the centre.
    pub fn encode(&self, dims: &[Dimension]) -> Vec<f64> {
        dims.iter()
            .map(|d| self.values.get(&d.name).map_or(0.5, |&v| d.encode(v)))
            .collect()
    }

    pub fn set(&mut self, name: impl Into<String>, v: HpValue) -> &mut Self {
        self.values.insert(name.into(), v);
        self
    }

    pub fn with(mut self, name: impl Into<String>, v: HpValue) -> Self {
        self.set(name, v);
        self
    }

    pub fn int(&self, name: &str) -> Result<i64> {
        match self.values.get(name) {
            Some(HpValue::Int(v)) => Ok(*v),
            Some(HpValue::Real(v)) => Err(Error::invalid(format!("hyperparameter {name} = {v} is not an integer"))),
            None => Err(Error::invalid(format!("missing hyperparameter {name}"))),
        }
    }

    pub fn real(&self, name: &str) -> Result<f64> {
        self.values
            .get(name)
            .map(|v| v.as_f64())
            .ok_or_else(|| Error::invalid(format!("missing hyperparameter {name}")))
    }

    /// Every dimension present and inside its domain.
    pub fn validate(&self, dims: &[Dimension]) -> Result<()> {
        for d in dims {
            match self.values.get(&d.name) {
                None => return Err(Error::invalid(format!("missing hyperparameter {}", d.name))),
                Some(&v) if !d.contains(v) => {
                    return Err(Error::domain(format!("hyperparameter {} = {v:?} outside {:?}", d.name, d.domain)))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

/// Kernel hyperparameters: signal scale `tau0`, length scales `tau`, noise
/// variance `noise`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Psi {
    pub tau0: f64,
    pub tau: Vec<f64>,
    pub noise: f64,
}

impl Psi {
    /// `(1, …, 1, 0.01)`.
    pub fn default_start(d: usize) -> Self {
        Self {
            tau0: 1.0,
            tau: vec![1.0; d],
            noise: 0.01,
        }
    }

    fn to_log(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.tau.len() + 2);
        v.push(self.tau0.ln());
        v.extend(self.tau.iter().map(|t| t.ln()));
        v.push(self.noise.ln());
        v
    }

    fn from_log(v: &[f64]) -> Self {
        let n = v.len();
        Self {
            tau0: v[0].exp(),
            tau: v[1..n - 1].iter().map(|x| x.exp()).collect(),
            noise: v[n - 1].exp().max(NOISE_FLOOR),
        }
    }
}

/// ARD Matérn 5/2 covariance.
pub fn kernel(p: &[f64], q: &[f64], psi: &Psi) -> Result<f64> {
    if p.len() != q.len() || p.len() != psi.tau.len() {
        return Err(Error::LengthMismatch(format!(
            "kernel points of dimension {} and {} with {} length scales",
            p.len(),
            q.len(),
            psi.tau.len()
        )));
    }
    if psi.tau.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::domain("length scales must be positive"));
    }
    let r2: f64 = p
        .iter()
        .zip(q)
        .zip(&psi.tau)
        .map(|((a, b), t)| (a - b) * (a - b) / (t * t))
        .sum();
    let r = r2.sqrt();
    Ok(psi.tau0 * psi.tau0 * (-SQRT5 * r).exp() * (1.0 + SQRT5 * r + 5.0 / 3.0 * r2))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub point: Vec<f64>,
    pub value: f64,
}

fn gram(points: &[Vec<f64>], psi: &Psi) -> Result<Tensor> {
    let n = points.len();
    let mut k = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel(&points[i], &points[j], psi)?;
            k.set(i, j, v);
            k.set(j, i, v);
        }
        k.set(i, i, k.get(i, i) + psi.noise);
    }
    Ok(k)
}

/// `log|K + σ²I| + vᵀ (K + σ²I)⁻¹ v`.
pub fn nll(points: &[Vec<f64>], values: &[f64], psi: &Psi) -> Result<f64> {
    let chol = Cholesky::new(&gram(points, psi)?)?;
    let a = chol.solve(values);
    let quad: f64 = values.iter().zip(&a).map(|(v, w)| v * w).sum();
    Ok(chol.log_det() + quad)
}

/// A fitted GP. Values are standardized internally; posterior moments are
/// reported in the original units.
#[derive(Clone, Debug)]
pub struct GpState {
    points: Vec<Vec<f64>>,
    values: Vec<f64>,
    offset: f64,
    scale: f64,
    psi: Psi,
    chol: Cholesky,
    weights: Vec<f64>,
    nll: f64,
}

impl GpState {
    /// GP with fixed `psi` over raw values (zero prior mean, no scaling).
    pub fn with_psi(obs: &[Observation], psi: Psi) -> Result<Self> {
        Self::build(obs, psi, 0.0, 1.0)
    }

    fn build(obs: &[Observation], psi: Psi, offset: f64, scale: f64) -> Result<Self> {
        if obs.is_empty() {
            return Err(Error::invalid("GP needs at least one observation"));
        }
        if psi.noise < NOISE_FLOOR {
            return Err(Error::domain(format!("noise variance {} below floor", psi.noise)));
        }
        let points: Vec<Vec<f64>> = obs.iter().map(|o| o.point.clone()).collect();
        let values: Vec<f64> = obs.iter().map(|o| (o.value - offset) / scale).collect();
        let chol = Cholesky::new(&gram(&points, &psi)?)?;
        let weights = chol.solve(&values);
        let quad: f64 = values.iter().zip(&weights).map(|(v, w)| v * w).sum();
        let nll = chol.log_det() + quad;
        Ok(Self {
            points,
            values,
            offset,
            scale,
            psi,
            chol,
            weights,
            nll,
        })
    }

    pub fn psi(&self) -> &Psi {
        &self.psi
    }

    /// Objective value at the fitted `psi`, on the standardized values.
    pub fn nll(&self) -> f64 {
        self.nll
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Largest observed value in original units.
    pub fn best_value(&self) -> f64 {
        self.values
            .iter()
            .map(|v| v * self.scale + self.offset)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Mean and variance of the latent function at `p`.
pub fn posterior(gp: &GpState, p: &[f64]) -> Result<(f64, f64)> {
    let kstar: Vec<f64> = gp
        .points
        .iter()
        .map(|q| kernel(p, q, &gp.psi))
        .collect::<Result<_>>()?;
    let mu: f64 = kstar.iter().zip(&gp.weights).map(|(a, b)| a * b).sum();
    let v = gp.chol.forward_solve(&kstar);
    let prior = gp.psi.tau0 * gp.psi.tau0;
    let var = (prior - v.iter().map(|x| x * x).sum::<f64>()).max(0.0);
    Ok((mu * gp.scale + gp.offset, var * gp.scale * gp.scale))
}

/// Closed-form expected improvement for a normal posterior.
pub fn ei(mu: f64, sigma: f64, y_plus: f64) -> f64 {
    let diff = mu - y_plus;
    if sigma <= 1e-12 {
        return diff.max(0.0);
    }
    let n = Normal::standard();
    let z = diff / sigma;
    (diff * n.cdf(z) + sigma * n.pdf(z)).max(0.0)
}

pub fn expected_improvement(gp: &GpState, p: &[f64], y_plus: f64) -> Result<f64> {
    let (mu, var) = posterior(gp, p)?;
    Ok(ei(mu, var.sqrt(), y_plus))
}

/// Multi-start coordinate search on `nll` in log space. The first start is
/// [`Psi::default_start`]; `restarts` further starts are drawn log-uniformly.
pub fn fit_gp(obs: &[Observation], restarts: usize, seed: u64) -> Result<GpState> {
    if obs.len() < 2 {
        return Err(Error::invalid(format!("GP fit needs at least 2 observations, got {}", obs.len())));
    }
    let d = obs[0].point.len();
    if obs.iter().any(|o| o.point.len() != d) {
        return Err(Error::LengthMismatch("GP observations of differing dimension".into()));
    }
    let raw: Vec<f64> = obs.iter().map(|o| o.value).collect();
    let n = raw.len() as f64;
    let offset = raw.iter().sum::<f64>() / n;
    let sd = (raw.iter().map(|v| (v - offset) * (v - offset)).sum::<f64>() / n).sqrt();
    let scale = if sd > 1e-12 { sd } else { 1.0 };
    let values: Vec<f64> = raw.iter().map(|v| (v - offset) / scale).collect();
    let points: Vec<Vec<f64>> = obs.iter().map(|o| o.point.clone()).collect();

    let objective = |x: &[f64]| nll(&points, &values, &Psi::from_log(x)).unwrap_or(f64::INFINITY);
    let mut r = rng::rng(seed);
    let mut starts = vec![Psi::default_start(d).to_log()];
    for _ in 0..restarts {
        let mut x: Vec<f64> = (0..d + 1).map(|_| r.random_range(-2.0..2.0)).collect();
        x.push(r.random_range(NOISE_FLOOR.ln()..0.0));
        starts.push(x);
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in starts {
        let (f, x) = coordinate_search(&objective, start);
        if f.is_finite() && best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, x));
        }
    }
    let (_, x) = best.ok_or(Error::Singular)?;
    GpState::build(obs, Psi::from_log(&x), offset, scale)
}

fn coordinate_search(f: &impl Fn(&[f64]) -> f64, mut x: Vec<f64>) -> (f64, Vec<f64>) {
    let last = x.len() - 1;
    let clamp = |i: usize, v: f64| {
        if i == last {
            v.clamp(NOISE_FLOOR.ln(), NOISE_LOG_MAX)
        } else {
            v.clamp(LOG_BOUNDS.0, LOG_BOUNDS.1)
        }
    };
    for i in 0..x.len() {
        x[i] = clamp(i, x[i]);
    }
    let mut fx = f(&x);
    let mut step = 1.0;
    let mut sweeps = 0;
    while step > 1e-3 && sweeps < 200 {
        sweeps += 1;
        let mut improved = false;
        for i in 0..x.len() {
            for dir in [1.0, -1.0] {
                let mut y = x.clone();
                y[i] = clamp(i, x[i] + dir * step);
                let fy = f(&y);
                if fy < fx {
                    x = y;
                    fx = fy;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (fx, x)
}

/// Next point to evaluate: uniform random without a GP, otherwise the EI
/// argmax over `n_candidates` uniform points.
pub fn propose(gp: Option<&GpState>, dims: &[Dimension], n_candidates: usize, seed: u64) -> Result<(Vec<f64>, HyperparamVector)> {
    let mut r = rng::rng(seed);
    let mut draw = || -> Vec<f64> { (0..dims.len()).map(|_| r.random::<f64>()).collect() };
    let point = match gp {
        None => draw(),
        Some(gp) => {
            let y_plus = gp.best_value();
            let mut best = (f64::NEG_INFINITY, Vec::new());
            for _ in 0..n_candidates.max(1) {
                let p = draw();
                let e = expected_improvement(gp, &p, y_plus)?;
                if e > best.0 {
                    best = (e, p);
                }
            }
            best.1
        }
    };
    let hp = HyperparamVector::decode(dims, &point);
    Ok((point, hp))
}

/// One BO step record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoStep {
    pub point: Vec<f64>,
    pub hyperparams: HyperparamVector,
    pub value: f64,
}

/// Sequential optimizer state for one fixed set of dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoHistory {
    pub dims: Vec<Dimension>,
    pub steps: Vec<BoStep>,
}

impl BoHistory {
    pub fn new(dims: Vec<Dimension>) -> Self {
        Self { dims, steps: Vec::new() }
    }

    pub fn observations(&self) -> Vec<Observation> {
        self.steps
            .iter()
            .map(|s| Observation {
                point: s.point.clone(),
                value: s.value,
            })
            .collect()
    }

    /// Random during warm-up, then EI over a freshly fitted GP.
    pub fn suggest(&self, seed: u64) -> Result<(Vec<f64>, HyperparamVector)> {
        if self.dims.is_empty() {
            return Ok((Vec::new(), HyperparamVector::default()));
        }
        let gp = if self.steps.len() < RANDOM_WARMUP {
            None
        } else {
            Some(fit_gp(&self.observations(), DEFAULT_RESTARTS, rng::derive(seed, "fit"))?)
        };
        propose(gp.as_ref(), &self.dims, DEFAULT_CANDIDATES, rng::derive(seed, "propose"))
    }

    pub fn record(&mut self, point: Vec<f64>, hyperparams: HyperparamVector, value: f64) {
        self.steps.push(BoStep {
            point,
            hyperparams,
            value,
        });
    }

    pub fn best(&self) -> Option<&BoStep> {
        self.steps
            .iter()
            .fold(None, |acc: Option<&BoStep>, s| match acc {
                Some(b) if b.value >= s.value => Some(b),
                _ => Some(s),
            })
    }
}

/// Runs `iters` sequential steps maximizing `f`.
pub fn maximize(dims: &[Dimension], iters: usize, seed: u64, mut f: impl FnMut(&HyperparamVector) -> f64) -> Result<BoHistory> {
    let mut hist = BoHistory::new(dims.to_vec());
    for t in 0..iters {
        let (p, hp) = hist.suggest(rng::derive_index(seed, t as u64))?;
        let v = f(&hp);
        hist.record(p, hp, v);
    }
    Ok(hist)
}
