//! Thompson sampling over pipeline structure.
//!
//! Each module slot holds a Beta posterior per option. A configuration is
//! the per-slot argmax of one Beta draw per option; an objective value is
//! squashed into a Bernoulli reward that updates the chosen options.

use rand::Rng as _;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::augment::{time_warp_bounds, AugmentKind, H_AMP_RANGE, H_SHIFT_MAX, N_AUG_MAX};
use crate::bo::Dimension;
use crate::data::Task;
use crate::error::{Error, Result};
use crate::nets::{h_dec_range, Attention, CellKind, SimKind, MAX_H_ENC, MAX_LAYERS, NODE_RANGE};
use crate::rng;

/// Beta prior pseudo-counts.
pub const PRIOR: f64 = 10.0;
/// Mixture component range searched by BO.
pub const COMPONENT_RANGE: (i64, i64) = (2, 6);

pub const SLOT_AUGMENT: usize = 0;
pub const SLOT_ENCODER: usize = 1;
pub const SLOT_ATTENTION: usize = 2;
pub const SLOT_DECODER: usize = 3;
pub const SLOT_EM: usize = 4;
pub const SLOT_SIMILARITY: usize = 5;
pub const SLOT_ESTIMATION: usize = 6;
pub const SLOT_CLASSIFIER: usize = 7;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleSlot {
    pub name: String,
    pub options: Vec<String>,
}

/// Module slots and the shape parameters of the data they will see.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub modules: Vec<ModuleSlot>,
    pub channel_dim: usize,
    /// Shortest training series; bounds the time-warp count.
    pub min_len: usize,
}

impl SearchSpace {
    pub fn new(channel_dim: usize, min_len: usize) -> Result<Self> {
        if channel_dim == 0 || min_len == 0 {
            return Err(Error::domain("search space needs positive channel_dim and min_len"));
        }
        let slot = |name: &str, opts: &[&str]| ModuleSlot {
            name: name.into(),
            options: opts.iter().map(|s| s.to_string()).collect(),
        };
        let modules = vec![
            slot("augmentation", &AugmentKind::ALL.map(AugmentKind::name)),
            slot("encoder", &CellKind::ALL.map(CellKind::name)),
            slot("attention", &Attention::ALL.map(Attention::name)),
            slot("decoder", &CellKind::ALL.map(CellKind::name)),
            slot("em", &["em"]),
            slot("similarity", &SimKind::ALL.map(SimKind::name)),
            slot("estimation", &["mlp"]),
            slot("classifier", &["mlp"]),
        ];
        Ok(Self {
            modules,
            channel_dim,
            min_len,
        })
    }

    pub fn option_counts(&self) -> Vec<usize> {
        self.modules.iter().map(|m| m.options.len()).collect()
    }

    pub fn check(&self, p: &PipelineConfig) -> Result<()> {
        if p.choice.len() != self.modules.len() {
            return Err(Error::invalid(format!(
                "pipeline has {} choices for {} modules",
                p.choice.len(),
                self.modules.len()
            )));
        }
        for (m, &c) in self.modules.iter().zip(&p.choice) {
            if c >= m.options.len() {
                return Err(Error::invalid(format!("option {c} out of range for module {}", m.name)));
            }
        }
        Ok(())
    }

    /// Hyperparameter dimensions active under `p`, in a fixed order.
    pub fn dimensions(&self, p: &PipelineConfig) -> Result<Vec<Dimension>> {
        self.check(p)?;
        let mut dims = vec![Dimension::discrete("n_aug", 0, N_AUG_MAX as i64)];
        dims.push(match p.augmentation() {
            AugmentKind::Scaling => Dimension::continuous("h_amp", H_AMP_RANGE.0, H_AMP_RANGE.1),
            AugmentKind::Shifting => Dimension::discrete("h_shift", -H_SHIFT_MAX, H_SHIFT_MAX),
            AugmentKind::Timewarp => {
                let (lo, hi) = time_warp_bounds(self.min_len);
                Dimension::discrete("h_tm", lo as i64, hi as i64)
            }
        });
        dims.push(Dimension::discrete("h_enc", 1, MAX_H_ENC as i64));
        let (lo, hi) = h_dec_range(self.channel_dim);
        dims.push(Dimension::discrete("h_dec", lo as i64, hi as i64));
        dims.push(Dimension::discrete("components", COMPONENT_RANGE.0, COMPONENT_RANGE.1));
        for head in ["est", "clas"] {
            dims.push(Dimension::discrete(format!("{head}_layers"), 1, MAX_LAYERS as i64));
            dims.push(Dimension::discrete(format!("{head}_nodes"), NODE_RANGE.0 as i64, NODE_RANGE.1 as i64));
        }
        Ok(dims)
    }

    /// Readable `module=option` pairs.
    pub fn describe(&self, p: &PipelineConfig) -> String {
        self.modules
            .iter()
            .zip(&p.choice)
            .map(|(m, &c)| format!("{}={}", m.name, m.options.get(c).map_or("?", String::as_str)))
            .collect::<Vec<_>>()
            .join(",")
    }
}

fn position<T: PartialEq>(all: &[T], x: T) -> usize {
    all.iter().position(|a| *a == x).expect("option is listed")
}

/// One option index per module slot.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub choice: Vec<usize>,
}

impl PipelineConfig {
    pub fn new(choice: Vec<usize>) -> Self {
        Self { choice }
    }

    /// Builds a configuration from named options.
    pub fn from_parts(aug: AugmentKind, encoder: CellKind, attention: Attention, decoder: CellKind, sim: SimKind) -> Self {
        Self {
            choice: vec![
                position(&AugmentKind::ALL, aug),
                position(&CellKind::ALL, encoder),
                position(&Attention::ALL, attention),
                position(&CellKind::ALL, decoder),
                0,
                position(&SimKind::ALL, sim),
                0,
                0,
            ],
        }
    }

    pub fn augmentation(&self) -> AugmentKind {
        AugmentKind::ALL[self.choice[SLOT_AUGMENT]]
    }

    pub fn encoder(&self) -> CellKind {
        CellKind::ALL[self.choice[SLOT_ENCODER]]
    }

    pub fn attention(&self) -> Attention {
        Attention::ALL[self.choice[SLOT_ATTENTION]]
    }

    pub fn decoder(&self) -> CellKind {
        CellKind::ALL[self.choice[SLOT_DECODER]]
    }

    pub fn similarity(&self) -> SimKind {
        SimKind::ALL[self.choice[SLOT_SIMILARITY]]
    }

    /// Indicator vectors `k_i`.
    pub fn one_hot(&self, counts: &[usize]) -> Vec<Vec<u8>> {
        self.choice
            .iter()
            .zip(counts)
            .map(|(&c, &q)| (0..q).map(|j| u8::from(j == c)).collect())
            .collect()
    }
}

/// Beta posterior parameters per module and option.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaState {
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
}

impl BetaState {
    pub fn new(counts: &[usize], alpha0: f64, beta0: f64) -> Result<Self> {
        if !(alpha0 > 0.0 && beta0 > 0.0) {
            return Err(Error::domain("Beta priors must be positive"));
        }
        if counts.contains(&0) {
            return Err(Error::domain("every module needs at least one option"));
        }
        Ok(Self {
            alpha: counts.iter().map(|&q| vec![alpha0; q]).collect(),
            beta: counts.iter().map(|&q| vec![beta0; q]).collect(),
        })
    }

    pub fn for_space(space: &SearchSpace) -> Self {
        Self::new(&space.option_counts(), PRIOR, PRIOR).expect("valid prior")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub f_low: f64,
    pub f_upp: f64,
}

impl RewardConfig {
    pub fn new(f_low: f64, f_upp: f64) -> Result<Self> {
        if !(f_low < f_upp) {
            return Err(Error::domain(format!("need f_low < f_upp, got {f_low} and {f_upp}")));
        }
        Ok(Self { f_low, f_upp })
    }

    /// AUC: chance to perfect. NMI: full range.
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Anomaly => Self { f_low: 0.5, f_upp: 1.0 },
            Task::Cluster => Self { f_low: 0.0, f_upp: 1.0 },
        }
    }
}

/// Draws one Beta sample per option and takes the per-module argmax, lowest
/// index on ties.
pub fn sample_config(state: &BetaState, seed: u64) -> Result<PipelineConfig> {
    let mut r = rng::rng(seed);
    let mut choice = Vec::with_capacity(state.alpha.len());
    for (a, b) in state.alpha.iter().zip(&state.beta) {
        let mut best = (0, f64::NEG_INFINITY);
        for (j, (&aj, &bj)) in a.iter().zip(b).enumerate() {
            let w = Beta::new(aj, bj)
                .map_err(|e| Error::domain(format!("Beta({aj}, {bj}): {e}")))?
                .sample(&mut r);
            if w > best.1 {
                best = (j, w);
            }
        }
        choice.push(best.0);
    }
    Ok(PipelineConfig { choice })
}

/// Continuous reward clamped to `[0, 1]` and a Bernoulli draw from it.
pub fn reward(f: f64, cfg: &RewardConfig, seed: u64) -> (f64, u8) {
    let r_tilde = ((f - cfg.f_low) / (cfg.f_upp - cfg.f_low)).clamp(0.0, 1.0);
    let r_tilde = if r_tilde.is_nan() { 0.0 } else { r_tilde };
    let r = rng::rng(seed).random::<f64>() < r_tilde;
    (r_tilde, u8::from(r))
}

/// Adds `r` to the chosen options' alpha and `1 - r` to their beta.
pub fn update(state: &BetaState, config: &PipelineConfig, r: u8) -> Result<BetaState> {
    if config.choice.len() != state.alpha.len() {
        return Err(Error::invalid("pipeline does not match Beta state"));
    }
    if r > 1 {
        return Err(Error::domain(format!("reward must be 0 or 1, got {r}")));
    }
    let mut next = state.clone();
    for (i, &c) in config.choice.iter().enumerate() {
        if c >= next.alpha[i].len() {
            return Err(Error::invalid(format!("option {c} out of range in module {i}")));
        }
        next.alpha[i][c] += f64::from(r);
        next.beta[i][c] += f64::from(1 - r);
    }
    Ok(next)
}
