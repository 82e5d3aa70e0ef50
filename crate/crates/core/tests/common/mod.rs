//! Helpers shared by the integration tests: independent reference
//! implementations (which never call into the library) plus the synthetic
//! benchmark setup.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use tsrep::augment::AugmentKind;
use tsrep::bandit::PipelineConfig;
use tsrep::bo::{HpValue, HyperparamVector};
use tsrep::data::{self, Dataset, SamplerConfig, SplitConfig, SplitDataset, Task, TimeSeries};
use tsrep::nets::{Attention, CellKind, SimKind};
use tsrep::train::{self, TrainConfig};

#[allow(unused_imports)]
pub use tsrep::rng::rng;

// ---------------------------------------------------------------------------
// Dense linear algebra by Gaussian elimination with partial pivoting
// ---------------------------------------------------------------------------

/// Solves `a x = b`; returns `None` when a pivot vanishes.
pub fn solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(r, &v)| {
        let mut row = r.clone();
        row.push(v);
        row
    }).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            for c in col..=n {
                m[r][c] -= f * m[col][c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| m[i][j] * x[j]).sum();
        x[i] = (m[i][n] - s) / m[i][i];
    }
    Some(x)
}

/// Determinant via elimination.
pub fn det(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut m = a.to_vec();
    let mut d = 1.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        if m[piv][col] == 0.0 {
            return 0.0;
        }
        if piv != col {
            m.swap(col, piv);
            d = -d;
        }
        d *= m[col][col];
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            for c in col..n {
                m[r][c] -= f * m[col][c];
            }
        }
    }
    d
}

/// Random symmetric positive-definite matrix `A Aᵀ + floor·I`.
pub fn random_spd(r: &mut impl Rng, d: usize, floor: f64) -> Vec<Vec<f64>> {
    let a: Vec<Vec<f64>> = (0..d).map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| (0..d).map(|k| a[i][k] * a[j][k]).sum::<f64>() + if i == j { floor } else { 0.0 })
                .collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Mixture oracles
// ---------------------------------------------------------------------------

/// `N(y | mu, sigma)` from the textbook formula.
pub fn gaussian_density(y: &[f64], mu: &[f64], sigma: &[Vec<f64>]) -> f64 {
    let d = y.len();
    let diff: Vec<f64> = y.iter().zip(mu).map(|(a, b)| a - b).collect();
    let w = solve(sigma, &diff).expect("non-singular covariance");
    let q: f64 = diff.iter().zip(&w).map(|(a, b)| a * b).sum();
    (-0.5 * q).exp() / ((2.0 * std::f64::consts::PI).powi(d as i32) * det(sigma)).sqrt()
}

pub fn mixture_density(y: &[f64], phi: &[f64], mu: &[Vec<f64>], sigma: &[Vec<Vec<f64>>]) -> f64 {
    phi.iter()
        .zip(mu)
        .zip(sigma)
        .map(|((p, m), s)| p * gaussian_density(y, m, s))
        .sum()
}

/// Weighted moments for one component, computed in the most direct way.
pub fn weighted_moments(y: &[Vec<f64>], w: &[f64], eps: f64) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
    let d = y[0].len();
    let total: f64 = w.iter().sum();
    let mut mu = vec![0.0; d];
    for (r, &g) in y.iter().zip(w) {
        for j in 0..d {
            mu[j] += g * r[j];
        }
    }
    mu.iter_mut().for_each(|m| *m /= total);
    let mut cov = vec![vec![0.0; d]; d];
    for (r, &g) in y.iter().zip(w) {
        for a in 0..d {
            for b in 0..d {
                cov[a][b] += g * (r[a] - mu[a]) * (r[b] - mu[b]) / total;
            }
        }
    }
    for (a, row) in cov.iter_mut().enumerate() {
        row[a] += eps;
    }
    (total / y.len() as f64, mu, cov)
}

/// Random points on the simplex.
pub fn random_simplex(r: &mut impl Rng, h: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..h).map(|_| r.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

// ---------------------------------------------------------------------------
// Gaussian process oracle
// ---------------------------------------------------------------------------

/// Matérn 5/2 with per-dimension length scales.
pub fn matern52(p: &[f64], q: &[f64], amp: f64, tau: &[f64]) -> f64 {
    let r = p
        .iter()
        .zip(q)
        .zip(tau)
        .map(|((a, b), t)| ((a - b) / t).powi(2))
        .sum::<f64>()
        .sqrt();
    let s5 = 5f64.sqrt();
    amp * amp * (1.0 + s5 * r + 5.0 * r * r / 3.0) * (-s5 * r).exp()
}

/// Posterior mean and latent variance by dense solves.
pub fn gp_posterior(points: &[Vec<f64>], values: &[f64], amp: f64, tau: &[f64], noise: f64, at: &[f64]) -> (f64, f64) {
    let n = points.len();
    let k: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| matern52(&points[i], &points[j], amp, tau) + if i == j { noise } else { 0.0 })
                .collect()
        })
        .collect();
    let ks: Vec<f64> = points.iter().map(|p| matern52(at, p, amp, tau)).collect();
    let alpha = solve(&k, values).unwrap();
    let beta = solve(&k, &ks).unwrap();
    let mean = ks.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let var = matern52(at, at, amp, tau) - ks.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
    (mean, var)
}

// ---------------------------------------------------------------------------
// Metric oracles
// ---------------------------------------------------------------------------

/// Fraction of (positive, negative) pairs ranked correctly, ties counting half.
pub fn pairwise_auc(scores: &[f64], labels: &[i64]) -> f64 {
    let mut hits = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                hits += 1.0;
            } else if si == sj {
                hits += 0.5;
            }
        }
    }
    hits / pairs
}

/// NMI straight from the definition, in bits.
pub fn direct_nmi(a: &[i64], b: &[i64]) -> f64 {
    let n = a.len() as f64;
    let count = |xs: &[i64]| {
        let mut m = BTreeMap::new();
        for &x in xs {
            *m.entry(x).or_insert(0.0) += 1.0;
        }
        m
    };
    let (ca, cb) = (count(a), count(b));
    let mut joint: BTreeMap<(i64, i64), f64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_insert(0.0) += 1.0;
    }
    let h = |c: &BTreeMap<i64, f64>| -> f64 { c.values().map(|&k| -(k / n) * (k / n).log2()).sum() };
    let (ha, hb) = (h(&ca), h(&cb));
    if ca.len() == 1 && cb.len() == 1 {
        return 1.0;
    }
    if ha == 0.0 || hb == 0.0 {
        return 0.0;
    }
    let mut mi = 0.0;
    for (&(x, y), &k) in &joint {
        let pxy = k / n;
        mi += pxy * (pxy / ((ca[&x] / n) * (cb[&y] / n))).log2();
    }
    mi / (ha * hb).sqrt()
}

// ---------------------------------------------------------------------------
// Benchmark data
// ---------------------------------------------------------------------------

pub const BENCH_LEN: usize = 64;
pub const BENCH_NOISE: (f64, f64) = (0.1, 0.2);
pub const BENCH_RATIOS: (f64, f64, f64) = (2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0);

/// 300 clean and 100 noisy sines: 200 clean train, 50 + 50 val and test.
/// Used as generated; z-normalizing washes out the amplitude cue.
pub fn benchmark(seed: u64) -> Dataset {
    data::make_synthetic_sine(300, 100, BENCH_LEN, BENCH_NOISE, seed).unwrap()
}

/// Raw (not z-normalized) benchmark split after irregular sampling at rate
/// `beta`, optionally with `round(c * 200)` train members swapped for noisy
/// sines from a separate pool. Val and test do not depend on `c`.
pub fn benchmark_split(seed: u64, beta: f64, contamination: f64) -> SplitDataset {
    let mut ds = benchmark(seed);
    if beta > 0.0 {
        ds = data::irregular_sample_dataset(&ds, &SamplerConfig::new(beta, seed ^ 0xbe7a).unwrap()).unwrap();
    }
    let mut sp = data::split(
        &ds,
        &SplitConfig {
            task: Task::Anomaly,
            ratios: BENCH_RATIOS,
            seed: seed ^ 0x5eed,
            ..SplitConfig::default()
        },
    )
    .unwrap();
    let n = sp.train.len();
    let k = (contamination * n as f64).round() as usize;
    if k > 0 {
        let mut pool = data::make_synthetic_sine(0, k, BENCH_LEN, BENCH_NOISE, seed ^ 0xc0ffee).unwrap();
        if beta > 0.0 {
            pool = data::irregular_sample_dataset(&pool, &SamplerConfig::new(beta, seed ^ 0xbe7b).unwrap()).unwrap();
        }
        sp.train.series.truncate(n - k);
        sp.train.series.extend(pool.series.into_iter().map(|s| TimeSeries {
            id: format!("contam_{}", s.id),
            ..s
        }));
    }
    sp
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Fixed mid-sized pipeline used where a criterion asks about the model
/// rather than the search.
pub fn baseline() -> (PipelineConfig, HyperparamVector) {
    let p = PipelineConfig::from_parts(AugmentKind::Scaling, CellKind::Gru, Attention::None, CellKind::Gru, SimKind::Both);
    let hp = HyperparamVector::default()
        .with("n_aug", HpValue::Int(0))
        .with("h_amp", HpValue::Real(1.0))
        .with("h_enc", HpValue::Int(8))
        .with("h_dec", HpValue::Int(8))
        .with("components", HpValue::Int(2))
        .with("est_layers", HpValue::Int(1))
        .with("est_nodes", HpValue::Int(16))
        .with("clas_layers", HpValue::Int(1))
        .with("clas_nodes", HpValue::Int(16));
    (p, hp)
}

/// Test AUC of the baseline pipeline trained on `sp.train`.
pub fn baseline_auc(sp: &SplitDataset, tc: &TrainConfig) -> f64 {
    let (p, hp) = baseline();
    let model = train::train_model(&p, &hp, sp, tc).unwrap();
    train::objective(&model, &sp.test, Task::Anomaly).unwrap()
}
