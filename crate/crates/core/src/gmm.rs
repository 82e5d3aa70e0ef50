//! Gaussian mixture parameters from soft memberships, sample energy, and a
//! standalone EM fitter.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::rng;

/// Diagonal regularization added to every covariance matrix.
pub const COV_EPS: f64 = 1e-6;

const EMPTY_COMPONENT: f64 = 1e-12;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub phi: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    pub sigma: Vec<Tensor>,
    pub eps: f64,
}

/// Cholesky factors and normalizers cached for repeated density evaluation.
#[derive(Clone, Debug)]
pub struct PreparedGmm<'a> {
    params: &'a GmmParams,
    chol: Vec<Cholesky>,
    log_norm: Vec<f64>,
}

impl GmmParams {
    pub fn components(&self) -> usize {
        self.phi.len()
    }

    pub fn dim(&self) -> usize {
        self.mu.first().map_or(0, Vec::len)
    }

    pub fn prepare(&self) -> Result<PreparedGmm<'_>> {
        let d = self.dim() as f64;
        let chol = self
            .sigma
            .iter()
            .map(Cholesky::new)
            .collect::<Result<Vec<_>>>()?;
        let log_norm = chol
            .iter()
            .map(|c| 0.5 * (d * LN_2PI + c.log_det()))
            .collect();
        Ok(PreparedGmm {
            params: self,
            chol,
            log_norm,
        })
    }
}

impl PreparedGmm<'_> {
    /// `log φ_h + log N(y | μ_h, Σ_h)` per component.
    pub fn weighted_log_densities(&self, y: &[f64]) -> Result<Vec<f64>> {
        let p = self.params;
        if y.len() != p.dim() {
            return Err(Error::LengthMismatch(format!(
                "point of dimension {} for a mixture of dimension {}",
                y.len(),
                p.dim()
            )));
        }
        Ok((0..p.components())
            .map(|h| {
                let diff: Vec<f64> = y.iter().zip(&p.mu[h]).map(|(a, b)| a - b).collect();
                let z = self.chol[h].forward_solve(&diff);
                let q: f64 = z.iter().map(|v| v * v).sum();
                p.phi[h].ln() - 0.5 * q - self.log_norm[h]
            })
            .collect())
    }

    pub fn log_density(&self, y: &[f64]) -> Result<f64> {
        Ok(log_sum_exp(&self.weighted_log_densities(y)?))
    }

    pub fn energy(&self, y: &[f64]) -> Result<f64> {
        Ok(-self.log_density(y)?)
    }

    /// Posterior membership probabilities.
    pub fn responsibilities(&self, y: &[f64]) -> Result<Vec<f64>> {
        let lw = self.weighted_log_densities(y)?;
        let lse = log_sum_exp(&lw);
        Ok(lw.iter().map(|v| (v - lse).exp()).collect())
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn check_points(y: &[Vec<f64>]) -> Result<usize> {
    let d = y.first().map(Vec::len).ok_or(Error::EmptyDataset)?;
    if y.iter().any(|r| r.len() != d) {
        return Err(Error::LengthMismatch("latent vectors of unequal dimension".into()));
    }
    Ok(d)
}

/// Responsibility-weighted moments:
/// `φ_h = Σγ/N`, `μ_h = Σγy/Σγ`, `Σ_h = Σγ(y-μ)(y-μ)ᵀ/Σγ + eps·I`.
/// A component with total weight below 1e-12 gets the batch mean and `I`.
pub fn m_step(y: &[Vec<f64>], gamma: &[Vec<f64>], eps: f64) -> Result<GmmParams> {
    let d = check_points(y)?;
    if gamma.len() != y.len() {
        return Err(Error::LengthMismatch(format!(
            "{} latent vectors but {} responsibility rows",
            y.len(),
            gamma.len()
        )));
    }
    let h_count = gamma[0].len();
    if h_count == 0 {
        return Err(Error::invalid("mixture needs at least one component"));
    }
    for (i, row) in gamma.iter().enumerate() {
        let s: f64 = row.iter().sum();
        if row.len() != h_count || row.iter().any(|&g| g < -1e-12 || !g.is_finite()) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("responsibility row {i} is not on the simplex")));
        }
    }
    let n = y.len() as f64;
    let batch_mean: Vec<f64> = (0..d)
        .map(|j| y.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();

    let mut phi = Vec::with_capacity(h_count);
    let mut mu = Vec::with_capacity(h_count);
    let mut sigma = Vec::with_capacity(h_count);
    for h in 0..h_count {
        let w: f64 = gamma.iter().map(|g| g[h]).sum();
        phi.push(w / n);
        if w < EMPTY_COMPONENT {
            mu.push(batch_mean.clone());
            sigma.push(Tensor::identity(d));
            continue;
        }
        let m: Vec<f64> = (0..d)
            .map(|j| y.iter().zip(gamma).map(|(r, g)| g[h] * r[j]).sum::<f64>() / w)
            .collect();
        let mut s = Tensor::zeros(d, d);
        for (r, g) in y.iter().zip(gamma) {
            let gh = g[h];
            for a in 0..d {
                let da = r[a] - m[a];
                for b in 0..=a {
                    let v = s.get(a, b) + gh * da * (r[b] - m[b]);
                    s.set(a, b, v);
                }
            }
        }
        for a in 0..d {
            for b in 0..=a {
                let v = s.get(a, b) / w;
                s.set(a, b, v);
                s.set(b, a, v);
            }
            let v = s.get(a, a) + eps;
            s.set(a, a, v);
        }
        mu.push(m);
        sigma.push(s);
    }
    Ok(GmmParams { phi, mu, sigma, eps })
}

/// `E(y) = -log Σ_h φ_h N(y | μ_h, Σ_h)`.
pub fn energy(params: &GmmParams, y: &[f64]) -> Result<f64> {
    params.prepare()?.energy(y)
}

/// Total log-likelihood of a point set.
pub fn log_likelihood(params: &GmmParams, y: &[Vec<f64>]) -> Result<f64> {
    let prepared = params.prepare()?;
    y.iter().map(|r| prepared.log_density(r)).sum()
}

/// Result of [`fit_em`]: final parameters plus the log-likelihood after the
/// initialization and after every accepted M-step.
#[derive(Clone, Debug)]
pub struct EmFit {
    pub params: GmmParams,
    pub log_likelihood: Vec<f64>,
}

/// Standard EM initialized at `h` distinct random points, each drawn with
/// probability proportional to its squared distance from those already
/// drawn. Starting covariances are isotropic with the mean squared distance
/// to the nearest pick per coordinate (pooled covariance if that is zero).
/// Stops after `iters` rounds or when the gain drops below 1e-8.
pub fn fit_em(y: &[Vec<f64>], h: usize, iters: usize, seed: u64) -> Result<EmFit> {
    let d = check_points(y)?;
    let n = y.len();
    if h == 0 || n < h {
        return Err(Error::invalid(format!(
            "EM with {h} components needs at least {h} points, got {n}"
        )));
    }
    let mut rng = rng::rng(seed);
    let picks = spread_picks(y, h, &mut rng);
    let mu: Vec<Vec<f64>> = picks.iter().map(|&i| y[i].clone()).collect();
    let spread = y
        .iter()
        .map(|r| mu.iter().map(|m| dist2(r, m)).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / (n * d) as f64;
    let start = if spread > 0.0 {
        let mut s = Tensor::identity(d);
        s.scale_in_place(spread);
        s
    } else {
        m_step(y, &vec![vec![1.0]; n], COV_EPS)?.sigma.remove(0)
    };
    let mut params = GmmParams {
        phi: vec![1.0 / h as f64; h],
        mu,
        sigma: vec![start; h],
        eps: COV_EPS,
    };
    debug_assert_eq!(params.dim(), d);

    let (mut gamma, mut ll) = e_step(&params, y)?;
    let mut trace = vec![ll];
    for _ in 0..iters {
        let next = m_step(y, &gamma, COV_EPS)?;
        let (next_gamma, next_ll) = e_step(&next, y)?;
        if next_ll < ll {
            // The eps-regularized M-step is not an exact maximizer; keep the
            // better iterate once it stops improving.
            break;
        }
        let gain = next_ll - ll;
        params = next;
        gamma = next_gamma;
        ll = next_ll;
        trace.push(ll);
        if gain < 1e-8 {
            break;
        }
    }
    Ok(EmFit {
        params,
        log_likelihood: trace,
    })
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, z)| (x - z) * (x - z)).sum()
}

fn spread_picks(y: &[Vec<f64>], h: usize, rng: &mut rng::Rng) -> Vec<usize> {
    let n = y.len();
    let mut picks = vec![rng.random_range(0..n)];
    let mut near: Vec<f64> = y.iter().map(|r| dist2(r, &y[picks[0]])).collect();
    while picks.len() < h {
        let total: f64 = near.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut k = (0..n).rev().find(|&i| near[i] > 0.0).expect("positive mass");
            for (i, &w) in near.iter().enumerate() {
                if w > 0.0 && u < w {
                    k = i;
                    break;
                }
                u -= w;
            }
            k
        } else {
            // Coincident points: any index not yet taken.
            let free: Vec<usize> = (0..n).filter(|i| !picks.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        picks.push(next);
        for (d, r) in near.iter_mut().zip(y) {
            *d = d.min(dist2(r, &y[next]));
        }
        near[next] = 0.0;
    }
    picks
}

fn e_step(params: &GmmParams, y: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, f64)> {
    let prepared = params.prepare()?;
    let mut total = 0.0;
    let mut gamma = Vec::with_capacity(y.len());
    for r in y {
        let lw = prepared.weighted_log_densities(r)?;
        let lse = log_sum_exp(&lw);
        total += lse;
        let mut g: Vec<f64> = lw.iter().map(|v| (v - lse).exp()).collect();
        let s: f64 = g.iter().sum();
        g.iter_mut().for_each(|v| *v /= s);
        gamma.push(g);
    }
    Ok((gamma, total))
}

/// Differentiable per-row energies of `y` (`n x d`) under mixture parameters
/// computed from memberships `gamma` (`n x H`) on the same tape.
pub fn energy_graph(tape: &mut Tape, y: Var, gamma: Var, eps: f64) -> Result<Var> {
    let [n, d] = tape.shape(y);
    let [gn, h_count] = tape.shape(gamma);
    if gn != n {
        return Err(Error::Shape {
            op: "energy_graph",
            lhs: [n, d],
            rhs: [gn, h_count],
        });
    }
    let eps_eye = tape.constant({
        let mut t = Tensor::identity(d);
        t.scale_in_place(eps);
        t
    });
    let mut terms = Vec::with_capacity(h_count);
    for h in 0..h_count {
        let w = tape.slice(gamma, h, 1)?;
        let nk = tape.sum(w);
        let wt = tape.transpose(w);
        let weighted_sum = tape.matmul(wt, y)?;
        let mu = tape.div(weighted_sum, nk)?;
        let diff = tape.sub(y, mu)?;
        let wdiff = tape.mul(diff, w)?;
        let wdt = tape.transpose(wdiff);
        let scatter = tape.matmul(wdt, diff)?;
        let cov = tape.div(scatter, nk)?;
        let cov = tape.add(cov, eps_eye)?;
        let logpdf = tape.gauss_log_pdf(y, mu, cov)?;
        let phi = tape.scale(nk, 1.0 / n as f64);
        let log_phi = tape.log(phi);
        terms.push(tape.add(logpdf, log_phi)?);
    }
    let stacked = tape.concat(&terms)?;
    let lse = tape.logsumexp(stacked);
    Ok(tape.scale(lse, -1.0))
}
