//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness. Pass criterion numbers as arguments to
//! run a subset, e.g. `cargo test --release --test acceptance -- 5 6`. Set
//! `ACCEPTANCE_STRICT=1` to exit non-zero when any criterion fails.

mod common;

use std::time::Instant;

use common::*;
use rand::Rng;
use tsrep::autodiff::{grad_check, Tape, Tensor, Var};
use tsrep::augment::gen_negative;
use tsrep::bandit::{self, BetaState, PipelineConfig};
use tsrep::bo::{self, Dimension, GpState, Observation, Psi};
use tsrep::data::{Task, TimeSeries};
use tsrep::gmm::{self, GmmParams};
use tsrep::metrics;
use tsrep::nets::{Attention, Batch, Bound, CellKind, ModelWeights, SimKind};
use tsrep::search::{self, RunConfig};
use tsrep::train::{self, TrainConfig};
use tsrep::{augment::AugmentKind, bo::HpValue, Result};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn final_epochs() -> TrainConfig {
    TrainConfig {
        epochs: search::DEFAULT_FINAL_EPOCHS,
        ..TrainConfig::default()
    }
}

// 1 ------------------------------------------------------------------------

fn synthetic_search() -> Verdict {
    let clock = Instant::now();
    let dataset = benchmark(0);
    let mut cfg = RunConfig::new("synthetic", Task::Anomaly);
    cfg.ratios = BENCH_RATIOS;
    cfg.iterations = 10;
    cfg.bo_iters = 5;
    cfg.train.search_epochs = 20;
    cfg.znormalize = false;
    let out = search::search(&cfg, &dataset, None).expect("search runs");
    let secs = clock.elapsed().as_secs_f64();
    let r = &out.report;
    let sizes_ok = (r.split_sizes.train, r.split_sizes.val, r.split_sizes.test) == (200, 100, 100);
    verdict(
        r.test_metric >= 0.90 && secs <= 900.0 && sizes_ok,
        format!(
            "test AUC {:.4} (>= 0.90), {secs:.0}s (<= 900s), splits {}/{}/{}, best {}",
            r.test_metric, r.split_sizes.train, r.split_sizes.val, r.split_sizes.test, r.best.description
        ),
    )
}

// 2 ------------------------------------------------------------------------

fn contrastive_ablation() -> Verdict {
    let mut with = Vec::new();
    let mut without = Vec::new();
    for &s in &SEEDS {
        let sp = benchmark_split(100 + s, 0.0, 0.0);
        let tc = TrainConfig { seed: s, ..final_epochs() };
        with.push(baseline_auc(&sp, &tc));
        without.push(baseline_auc(&sp, &TrainConfig { lambda2: 0.0, ..tc }));
    }
    let (a, b) = (median(with.clone()), median(without.clone()));
    verdict(
        a >= b - 0.02,
        format!("median AUC with {a:.4}, without {b:.4} (need with >= without - 0.02); with {with:.3?}, without {without:.3?}"),
    )
}

// 3 ------------------------------------------------------------------------

fn irregularity() -> Verdict {
    let mut regular = Vec::new();
    let mut sparse = Vec::new();
    for &s in &SEEDS {
        let tc = TrainConfig { seed: s, ..final_epochs() };
        regular.push(baseline_auc(&benchmark_split(200 + s, 0.0, 0.0), &tc));
        sparse.push(baseline_auc(&benchmark_split(200 + s, 0.5, 0.0), &tc));
    }
    let (a, b) = (median(regular.clone()), median(sparse.clone()));
    verdict(
        b >= a - 0.10,
        format!("median AUC beta=0 {a:.4}, beta=0.5 {b:.4} (need >= beta0 - 0.10); {regular:.3?} vs {sparse:.3?}"),
    )
}

// 4 ------------------------------------------------------------------------

fn contamination() -> Verdict {
    let levels = [0.0, 0.05, 0.10];
    let mut med = Vec::new();
    for &c in &levels {
        let aucs: Vec<f64> = SEEDS
            .iter()
            .map(|&s| baseline_auc(&benchmark_split(300 + s, 0.0, c), &TrainConfig { seed: s, ..final_epochs() }))
            .collect();
        med.push(median(aucs));
    }
    let drops = [med[0] - med[1], med[0] - med[2]];
    verdict(
        drops.iter().all(|&d| d <= 0.05),
        format!(
            "median AUC clean {:.4}, 5% {:.4}, 10% {:.4}; drops {:.4}, {:.4} (<= 0.05)",
            med[0], med[1], med[2], drops[0], drops[1]
        ),
    )
}

// 5 ------------------------------------------------------------------------

fn energy_oracle() -> Verdict {
    let mut r = rng(5);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let d = r.random_range(1..=4);
        let h = r.random_range(1..=4);
        let phi = random_simplex(&mut r, h);
        let mu: Vec<Vec<f64>> = (0..h).map(|_| (0..d).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
        let sigma: Vec<Vec<Vec<f64>>> = (0..h).map(|_| random_spd(&mut r, d, 0.1)).collect();
        let y: Vec<f64> = (0..d).map(|_| r.random_range(-2.5..2.5)).collect();
        let params = GmmParams {
            phi: phi.clone(),
            mu: mu.clone(),
            sigma: sigma.iter().map(|s| Tensor::from_rows(s).unwrap()).collect(),
            eps: 0.0,
        };
        let got = (-gmm::energy(&params, &y).unwrap()).exp();
        let want = mixture_density(&y, &phi, &mu, &sigma);
        worst = worst.max((got - want).abs() / want);
    }
    verdict(worst <= 1e-9, format!("max relative error {worst:.2e} over 1000 mixtures (<= 1e-9)"))
}

// 6 ------------------------------------------------------------------------

fn em_oracles() -> Verdict {
    let mut r = rng(6);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let d = r.random_range(1..=4);
        let h = r.random_range(1..=4);
        let n = r.random_range(2..=25);
        let y: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| r.random_range(-3.0..3.0)).collect()).collect();
        let gamma: Vec<Vec<f64>> = (0..n).map(|_| random_simplex(&mut r, h)).collect();
        let p = gmm::m_step(&y, &gamma, 1e-6).unwrap();
        for k in 0..h {
            let w: Vec<f64> = gamma.iter().map(|g| g[k]).collect();
            let (phi, mu, cov) = weighted_moments(&y, &w, 1e-6);
            worst = worst.max((p.phi[k] - phi).abs());
            for a in 0..d {
                worst = worst.max((p.mu[k][a] - mu[a]).abs());
                for b in 0..d {
                    worst = worst.max((p.sigma[k].get(a, b) - cov[a][b]).abs());
                }
            }
        }
    }
    let mut decreases = 0;
    for i in 0..1000u64 {
        let d = r.random_range(1..=3);
        let h = r.random_range(1..=3);
        let centers: Vec<Vec<f64>> = (0..h).map(|_| (0..d).map(|_| r.random_range(-4.0..4.0)).collect()).collect();
        let n = r.random_range(h.max(4)..=40);
        let y: Vec<Vec<f64>> = (0..n)
            .map(|j| centers[j % h].iter().map(|c| c + r.random_range(-1.0..1.0)).collect())
            .collect();
        let fit = gmm::fit_em(&y, h, 100, i).unwrap();
        decreases += fit.log_likelihood.windows(2).filter(|w| w[1] < w[0]).count();
    }
    verdict(
        worst <= 1e-9 && decreases == 0,
        format!("m_step max abs error {worst:.2e} (<= 1e-9); {decreases} log-likelihood decreases over 1000 EM runs"),
    )
}

// 7 ------------------------------------------------------------------------

/// Deterministic values in `(-1, 1)` without low-rank structure.
fn pattern(r: usize, c: usize, phase: f64) -> Tensor {
    let mut g = rng((phase * 1000.0) as u64 ^ (r * 31 + c) as u64);
    Tensor::new(r, c, (0..r * c).map(|_| g.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Scalar `Σ w ⊙ v` with fixed, shape-dependent weights.
fn reduce(t: &mut Tape, v: Var) -> Result<Var> {
    let [r, c] = t.shape(v);
    let w = t.constant(pattern(r, c, 0.7));
    let m = t.mul(v, w)?;
    Ok(t.sum(m))
}

type Primitive = (&'static str, Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>);

fn positive(r: usize, c: usize, seed: u64) -> Tensor {
    pattern(r, c, 0.2 + seed as f64).map(|x| 1.25 + 0.6 * x)
}

fn primitives(seed: u64) -> Vec<Primitive> {
    let s = seed as f64;
    let pat = |r, c, phase: f64| pattern(r, c, phase + s);
    let a = || pat(3, 4, 0.1);
    vec![
        ("add", vec![a(), pat(1, 4, 0.5)], Box::new(|t, v| { let o = t.add(v[0], v[1])?; reduce(t, o) })),
        ("sub", vec![a(), pat(3, 1, 0.9)], Box::new(|t, v| { let o = t.sub(v[0], v[1])?; reduce(t, o) })),
        ("mul", vec![a(), pat(3, 4, 2.0)], Box::new(|t, v| { let o = t.mul(v[0], v[1])?; reduce(t, o) })),
        ("div", vec![a(), positive(1, 4, seed)], Box::new(|t, v| { let o = t.div(v[0], v[1])?; reduce(t, o) })),
        ("matmul", vec![a(), pat(4, 2, 1.1)], Box::new(|t, v| { let o = t.matmul(v[0], v[1])?; reduce(t, o) })),
        ("concat", vec![pat(3, 2, 0.3), pat(3, 3, 0.4)], Box::new(|t, v| { let o = t.concat(v)?; reduce(t, o) })),
        ("slice", vec![pat(3, 5, 0.6)], Box::new(|t, v| { let o = t.slice(v[0], 1, 3)?; reduce(t, o) })),
        ("sum", vec![a()], Box::new(|t, v| { let s = t.sum(v[0]); Ok(t.square(s)) })),
        ("mean", vec![a()], Box::new(|t, v| { let s = t.mean(v[0]); Ok(t.square(s)) })),
        ("sum_cols", vec![a()], Box::new(|t, v| { let o = t.sum_cols(v[0]); reduce(t, o) })),
        ("sum_rows", vec![a()], Box::new(|t, v| { let o = t.sum_rows(v[0]); reduce(t, o) })),
        ("tanh", vec![a()], Box::new(|t, v| { let o = t.tanh(v[0]); reduce(t, o) })),
        ("sigmoid", vec![a()], Box::new(|t, v| { let o = t.sigmoid(v[0]); reduce(t, o) })),
        ("exp", vec![a()], Box::new(|t, v| { let o = t.exp(v[0]); reduce(t, o) })),
        ("log", vec![positive(3, 4, seed)], Box::new(|t, v| { let o = t.log(v[0]); reduce(t, o) })),
        ("square", vec![a()], Box::new(|t, v| { let o = t.square(v[0]); reduce(t, o) })),
        ("sqrt", vec![positive(3, 4, seed)], Box::new(|t, v| { let o = t.sqrt(v[0]); reduce(t, o) })),
        ("softmax", vec![a()], Box::new(|t, v| { let o = t.softmax(v[0]); reduce(t, o) })),
        ("logsumexp", vec![a()], Box::new(|t, v| { let o = t.logsumexp(v[0]); reduce(t, o) })),
        ("transpose", vec![a()], Box::new(|t, v| { let o = t.transpose(v[0]); reduce(t, o) })),
        ("scale", vec![a()], Box::new(|t, v| { let o = t.scale(v[0], -2.5); reduce(t, o) })),
        ("add_scalar", vec![a()], Box::new(|t, v| { let o = t.add_scalar(v[0], 0.75); let s = t.square(o); reduce(t, s) })),
        (
            "clamp",
            vec![Tensor::row_vector(&[-1.7, -0.4, 0.2, 0.6, 1.5, 2.2])],
            Box::new(|t, v| { let o = t.clamp(v[0], -1.0, 1.0); reduce(t, o) }),
        ),
        (
            "gauss_log_pdf",
            vec![pat(5, 3, 0.8), pat(1, 3, 1.7), pat(3, 3, 2.9)],
            Box::new(|t, v| {
                let lt = t.transpose(v[2]);
                let llt = t.matmul(v[2], lt)?;
                let eye = t.constant(Tensor::identity(3).map(|x| 0.5 * x));
                let sigma = t.add(llt, eye)?;
                let o = t.gauss_log_pdf(v[0], v[1], sigma)?;
                reduce(t, o)
            }),
        ),
    ]
}

/// Mixture energy through the in-graph M-step; a composite of the above.
fn energy_error(seed: u64) -> f64 {
    let s = seed as f64;
    grad_check(
        |t, v| {
            let g = t.softmax(v[1]);
            let e = gmm::energy_graph(t, v[0], g, gmm::COV_EPS)?;
            reduce(t, e)
        },
        &[pattern(10, 3, 0.35 + s).map(|x| 2.0 * x), pattern(10, 2, 1.9 + s)],
        1e-6,
    )
    .unwrap()
}

fn toy_series(n: usize, seed: u64) -> Vec<TimeSeries> {
    let mut g = rng(seed);
    (0..n)
        .map(|i| {
            let v: Vec<f64> = (0..4 + i % 3).map(|_| g.random_range(-1.0..1.0)).collect();
            TimeSeries::univariate(format!("s{i}"), &v, None).unwrap()
        })
        .collect()
}

/// Weights are drawn uniformly from [-0.5, 0.5] rather than taken from the
/// initializer: at init the latents barely vary across a batch, the batch
/// covariance sits at the ridge and round-off in the energy swamps central
/// differences of the smallest gradient entries. A step of 1e-5 keeps that
/// round-off below truncation error.
fn composite_error(p: &PipelineConfig, pos: &[TimeSeries], seed: u64) -> f64 {
    let hp = tsrep::bo::HyperparamVector::default()
        .with("h_enc", HpValue::Int(3))
        .with("h_dec", HpValue::Int(3))
        .with("components", HpValue::Int(2))
        .with("est_layers", HpValue::Int(1))
        .with("est_nodes", HpValue::Int(8))
        .with("clas_layers", HpValue::Int(1))
        .with("clas_nodes", HpValue::Int(8));
    let cfg = train::net_config(p, &hp, 1).unwrap();
    let mut w = ModelWeights::init(&cfg, 9).unwrap();
    let mut g = rng(seed);
    for (_, t) in w.iter_mut() {
        t.data_mut().iter_mut().for_each(|x| *x = g.random_range(-0.5..0.5));
    }
    let names: Vec<String> = w.iter().map(|(k, _)| k.clone()).collect();
    let params: Vec<Tensor> = w.iter().map(|(_, t)| t.clone()).collect();
    let neg: Vec<TimeSeries> = pos.iter().enumerate().map(|(i, s)| gen_negative(s, i as u64).series).collect();
    let pb = Batch::from_series(&pos.iter().collect::<Vec<_>>()).unwrap();
    let nb = Batch::from_series(&neg.iter().collect::<Vec<_>>()).unwrap();
    grad_check(
        |tape, vars| {
            let bound = Bound::from_vars(names.iter().cloned().zip(vars.iter().copied()));
            Ok(train::loss_graph(tape, &bound, &cfg, &pb, &nb, 0.1, 0.5)?.total)
        },
        &params,
        1e-5,
    )
    .unwrap()
}

fn gradients() -> Verdict {
    let mut worst_prim = (0.0f64, "");
    for seed in 0..100 {
        for (name, params, f) in primitives(seed) {
            let e = grad_check(|t, v| f(t, v), &params, 1e-6).unwrap();
            if e > worst_prim.0 {
                worst_prim = (e, name);
            }
        }
    }
    let worst_energy = (0..100).map(energy_error).fold(0.0, f64::max);
    let mut worst_loss: f64 = 0.0;
    let sims = SimKind::ALL;
    let mut k = 0;
    for enc in CellKind::ALL {
        for att in Attention::ALL {
            let dec = CellKind::ALL[(k + 1) % 3];
            let p = PipelineConfig::from_parts(AugmentKind::Scaling, enc, att, dec, sims[k % 3]);
            worst_loss = worst_loss.max(composite_error(&p, &toy_series(8, k as u64), k as u64));
            k += 1;
        }
    }
    verdict(
        worst_prim.0 < 1e-5 && worst_energy < 1e-3 && worst_loss < 1e-3,
        format!(
            "primitives max rel error {:.2e} ({}) over 100 random points each (< 1e-5); mixture energy {worst_energy:.2e}, composite loss over 6 pipelines {worst_loss:.2e} (< 1e-3)",
            worst_prim.0, worst_prim.1
        ),
    )
}

// 8 ------------------------------------------------------------------------

fn gp_and_bo() -> Verdict {
    let mut r = rng(8);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let d = r.random_range(1..=3);
        let n = r.random_range(1..=12);
        let obs: Vec<Observation> = (0..n)
            .map(|_| Observation {
                point: (0..d).map(|_| r.random::<f64>()).collect(),
                value: r.random_range(-2.0..2.0),
            })
            .collect();
        let psi = Psi {
            tau0: r.random_range(0.5..2.0),
            tau: (0..d).map(|_| r.random_range(0.2..2.0)).collect(),
            noise: r.random_range(0.01..0.5),
        };
        let gp = GpState::with_psi(&obs, psi.clone()).unwrap();
        let at: Vec<f64> = (0..d).map(|_| r.random::<f64>()).collect();
        let (mu, var) = bo::posterior(&gp, &at).unwrap();
        let pts: Vec<Vec<f64>> = obs.iter().map(|o| o.point.clone()).collect();
        let vals: Vec<f64> = obs.iter().map(|o| o.value).collect();
        let (mu_o, var_o) = gp_posterior(&pts, &vals, psi.tau0, &psi.tau, psi.noise, &at);
        worst = worst.max((mu - mu_o).abs()).max((var - var_o).abs());
    }
    let ei0 = bo::ei(0.7, 1.0, 0.7);

    let f = |th: f64| -(th - 0.3) * (th - 0.3);
    let grid_best = (0..=10_000)
        .map(|i| i as f64 / 10_000.0)
        .max_by(|a, b| f(*a).total_cmp(&f(*b)))
        .unwrap();
    let dims = [Dimension::continuous("theta", 0.0, 1.0)];
    let mut hits = 0;
    let mut bo_best = Vec::new();
    let mut rs_best = Vec::new();
    for s in 0..20u64 {
        let hist = bo::maximize(&dims, 25, s, |hp| f(hp.real("theta").unwrap())).unwrap();
        let best = hist.best().unwrap();
        if (best.hyperparams.real("theta").unwrap() - grid_best).abs() <= 0.05 {
            hits += 1;
        }
        bo_best.push(best.value);
        let mut rr = rng(1000 + s);
        rs_best.push((0..25).map(|_| f(rr.random::<f64>())).fold(f64::NEG_INFINITY, f64::max));
    }
    let (mb, mr) = (median(bo_best), median(rs_best));
    verdict(
        worst <= 1e-8 && (ei0 - 0.398942).abs() <= 1e-6 && hits >= 18 && mb > mr,
        format!(
            "posterior max error {worst:.2e} (<= 1e-8); EI {ei0:.7}; {hits}/20 within 0.05 of {grid_best}; median best BO {mb:.2e} vs random {mr:.2e}"
        ),
    )
}

// 9 ------------------------------------------------------------------------

fn thompson() -> Verdict {
    let probs = [0.1, 0.9];
    let mut total = 0.0;
    for s in 0..20u64 {
        let mut state = BetaState::new(&[2], 10.0, 10.0).unwrap();
        let mut r = rng(9000 + s);
        let mut best = 0;
        for t in 0..200u64 {
            let cfg = bandit::sample_config(&state, tsrep::rng::derive_index(s, t)).unwrap();
            let arm = cfg.choice[0];
            let reward = u8::from(r.random::<f64>() < probs[arm]);
            state = bandit::update(&state, &cfg, reward).unwrap();
            if t >= 100 && arm == 1 {
                best += 1;
            }
        }
        total += f64::from(best) / 100.0;
    }
    let frac = total / 20.0;
    verdict(frac >= 0.8, format!("best arm chosen in {:.1}% of the last 100 pulls, mean over 20 seeds (>= 80%)", 100.0 * frac))
}

// 10 -----------------------------------------------------------------------

fn metric_oracles() -> Verdict {
    let mut r = rng(10);
    let mut auc_err: f64 = 0.0;
    let mut invariant = true;
    let mut done = 0;
    while done < 1000 {
        let n = r.random_range(2..=50);
        let labels: Vec<i64> = (0..n).map(|_| i64::from(r.random_bool(0.4))).collect();
        if labels.iter().all(|&l| l == labels[0]) {
            continue;
        }
        // coarse grid so ties are common
        let scores: Vec<f64> = (0..n).map(|_| f64::from(r.random_range(-20..20)) / 8.0).collect();
        let a = metrics::auc(&scores, &labels).unwrap();
        auc_err = auc_err.max((a - pairwise_auc(&scores, &labels)).abs());
        let warped: Vec<f64> = scores.iter().map(|s| s.exp() + s.powi(3)).collect();
        invariant &= metrics::auc(&warped, &labels).unwrap() == a;
        done += 1;
    }
    let mut nmi_err: f64 = 0.0;
    for _ in 0..1000 {
        let n = r.random_range(1..=30);
        let ka = r.random_range(1..=4);
        let kb = r.random_range(1..=4);
        let a: Vec<i64> = (0..n).map(|_| r.random_range(0..ka)).collect();
        let b: Vec<i64> = (0..n).map(|_| r.random_range(0..kb)).collect();
        nmi_err = nmi_err.max((metrics::nmi(&a, &b).unwrap() - direct_nmi(&a, &b)).abs());
    }
    verdict(
        auc_err <= 1e-12 && nmi_err <= 1e-12 && invariant,
        format!("AUC max error {auc_err:.1e}, NMI max error {nmi_err:.1e} (<= 1e-12); transform invariance {invariant}"),
    )
}

// 11 -----------------------------------------------------------------------

fn determinism() -> Verdict {
    let dataset = benchmark(7);
    let mut cfg = RunConfig::new("synthetic", Task::Anomaly);
    cfg.ratios = BENCH_RATIOS;
    cfg.iterations = 3;
    cfg.bo_iters = 3;
    cfg.seed = 42;
    cfg.train.search_epochs = 5;
    cfg.train.final_epochs = 5;
    let a = search::search(&cfg, &dataset, None).unwrap().report;
    let b = search::search(&cfg, &dataset, None).unwrap().report;
    let (ja, jb) = (a.canonical_json().unwrap(), b.canonical_json().unwrap());
    verdict(
        ja == jb,
        format!("{} bytes each, identical apart from timings: {}", ja.len(), ja == jb),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 11] = [
        ("synthetic end-to-end search", synthetic_search),
        ("contrastive ablation", contrastive_ablation),
        ("irregular sampling robustness", irregularity),
        ("contamination robustness", contamination),
        ("energy oracle", energy_oracle),
        ("m_step and EM oracles", em_oracles),
        ("gradient correctness", gradients),
        ("GP, EI and BO", gp_and_bo),
        ("Thompson sampling", thompson),
        ("metric oracles", metric_oracles),
        ("determinism", determinism),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let clock = Instant::now();
        let v = run();
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!("{status} [{id:>2}] {name}: {} ({:.1}s)", v.detail, clock.elapsed().as_secs_f64());
        failed += usize::from(!v.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        // Non-zero only on request so the rest of `cargo test` still runs.
        if std::env::var_os("ACCEPTANCE_STRICT").is_some() {
            std::process::exit(1);
        }
    } else {
        println!("all criteria passed");
    }
}
