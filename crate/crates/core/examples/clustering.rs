//! Clustering search: slow and fast sines form two classes and the search
//! maximizes NMI of the mixture assignment on the validation split.
//!
//! ```text
//! cargo run --release --example clustering -- [iterations] [bo_iters]
//! ```

use rand::Rng;
use tsrep::data::{Dataset, Task, TimeSeries};
use tsrep::rng;
use tsrep::search::{self, RunConfig};

fn two_classes(n: usize, t: usize, seed: u64) -> tsrep::Result<Dataset> {
    let mut r = rng::rng(seed);
    let mut series = Vec::with_capacity(2 * n);
    for (label, k) in [(0, 1.0), (1, 3.0)] {
        for i in 0..n {
            let phase: f64 = r.random();
            let v: Vec<f64> = (0..t)
                .map(|s| (2.0 * std::f64::consts::PI * k * (s as f64 / t as f64 + phase)).sin() + 0.05 * r.random_range(-1.0..1.0))
                .collect();
            series.push(TimeSeries::univariate(format!("c{label}_{i}"), &v, Some(label))?);
        }
    }
    Dataset::new("two_sines", 1, series)
}

fn main() -> tsrep::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let dataset = two_classes(60, 32, 4)?;
    let mut cfg = RunConfig::new("two_sines", Task::Cluster);
    cfg.iterations = args.first().copied().unwrap_or(4);
    cfg.bo_iters = args.get(1).copied().unwrap_or(3);
    cfg.train.search_epochs = 10;
    cfg.train.final_epochs = 20;

    let out = search::search(&cfg, &dataset, None)?;
    let r = &out.report;
    for it in &r.trace {
        println!("iter {:>2} nmi {:.4}  {}", it.iteration, it.value, it.description);
    }
    println!("best val nmi {:.4}, test nmi {:.4}", r.best.value, r.test_metric);
    Ok(())
}
