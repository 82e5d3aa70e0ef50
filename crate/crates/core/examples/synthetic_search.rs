//! Full pipeline search on the synthetic sine benchmark.
//!
//! 300 clean sines and 100 sines with a short noisy window; 200 clean
//! series train, val and test each hold 50 of both kinds.
//!
//! ```text
//! cargo run --release --example synthetic_search -- [iterations] [bo_iters] [seed]
//! ```

use tsrep::data::{self, Task};
use tsrep::search::{self, RunConfig};

fn main() -> tsrep::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let arg = |i: usize, d: u64| args.get(i).copied().unwrap_or(d);

    let dataset = data::make_synthetic_sine(300, 100, 64, (0.1, 0.2), 11)?;
    let mut cfg = RunConfig::new("synthetic", Task::Anomaly);
    cfg.ratios = (2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0);
    cfg.iterations = arg(0, 10) as usize;
    cfg.bo_iters = arg(1, 5) as usize;
    cfg.seed = arg(2, 0);
    cfg.znormalize = false;

    let mut progress = |it: &search::TraceIteration, step: &search::TraceStep| {
        println!(
            "iter {:>2} step {} auc {:.4}  {}",
            it.iteration, step.step, step.value, it.description
        );
    };
    let out = search::search(&cfg, &dataset, Some(&mut progress))?;
    let r = &out.report;
    println!("best val auc {:.4}: {}", r.best.value, r.best.description);
    println!("hyperparameters {}", serde_json::to_string(&r.best.hyperparams)?);
    println!("test auc {:.4}", r.test_metric);
    println!("models trained {}, {:.1}s total", r.models_trained, r.timings.total_secs);
    Ok(())
}
