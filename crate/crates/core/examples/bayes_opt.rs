//! GP Bayesian optimization on the Branin function (negated, maximum
//! -0.397887) next to random search with the same budget.
//!
//! ```text
//! cargo run --release --example bayes_opt -- [iters]
//! ```

use std::f64::consts::PI;

use rand::Rng;
use tsrep::bo::{self, Dimension, HyperparamVector};
use tsrep::rng;

fn branin(hp: &HyperparamVector) -> f64 {
    let x = hp.real("x").unwrap();
    let y = hp.real("y").unwrap();
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    -((y - b * x * x + c * x - 6.0).powi(2) + 10.0 * (1.0 - t) * x.cos() + 10.0)
}

fn main() -> tsrep::Result<()> {
    let iters: usize = std::env::args().nth(1).map(|a| a.parse().expect("integer")).unwrap_or(30);
    let dims = vec![Dimension::continuous("x", -5.0, 10.0), Dimension::continuous("y", 0.0, 15.0)];

    let hist = bo::maximize(&dims, iters, 7, branin)?;
    for (i, s) in hist.steps.iter().enumerate() {
        println!("{i:>3} f {:>9.4}  {}", s.value, serde_json::to_string(&s.hyperparams)?);
    }
    let best = hist.best().expect("at least one step");
    println!("bo best {:.5} after {iters} evaluations", best.value);

    let mut r = rng::rng(7);
    let random_best = (0..iters)
        .map(|_| {
            let p = [r.random::<f64>(), r.random::<f64>()];
            branin(&HyperparamVector::decode(&dims, &p))
        })
        .fold(f64::NEG_INFINITY, f64::max);
    println!("random best {random_best:.5}");
    Ok(())
}
