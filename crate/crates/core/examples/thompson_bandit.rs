//! Thompson sampling over a two-module search space with hidden Bernoulli
//! reward rates. The posterior concentrates on the best option per module.
//!
//! ```text
//! cargo run --release --example thompson_bandit
//! ```

use rand::Rng;
use tsrep::bandit::{self, BetaState};
use tsrep::rng;

fn main() -> tsrep::Result<()> {
    // Success rate of each option; the reward is the product over modules.
    let rates = [vec![0.3, 0.9, 0.5], vec![0.6, 0.4]];
    let counts: Vec<usize> = rates.iter().map(Vec::len).collect();
    let mut state = BetaState::new(&counts, 1.0, 1.0)?;
    let mut env = rng::rng(99);

    let rounds = 300;
    let mut picks = [vec![0usize; 3], vec![0usize; 2]];
    for t in 0..rounds {
        let cfg = bandit::sample_config(&state, rng::derive_index(5, t))?;
        let p: f64 = cfg.choice.iter().zip(&rates).map(|(&j, r)| r[j]).product();
        let r = u8::from(env.random::<f64>() < p);
        state = bandit::update(&state, &cfg, r)?;
        for (m, &j) in cfg.choice.iter().enumerate() {
            picks[m][j] += 1;
        }
    }

    for (m, (a, b)) in state.alpha.iter().zip(&state.beta).enumerate() {
        let means: Vec<String> = a.iter().zip(b).map(|(a, b)| format!("{:.3}", a / (a + b))).collect();
        println!("module {m}: picks {:?}, posterior means [{}]", picks[m], means.join(", "));
    }
    Ok(())
}
