//! EM on a two-cluster 2-d sample, then energies of typical and outlying
//! points under the fitted mixture.
//!
//! ```text
//! cargo run --release --example gmm_em
//! ```

use rand_distr::{Distribution, Normal};
use tsrep::{gmm, rng};

fn main() -> tsrep::Result<()> {
    let mut r = rng::rng(1);
    let noise = Normal::new(0.0, 0.4).unwrap();
    let mut y = Vec::new();
    for (cx, cy, n) in [(-2.0, 0.0, 150), (2.5, 1.0, 50)] {
        for _ in 0..n {
            y.push(vec![cx + noise.sample(&mut r), cy + noise.sample(&mut r)]);
        }
    }

    let fit = gmm::fit_em(&y, 2, 100, 3)?;
    println!("log-likelihood by round:");
    for (i, ll) in fit.log_likelihood.iter().enumerate() {
        println!("  {i:>3} {ll:.4}");
    }
    let p = &fit.params;
    for h in 0..p.components() {
        println!(
            "component {h}: phi {:.3}, mu [{:.3}, {:.3}], sigma {:?}",
            p.phi[h], p.mu[h][0], p.mu[h][1], p.sigma[h].to_rows()
        );
    }
    for q in [[-2.0, 0.0], [2.5, 1.0], [0.0, 5.0]] {
        println!("energy at {q:?}: {:.3}", gmm::energy(p, &q)?);
    }
    Ok(())
}
