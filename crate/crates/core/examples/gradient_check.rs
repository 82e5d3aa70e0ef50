//! Reverse-mode gradients against central finite differences: a small MLP
//! loss and the mixture energy built from soft memberships.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use rand::Rng;
use tsrep::autodiff::{grad_check, Tensor};
use tsrep::{gmm, rng};

fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut r = rng::rng(seed);
    Tensor::new(rows, cols, (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn main() -> tsrep::Result<()> {
    let x = random(6, 3, 1);
    let mlp = grad_check(
        |t, p| {
            let xv = t.constant(x.clone());
            let h = t.matmul(xv, p[0])?;
            let h = t.add(h, p[1])?;
            let h = t.tanh(h);
            let o = t.matmul(h, p[2])?;
            let o = t.sigmoid(o);
            let l = t.log(o);
            Ok(t.mean(l))
        },
        &[random(3, 4, 2), random(1, 4, 3), random(4, 1, 4)],
        1e-6,
    )?;
    println!("mlp loss: max relative error {mlp:.3e}");

    let energy = grad_check(
        |t, p| {
            let gamma = t.softmax(p[1]);
            let e = gmm::energy_graph(t, p[0], gamma, gmm::COV_EPS)?;
            Ok(t.mean(e))
        },
        &[random(12, 2, 5), random(12, 3, 6)],
        1e-5,
    )?;
    println!("mixture energy: max relative error {energy:.3e}");
    Ok(())
}
