//! Irregular sampling, the three augmentations and a contrastive negative on
//! one sine.
//!
//! ```text
//! cargo run --release --example irregular_augment
//! ```

use tsrep::augment;
use tsrep::data::{self, SamplerConfig, TimeSeries};

fn show(name: &str, s: &TimeSeries) {
    let v: Vec<String> = s.values.iter().map(|x| format!("{:+.2}", x[0])).collect();
    println!("{name:<10} T={:<3} {}", s.len(), v.join(" "));
}

fn main() -> tsrep::Result<()> {
    let values: Vec<f64> = (0..24).map(|t| (2.0 * std::f64::consts::PI * t as f64 / 12.0).sin()).collect();
    let s = TimeSeries::univariate("sine", &values, Some(0))?;
    show("original", &s);

    let sparse = data::irregular_sample(&s, &SamplerConfig::new(0.5, 1)?)?;
    show("beta=0.5", &sparse);
    println!("{:<10} kept positions {:?}", "", sparse.time_index);

    show("scaled", &augment::scale(&s, 1.5)?);
    show("shifted", &augment::shift(&s, 3)?);
    let (lo, hi) = augment::time_warp_bounds(s.len());
    show("warped", &augment::time_warp(&s, hi, 2)?);
    println!("{:<10} warp count bounds [{lo}, {hi}]", "");

    let neg = augment::gen_negative(&s, 4);
    show("negative", &neg.series);
    println!("{:<10} noisy window (start, len) = {:?}", "", neg.window);
    Ok(())
}
