//! Data augmentation options and negative-sample generation.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TimeSeries};
use crate::error::{Error, Result};
use crate::rng::{self, derive_index};

pub const N_AUG_MAX: usize = 100;
pub const H_AMP_RANGE: (f64, f64) = (0.5, 1.8);
pub const H_SHIFT_MAX: i64 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentKind {
    Scaling,
    Shifting,
    Timewarp,
}

impl AugmentKind {
    pub const ALL: [AugmentKind; 3] = [
        AugmentKind::Scaling,
        AugmentKind::Shifting,
        AugmentKind::Timewarp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugmentKind::Scaling => "scaling",
            AugmentKind::Shifting => "shifting",
            AugmentKind::Timewarp => "timewarp",
        }
    }
}

/// Hyperparameters of the augmentation module. Only the fields relevant to
/// `kind` are read.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub kind: AugmentKind,
    pub n_aug: usize,
    pub h_amp: f64,
    pub h_shift: i64,
    pub h_tm: usize,
    pub seed: u64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            kind: AugmentKind::Scaling,
            n_aug: 0,
            h_amp: 1.0,
            h_shift: 0,
            h_tm: 0,
            seed: 0,
        }
    }
}

/// Inclusive `(floor(T/10), ceil(T/4))` bounds on the number of warped
/// timestamps for a series of length `t`.
pub fn time_warp_bounds(t: usize) -> (usize, usize) {
    (t / 10, t.div_ceil(4))
}

pub fn scale(series: &TimeSeries, h_amp: f64) -> Result<TimeSeries> {
    let (lo, hi) = H_AMP_RANGE;
    if !(lo..=hi).contains(&h_amp) {
        return Err(Error::domain(format!("h_amp must lie in [{lo}, {hi}], got {h_amp}")));
    }
    let values = series
        .values
        .iter()
        .map(|v| v.iter().map(|x| x * h_amp).collect())
        .collect();
    Ok(TimeSeries {
        values,
        ..series.clone()
    })
}

/// Cyclic rotation to the right by `h_shift` (negative rotates left).
pub fn shift(series: &TimeSeries, h_shift: i64) -> Result<TimeSeries> {
    let t = series.len() as i64;
    if h_shift.abs() > H_SHIFT_MAX || h_shift.abs() >= t {
        return Err(Error::domain(format!(
            "h_shift must satisfy |h| <= {H_SHIFT_MAX} and |h| < T = {t}, got {h_shift}"
        )));
    }
    let mut values = series.values.clone();
    values.rotate_right(h_shift.rem_euclid(t) as usize);
    Ok(TimeSeries {
        values,
        ..series.clone()
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WarpMark {
    /// Delete the value at this timestamp.
    SpeedUp,
    /// Insert a copy of the value just before this timestamp.
    SlowDown,
}

/// Randomly speeds up or slows down `h_tm` distinct timestamps.
pub fn time_warp(series: &TimeSeries, h_tm: usize, seed: u64) -> Result<TimeSeries> {
    let t = series.len();
    let (lo, hi) = time_warp_bounds(t);
    if !(lo..=hi).contains(&h_tm) {
        return Err(Error::domain(format!(
            "h_tm must lie in [{lo}, {hi}] for T = {t}, got {h_tm}"
        )));
    }
    let mut rng = rng::rng(seed);
    let mut marks: Vec<(usize, WarpMark)> = rand::seq::index::sample(&mut rng, t, h_tm)
        .into_iter()
        .map(|i| {
            let mark = if rng.random_bool(0.5) {
                WarpMark::SpeedUp
            } else {
                WarpMark::SlowDown
            };
            (i, mark)
        })
        .collect();
    // A length-1 series cannot lose its only value.
    if t == 1 {
        for m in &mut marks {
            m.1 = WarpMark::SlowDown;
        }
    }
    warp_at(series, &marks)
}

/// Applies explicit warp marks. Positions must be distinct and in range.
pub fn warp_at(series: &TimeSeries, marks: &[(usize, WarpMark)]) -> Result<TimeSeries> {
    let t = series.len();
    let mut mark_of = vec![None; t];
    for &(i, m) in marks {
        if i >= t || mark_of[i].is_some() {
            return Err(Error::domain(format!("invalid warp position {i} for T = {t}")));
        }
        mark_of[i] = Some(m);
    }
    let mut values = Vec::with_capacity(t + marks.len());
    for (v, mark) in series.values.iter().zip(mark_of) {
        match mark {
            None => values.push(v.clone()),
            Some(WarpMark::SpeedUp) => {}
            Some(WarpMark::SlowDown) => {
                values.push(v.clone());
                values.push(v.clone());
            }
        }
    }
    if values.is_empty() {
        return Err(Error::domain("time warp removed every observation"));
    }
    Ok(series.with_values(series.id.clone(), values))
}

fn augment_one(src: &TimeSeries, params: &AugmentParams, seed: u64, id: String) -> Result<TimeSeries> {
    let out = match params.kind {
        AugmentKind::Scaling => scale(src, params.h_amp)?,
        AugmentKind::Shifting => {
            let t = src.len() as i64;
            let h = if params.h_shift.abs() >= t {
                params.h_shift % t
            } else {
                params.h_shift
            };
            shift(src, h)?
        }
        AugmentKind::Timewarp => {
            let (lo, hi) = time_warp_bounds(src.len());
            time_warp(src, params.h_tm.clamp(lo, hi), seed)?
        }
    };
    Ok(out.with_values(id, out.values.clone()))
}

/// Returns `train` followed by `n_aug` augmented copies of uniformly drawn
/// (with replacement) source series.
pub fn augment_dataset(train: &Dataset, params: &AugmentParams) -> Result<Dataset> {
    if params.n_aug > N_AUG_MAX {
        return Err(Error::domain(format!(
            "n_aug must lie in [0, {N_AUG_MAX}], got {}",
            params.n_aug
        )));
    }
    let mut series = train.series.clone();
    if params.n_aug > 0 && train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = rng::rng(params.seed);
    for k in 0..params.n_aug {
        let src = &train.series[rng.random_range(0..train.len())];
        let id = format!("{}~aug{k}", src.id);
        series.push(augment_one(src, params, derive_index(params.seed, k as u64), id)?);
    }
    Ok(Dataset {
        name: train.name.clone(),
        channel_dim: train.channel_dim,
        series,
    })
}

/// A corrupted copy of a training series used as a contrastive negative.
#[derive(Clone, Debug, PartialEq)]
pub struct Negative {
    pub series: TimeSeries,
    /// `(start, len)` of the corrupted window.
    pub window: (usize, usize),
    /// Every channel was constant, so the window could not change.
    pub degenerate: bool,
}

/// Replaces one contiguous window of length in `[max(1, T/10), ceil(T/4)]`
/// with uniform draws from each channel's `[min, max]`.
pub fn gen_negative(series: &TimeSeries, seed: u64) -> Negative {
    let t = series.len();
    let mut rng = rng::rng(seed);
    let lo = (t / 10).max(1);
    let hi = t.div_ceil(4).max(lo);
    let width = rng.random_range(lo..=hi).min(t);
    let start = rng.random_range(0..=t - width);

    let ranges: Vec<(f64, f64)> = (0..series.dim())
        .map(|c| {
            series.values.iter().map(|v| v[c]).fold(
                (f64::INFINITY, f64::NEG_INFINITY),
                |(lo, hi), x| (lo.min(x), hi.max(x)),
            )
        })
        .collect();
    let degenerate = ranges.iter().all(|(lo, hi)| lo == hi);

    let mut values = series.values.clone();
    for row in &mut values[start..start + width] {
        for (x, &(lo, hi)) in row.iter_mut().zip(&ranges) {
            *x = if lo < hi { rng.random_range(lo..=hi) } else { lo };
        }
    }
    Negative {
        series: TimeSeries {
            id: format!("{}~neg", series.id),
            values,
            ..series.clone()
        },
        window: (start, width),
        degenerate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uni(v: &[f64]) -> TimeSeries {
        TimeSeries::univariate("s", v, Some(0)).unwrap()
    }

    #[test]
    fn scale_examples() {
        assert_eq!(scale(&uni(&[1.0, 2.0, 3.0]), 1.5).unwrap().channel(0), vec![1.5, 3.0, 4.5]);
        assert_eq!(scale(&uni(&[1.0, 2.0]), 1.0).unwrap(), uni(&[1.0, 2.0]));
        assert!(scale(&uni(&[1.0]), 2.0).is_err());
        assert!(scale(&uni(&[1.0]), 0.49).is_err());
    }

    #[test]
    fn shift_examples() {
        let s = uni(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(shift(&s, 1).unwrap().channel(0), vec![4.0, 1.0, 2.0, 3.0]);
        assert_eq!(shift(&s, -1).unwrap().channel(0), vec![2.0, 3.0, 4.0, 1.0]);
        assert_eq!(shift(&s, 0).unwrap(), s);
        let twice = shift(&shift(&s, 2).unwrap(), 2).unwrap();
        assert_eq!(twice, s);
        assert!(shift(&s, 4).is_err());
        let long = uni(&[0.0; 40]);
        assert!(shift(&long, 11).is_err());
    }

    #[test]
    fn warp_lengths() {
        let s = uni(&(0..20).map(f64::from).collect::<Vec<_>>());
        let slow: Vec<_> = (0..5).map(|i| (i * 3, WarpMark::SlowDown)).collect();
        assert_eq!(warp_at(&s, &slow).unwrap().len(), 25);
        let fast: Vec<_> = (0..5).map(|i| (i * 3, WarpMark::SpeedUp)).collect();
        assert_eq!(warp_at(&s, &fast).unwrap().len(), 15);
        // slow-down duplicates the value right before the timestamp
        let one = warp_at(&s, &[(3, WarpMark::SlowDown)]).unwrap();
        assert_eq!(&one.channel(0)[..6], &[0.0, 1.0, 2.0, 3.0, 3.0, 4.0]);
    }

    #[test]
    fn time_warp_bounds_and_determinism() {
        let s = uni(&(0..40).map(f64::from).collect::<Vec<_>>());
        assert_eq!(time_warp_bounds(40), (4, 10));
        assert!(time_warp(&s, 3, 0).is_err());
        assert!(time_warp(&s, 11, 0).is_err());
        let a = time_warp(&s, 8, 7).unwrap();
        let b = time_warp(&s, 8, 7).unwrap();
        assert_eq!(a, b);
        assert!((32..=48).contains(&a.len()));
    }

    #[test]
    fn augment_counts_and_ids() {
        let ds = Dataset::new(
            "d",
            1,
            (0..5)
                .map(|i| TimeSeries::univariate(format!("s{i}"), &[1.0, 2.0, 3.0, 4.0], None).unwrap())
                .collect(),
        )
        .unwrap();
        let none = augment_dataset(&ds, &AugmentParams::default()).unwrap();
        assert_eq!(none, ds);
        let params = AugmentParams {
            kind: AugmentKind::Shifting,
            n_aug: 100,
            h_shift: -2,
            ..AugmentParams::default()
        };
        let out = augment_dataset(&ds, &params).unwrap();
        assert_eq!(out.len(), 105);
        let mut ids: Vec<_> = out.series.iter().map(|s| s.id.clone()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 105);
        assert!(augment_dataset(&ds, &AugmentParams { n_aug: 101, ..params }).is_err());
    }

    #[test]
    fn negative_window_contract() {
        let s = uni(&(0..40).map(|i| (i as f64 * 0.3).sin()).collect::<Vec<_>>());
        let neg = gen_negative(&s, 11);
        let (start, len) = neg.window;
        assert!((4..=10).contains(&len));
        let (lo, hi) = s
            .channel(0)
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        for (i, (a, b)) in s.channel(0).iter().zip(neg.series.channel(0)).enumerate() {
            if i < start || i >= start + len {
                assert_eq!(*a, b);
            } else {
                assert!((lo..=hi).contains(&b));
            }
        }
        assert!(!neg.degenerate);
        assert_eq!(neg.series.len(), s.len());
    }

    #[test]
    fn constant_negative_is_degenerate() {
        let s = uni(&[2.0; 12]);
        let neg = gen_negative(&s, 1);
        assert!(neg.degenerate);
        assert_eq!(neg.series.values, s.values);
    }
}
