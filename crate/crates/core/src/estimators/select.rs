//! Order statistics and subset helpers shared by the estimators.

use std::cmp::Ordering;

use rand::Rng;

use crate::numerics::{mean_and_scatter, Matrix, SpdMatrix, Vector};

/// Median of a slice (mean of the two middle values for even length).
/// The slice is reordered.
pub fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    assert!(n > 0, "median of empty slice");
    let mid = n / 2;
    let (lower, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *m;
    if n % 2 == 1 {
        upper
    } else {
        let lo = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + upper)
    }
}

pub fn median(v: &[f64]) -> f64 {
    let mut w = v.to_vec();
    median_in_place(&mut w)
}

/// Median and (unscaled) median absolute deviation; `buf` is scratch space.
pub fn median_mad(v: &[f64], buf: &mut Vec<f64>) -> (f64, f64) {
    buf.clear();
    buf.extend_from_slice(v);
    let med = median_in_place(buf);
    for (b, x) in buf.iter_mut().zip(v) {
        *b = (x - med).abs();
    }
    (med, median_in_place(buf))
}

/// k-th smallest value (0-based).
pub fn kth_smallest(v: &[f64], k: usize, buf: &mut Vec<f64>) -> f64 {
    buf.clear();
    buf.extend_from_slice(v);
    *buf.select_nth_unstable_by(k, f64::total_cmp).1
}

/// Indices of the `h` smallest keys, ties broken by lower index, returned sorted.
pub fn h_smallest(keys: &[f64], h: usize, idx: &mut Vec<usize>) {
    idx.clear();
    idx.extend(0..keys.len());
    if h < keys.len() {
        idx.select_nth_unstable_by(h, |&a, &b| cmp_key(keys, a, b));
        idx.truncate(h);
    }
    idx.sort_unstable();
}

fn cmp_key(keys: &[f64], a: usize, b: usize) -> Ordering {
    keys[a].total_cmp(&keys[b]).then(a.cmp(&b))
}

/// Draw a random elemental subset of `p + 1` rows, enlarging it one random row
/// at a time until its sample scatter is nonsingular. Returns `None` if even
/// the full sample is singular.
pub fn elemental_start<R: Rng + ?Sized>(data: &Matrix, rng: &mut R) -> Option<(Vec<usize>, Vector, SpdMatrix)> {
    let (n, p) = data.shape();
    let mut chosen = vec![false; n];
    let mut subset: Vec<usize> = rand::seq::index::sample(rng, n, p + 1).into_vec();
    for &i in &subset {
        chosen[i] = true;
    }
    loop {
        let (mean, cov) = mean_and_scatter(data, Some(&subset), false);
        if let Ok(s) = SpdMatrix::new(&cov) {
            return Some((subset, mean, s));
        }
        if subset.len() == n {
            return None;
        }
        let remaining = n - subset.len();
        let pick = rng.random_range(0..remaining);
        let next = (0..n).filter(|&i| !chosen[i]).nth(pick).expect("pick within remaining");
        chosen[next] = true;
        subset.push(next);
    }
}
