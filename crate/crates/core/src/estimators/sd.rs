//! Stahel–Donoho estimator with median/MAD projection outlyingness and hard
//! 0/1 weights.
//!
//! Directions are normals to hyperplanes through `p` randomly drawn
//! observations. Such a normal transforms as `A⁻ᵀu` under `x ↦ Ax + b`, so the
//! projected sample changes only by scale and shift and the outlyingness is
//! affine invariant for a fixed seed. In two dimensions each hyperplane is the
//! line through a random pair of points.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::select::median_mad;
use super::{check_data, EstimateError, EstimatorKind, EstimatorSpec, LocationScatter, Result};
use crate::numerics::{weighted_mean_and_scatter, Matrix};

/// Default direction count `max(1000, 200p) + min(n(n-1)/2, 1000)`.
pub fn default_directions(n: usize, p: usize) -> usize {
    (1000usize).max(200 * p) + (n * (n - 1) / 2).min(1000)
}

fn hyperplane_normal<R: Rng + ?Sized>(data: &Matrix, rng: &mut R) -> Option<DVector<f64>> {
    let (n, p) = data.shape();
    let idx = rand::seq::index::sample(rng, n, p).into_vec();
    // Rows x_k - x_0 span the hyperplane; a random last row pins the scale of
    // the null vector without affecting its direction.
    let mut m = DMatrix::zeros(p, p);
    for (r, &k) in idx.iter().enumerate().skip(1) {
        for j in 0..p {
            m[(r - 1, j)] = data[(k, j)] - data[(idx[0], j)];
        }
    }
    for j in 0..p {
        m[(p - 1, j)] = rng.sample(StandardNormal);
    }
    let mut rhs = DVector::zeros(p);
    rhs[p - 1] = 1.0;
    let u = m.lu().solve(&rhs)?;
    let norm = u.norm();
    (norm.is_finite() && norm > 0.0).then(|| u / norm)
}

/// Projection outlyingness of every observation over `n_directions` random
/// hyperplane normals (exact `|x - med|/MAD` when p = 1).
pub fn outlyingness<R: Rng + ?Sized>(data: &Matrix, n_directions: usize, rng: &mut R) -> Vec<f64> {
    let (n, p) = data.shape();
    let mut out = vec![0.0f64; n];
    let mut proj = vec![0.0; n];
    let mut buf = Vec::with_capacity(n);
    let accumulate = |proj: &[f64], out: &mut [f64], buf: &mut Vec<f64>| {
        let (med, mad) = median_mad(proj, buf);
        if mad > 0.0 {
            for (o, &y) in out.iter_mut().zip(proj) {
                *o = o.max((y - med).abs() / mad);
            }
        }
    };
    if p == 1 {
        proj.copy_from_slice(data.column(0).as_slice());
        accumulate(&proj, &mut out, &mut buf);
        return out;
    }
    for _ in 0..n_directions {
        let Some(u) = hyperplane_normal(data, rng) else {
            continue;
        };
        for (i, y) in proj.iter_mut().enumerate() {
            let mut s = 0.0;
            for j in 0..p {
                s += data[(i, j)] * u[j];
            }
            *y = s;
        }
        accumulate(&proj, &mut out, &mut buf);
    }
    out
}

pub fn fit_sd<R: Rng + ?Sized>(data: &Matrix, spec: &EstimatorSpec, rng: &mut R) -> Result<LocationScatter> {
    check_data(data)?;
    let (n, p) = data.shape();
    let n_dir = spec.n_directions.unwrap_or_else(|| default_directions(n, p));
    let out = outlyingness(data, n_dir, rng);
    let trimmed = (spec.trim_fraction * n as f64).ceil() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| out[b].total_cmp(&out[a]).then(a.cmp(&b)));
    let mut weights = vec![1.0; n];
    for &i in &order[..trimmed] {
        weights[i] = 0.0;
    }
    let kept = n - trimmed;
    if kept <= p {
        return Err(EstimateError::DegenerateData(format!(
            "only {kept} observations keep positive weight"
        )));
    }
    let (center, cov) = weighted_mean_and_scatter(data, &weights, None);
    let scatter = crate::numerics::SpdMatrix::new(&cov)?;
    Ok(LocationScatter::new(center, scatter, kept, EstimatorKind::Sd))
}
