//! Minimum volume ellipsoid by random elemental subsets.
//!
//! Each `(p+1)`-subset proposes a shape; the ellipsoid is inflated until it
//! covers `h` observations and the smallest resulting volume wins.

use rand::Rng;

use super::select::{elemental_start, kth_smallest};
use super::{check_data, chi2_quantile, EstimateError, EstimatorKind, EstimatorSpec, LocationScatter, Result};
use crate::numerics::{Matrix, SpdMatrix};

/// Log of the squared volume (up to a constant) of the ellipsoid centred at
/// `center` with shape `scatter`, inflated to cover `h` points, and the
/// inflation `m²` (the h-th smallest squared distance).
pub fn mve_objective(data: &Matrix, h: usize, center: &[f64], scatter: &SpdMatrix, buf: &mut Vec<f64>) -> (f64, f64) {
    let p = scatter.dim() as f64;
    let d = scatter.distances_sq(data, center);
    let m2 = kth_smallest(&d, h - 1, buf);
    (scatter.log_det() + p * m2.ln(), m2)
}

pub fn fit_mve<R: Rng + ?Sized>(data: &Matrix, spec: &EstimatorSpec, rng: &mut R) -> Result<LocationScatter> {
    check_data(data)?;
    let (n, p) = data.shape();
    let h = spec.coverage(n, p)?;
    let mut buf = Vec::with_capacity(n);
    let mut best: Option<(f64, usize, SpdMatrix, crate::numerics::Vector)> = None;
    for order in 0..spec.n_subsamples {
        let Some((_, center, shape)) = elemental_start(data, rng) else {
            continue;
        };
        let (objective, m2) = mve_objective(data, h, center.as_slice(), &shape, &mut buf);
        if !(m2 > 0.0) || !objective.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|b| objective < b.0) {
            best = Some((objective, order, shape.scaled(m2), center));
        }
    }
    let Some((objective, _, covering, center)) = best else {
        return Err(EstimateError::DegenerateData(
            "no elemental subset produced a nonsingular ellipsoid".into(),
        ));
    };
    // The covering ellipsoid holds a fraction h/n of the sample; rescale it to
    // the matching χ²_p contour.
    let alpha = h as f64 / n as f64;
    let factor = if h < n {
        1.0 / chi2_quantile(p as f64, alpha)
    } else {
        1.0 / chi2_quantile(p as f64, 0.5)
    };
    let mut fit = LocationScatter::new(center, covering.scaled(factor), h, EstimatorKind::Mve);
    fit.objective = Some(objective);
    Ok(fit)
}
