//! Minimum covariance determinant via random elemental starts and C-steps.

use rand::Rng;

use super::select::{elemental_start, h_smallest};
use super::{
    check_data, chi2_cdf, chi2_quantile, EstimateError, EstimatorKind, EstimatorSpec, LocationScatter, Result,
};
use crate::numerics::{mean_and_scatter, Matrix, SpdMatrix, Vector};

/// Result of one concentration step.
#[derive(Debug, Clone)]
pub struct CStep {
    pub subset: Vec<usize>,
    pub center: Vector,
    pub scatter: SpdMatrix,
}

/// Keep the `h` observations closest to `(center, scatter)` and refit on them
/// (scatter divisor `h`). When the input is itself the fit of an h-subset the
/// determinant of the output never exceeds that of the input.
pub fn c_step(data: &Matrix, h: usize, center: &[f64], scatter: &SpdMatrix) -> Result<CStep> {
    let d = scatter.distances_sq(data, center);
    let mut subset = Vec::with_capacity(data.nrows());
    h_smallest(&d, h, &mut subset);
    let (center, cov) = mean_and_scatter(data, Some(&subset), false);
    let scatter = SpdMatrix::new(&cov)?;
    Ok(CStep {
        subset,
        center,
        scatter,
    })
}

/// Normal-consistency factor for the raw MCD scatter of coverage `h` out of `n`:
/// `(h/n) / P(χ²_{p+2} ≤ χ²_{p,h/n})`. Equals 1 when `h = n`.
pub fn mcd_consistency_factor(h: usize, n: usize, p: usize) -> f64 {
    if h >= n {
        return 1.0;
    }
    let alpha = h as f64 / n as f64;
    let q = chi2_quantile(p as f64, alpha);
    alpha / chi2_cdf(p as f64 + 2.0, q)
}

struct Candidate {
    order: usize,
    step: CStep,
}

impl Candidate {
    fn key(&self) -> (f64, usize) {
        (self.step.scatter.log_det(), self.order)
    }
}

fn better(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Fast-MCD. The returned `objective` is the raw (pre-consistency) log-determinant.
pub fn fit_mcd<R: Rng + ?Sized>(data: &Matrix, spec: &EstimatorSpec, rng: &mut R) -> Result<LocationScatter> {
    check_data(data)?;
    let (n, p) = data.shape();
    let h = spec.coverage(n, p)?;
    if h == n {
        let (center, cov) = mean_and_scatter(data, None, false);
        let scatter = SpdMatrix::new(&cov)?;
        let mut fit = LocationScatter::new(center, scatter, n, EstimatorKind::Mcd);
        fit.objective = Some(fit.scatter.log_det());
        return Ok(fit);
    }

    let mut pool: Vec<Candidate> = Vec::with_capacity(spec.n_refine + 1);
    for order in 0..spec.n_subsamples {
        let Some((_, center, scatter)) = elemental_start(data, rng) else {
            continue;
        };
        let Ok(first) = c_step(data, h, center.as_slice(), &scatter) else {
            continue;
        };
        let Ok(second) = c_step(data, h, first.center.as_slice(), &first.scatter) else {
            continue;
        };
        let cand = Candidate { order, step: second };
        // Identical subsets reached from different starts count once.
        if pool.iter().any(|c| c.step.subset == cand.step.subset) {
            continue;
        }
        if pool.len() < spec.n_refine || better(cand.key(), pool[pool.len() - 1].key()) {
            let pos = pool
                .iter()
                .position(|c| better(cand.key(), c.key()))
                .unwrap_or(pool.len());
            pool.insert(pos, cand);
            pool.truncate(spec.n_refine);
        }
    }
    if pool.is_empty() {
        return Err(EstimateError::DegenerateData(
            "no h-subset with a nonsingular scatter was found".into(),
        ));
    }

    let mut converged_all = true;
    let mut best: Option<Candidate> = None;
    for cand in pool {
        let order = cand.order;
        let mut cur = cand.step;
        let mut converged = false;
        for _ in 0..spec.max_iterations {
            let next = match c_step(data, h, cur.center.as_slice(), &cur.scatter) {
                Ok(s) => s,
                Err(_) => {
                    converged = true;
                    break;
                }
            };
            let (before, after) = (cur.scatter.log_det(), next.scatter.log_det());
            assert!(
                after <= before + 1e-9 * before.abs().max(1.0),
                "C-step increased the determinant: {before} -> {after}"
            );
            if next.subset == cur.subset || after >= before {
                converged = true;
                break;
            }
            cur = next;
        }
        converged_all &= converged;
        let cand = Candidate { order, step: cur };
        if best.as_ref().is_none_or(|b| better(cand.key(), b.key())) {
            best = Some(cand);
        }
    }

    let best = best.expect("pool is non-empty").step;
    let raw_log_det = best.scatter.log_det();
    let factor = mcd_consistency_factor(h, n, p);
    let mut fit = LocationScatter::new(best.center, best.scatter.scaled(factor), h, EstimatorKind::Mcd);
    fit.converged = converged_all;
    fit.objective = Some(raw_log_det);
    Ok(fit)
}
