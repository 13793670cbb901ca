//! Huber-type M-estimator of location and scatter.
//!
//! Solves
//!   (1/n) Σ u₁(dᵢ) (xᵢ - l) = 0
//!   (1/n) Σ u₂(dᵢ²) (xᵢ - l)(xᵢ - l)ᵀ = V
//! with u₁(d) = ψ₁(d)/d = min(1, k/d) and u₂(s) = ψ₂(s)/s = min(1, k²/s)/τ,
//! where ψ₁, ψ₂ are the clipped Huber functions and τ = E[min(‖X‖², k²)]/p
//! for X ~ N(0, I_p), which makes V consistent at the Normal model.

use super::select::median_mad;
use super::{check_data, chi2_cdf, chi2_quantile, EstimatorKind, EstimatorSpec, LocationScatter, Result};
use crate::numerics::{weighted_scatter_about, Matrix, SpdMatrix, Vector};

/// τ = E[min(‖X‖², k²)] / p under the standard p-variate Normal.
pub fn huber_normalizer(p: usize, k: f64) -> f64 {
    let pf = p as f64;
    let k2 = k * k;
    // E[χ²_p · 1{χ²_p ≤ c}] = p · F_{p+2}(c)
    (pf * chi2_cdf(pf + 2.0, k2) + k2 * (1.0 - chi2_cdf(pf, k2))) / pf
}

/// Default clipping constant `sqrt(χ²_p(0.95))`.
pub fn default_huber_k(p: usize) -> f64 {
    chi2_quantile(p as f64, 0.95).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberResiduals {
    /// Norm of the location equation's left side, in the metric of V.
    pub location: f64,
    /// Relative Frobenius norm of the scatter equation's residual.
    pub scatter: f64,
}

struct Weights {
    k: f64,
    tau: f64,
}

impl Weights {
    fn u1(&self, d2: f64) -> f64 {
        let d = d2.sqrt();
        if d <= self.k {
            1.0
        } else {
            self.k / d
        }
    }

    fn u2(&self, d2: f64) -> f64 {
        let k2 = self.k * self.k;
        (if d2 <= k2 { 1.0 } else { k2 / d2 }) / self.tau
    }
}

fn weighted_location(data: &Matrix, w: &[f64]) -> Vector {
    let total: f64 = w.iter().sum();
    let mut l = Vector::zeros(data.ncols());
    for (i, &wi) in w.iter().enumerate() {
        for j in 0..data.ncols() {
            l[j] += wi * data[(i, j)];
        }
    }
    l / total
}

fn robust_start(data: &Matrix) -> Option<(Vector, SpdMatrix)> {
    let (n, p) = data.shape();
    let mut buf = Vec::with_capacity(n);
    let mut center = Vector::zeros(p);
    let mut diag = Matrix::zeros(p, p);
    for j in 0..p {
        let col: Vec<f64> = data.column(j).iter().copied().collect();
        let (med, mad) = median_mad(&col, &mut buf);
        center[j] = med;
        diag[(j, j)] = (1.4826 * mad).powi(2);
    }
    SpdMatrix::new(&diag).ok().map(|s| (center, s))
}

pub fn fit_m_huber(data: &Matrix, spec: &EstimatorSpec) -> Result<LocationScatter> {
    check_data(data)?;
    let (n, p) = data.shape();
    let k = spec.huber_k.unwrap_or_else(|| default_huber_k(p));
    let w = Weights {
        k,
        tau: huber_normalizer(p, k),
    };
    let (mut loc, mut scatter) = match robust_start(data) {
        Some(s) => s,
        None => {
            let c = super::fit_classical(data)?;
            (c.location, c.scatter)
        }
    };

    let mut converged = false;
    let mut d2 = Vec::with_capacity(n);
    let mut u2 = vec![0.0; n];
    for _ in 0..spec.max_iterations {
        scatter.distances_sq_into(data, loc.as_slice(), &mut d2);
        let u1: Vec<f64> = d2.iter().map(|&d| w.u1(d)).collect();
        for (u, &d) in u2.iter_mut().zip(&d2) {
            *u = w.u2(d);
        }
        let new_loc = weighted_location(data, &u1);
        let new_scatter = SpdMatrix::new(&weighted_scatter_about(data, &u2, new_loc.as_slice(), n as f64))?;
        let shift = (&new_loc - &loc).into_owned();
        let dl = new_scatter
            .mahalanobis_sq_unchecked(shift.iter().copied(), &vec![0.0; p], &mut vec![0.0; p])
            .sqrt();
        let dv = (new_scatter.matrix() - scatter.matrix()).norm() / scatter.matrix().norm();
        loc = new_loc;
        scatter = new_scatter;
        if dl < spec.tol && dv < spec.tol {
            converged = true;
            break;
        }
    }

    let mut fit = LocationScatter::new(loc, scatter, n, EstimatorKind::MHuber);
    fit.converged = converged;
    Ok(fit)
}

/// Evaluate both estimating equations at `fit`.
pub fn huber_residuals(data: &Matrix, fit: &LocationScatter, k: f64) -> HuberResiduals {
    let (n, p) = data.shape();
    let w = Weights {
        k,
        tau: huber_normalizer(p, k),
    };
    let d2 = fit.scatter.distances_sq(data, fit.location.as_slice());
    let mut r = Vector::zeros(p);
    for (i, &d) in d2.iter().enumerate() {
        let u = w.u1(d);
        for j in 0..p {
            r[j] += u * (data[(i, j)] - fit.location[j]);
        }
    }
    r /= n as f64;
    let location = fit
        .scatter
        .mahalanobis_sq_unchecked(r.iter().copied(), &vec![0.0; p], &mut vec![0.0; p])
        .sqrt();
    let u2: Vec<f64> = d2.iter().map(|&d| w.u2(d)).collect();
    let v = weighted_scatter_about(data, &u2, fit.location.as_slice(), n as f64);
    let scatter = (v - fit.scatter.matrix()).norm() / fit.scatter.matrix().norm();
    HuberResiduals { location, scatter }
}

impl LocationScatter {
    /// Residuals of the Huber estimating equations; meaningful for M fits.
    pub fn huber_residuals(&self, data: &Matrix, k: f64) -> HuberResiduals {
        huber_residuals(data, self, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::fit_classical;
    use crate::estimators::test_support::*;
    use statrs::distribution::{ChiSquared, Continuous};

    /// Composite Simpson quadrature of E[min(χ²_p, k²)] against the χ²_p density.
    fn quadrature_normalizer(p: usize, k: f64) -> f64 {
        let chi = ChiSquared::new(p as f64).unwrap();
        let upper = 200.0 + 20.0 * p as f64;
        let m = 400_000;
        let h = upper / m as f64;
        let f = |x: f64| {
            if x <= 0.0 {
                return 0.0;
            }
            x.min(k * k) * chi.pdf(x)
        };
        let mut s = f(0.0) + f(upper);
        for i in 1..m {
            let x = i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0 / p as f64
    }

    #[test]
    fn normalizer_matches_quadrature() {
        for (p, k) in [(1, 1.0), (2, 1.5), (3, default_huber_k(3)), (6, default_huber_k(6))] {
            let exact = huber_normalizer(p, k);
            let quad = quadrature_normalizer(p, k);
            assert!((exact - quad).abs() < 1e-6, "p={p} k={k}: {exact} vs {quad}");
        }
    }

    #[test]
    fn large_k_is_classical() {
        let data = normal_data(100, 3, 12);
        let spec = EstimatorSpec {
            kind: EstimatorKind::MHuber,
            huber_k: Some(1e4),
            ..Default::default()
        };
        let m = fit_m_huber(&data, &spec).unwrap();
        let c = fit_classical(&data).unwrap();
        assert!((&m.location - &c.location).norm() < 1e-6);
        assert!((m.scatter.matrix() - c.scatter.matrix()).norm() < 1e-6);
    }

    #[test]
    fn solution_satisfies_estimating_equations() {
        let mut data = normal_data(300, 3, 77);
        for i in 0..30 {
            data[(i, 1)] += 12.0;
        }
        let spec = EstimatorSpec::new(EstimatorKind::MHuber);
        let f = fit_m_huber(&data, &spec).unwrap();
        assert!(f.converged);
        let r = f.huber_residuals(&data, default_huber_k(3));
        assert!(r.location < 1e-6 && r.scatter < 1e-6, "{r:?}");
    }

    #[test]
    fn symmetric_data_centered() {
        let half = normal_data(150, 2, 5);
        let data = Matrix::from_fn(300, 2, |i, j| if i < 150 { half[(i, j)] } else { -half[(i - 150, j)] });
        let f = fit_m_huber(&data, &EstimatorSpec::new(EstimatorKind::MHuber)).unwrap();
        assert!(f.location.norm() < 1e-6);
    }
}
