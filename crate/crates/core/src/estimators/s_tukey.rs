//! S-estimator with Tukey's biweight ρ, computed by random elemental starts
//! followed by reweighting (I-) steps that lower the M-scale.

use rand::Rng;

use super::select::{elemental_start, median};
use super::{check_data, chi2_cdf, EstimateError, EstimatorKind, EstimatorSpec, LocationScatter, Result};
use crate::numerics::{weighted_mean_and_scatter, Matrix, SpdMatrix, Vector};

/// Tukey's biweight ρ with cutoff `b`, and the constraint level `c`.
///
/// ρ(d) = d²/2 − d⁴/(2b²) + d⁶/(6b⁴) for d < b and b²/6 beyond, so ρ is
/// increasing on [0, b) and constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TukeyBiweight {
    pub b: f64,
    pub c: f64,
}

impl TukeyBiweight {
    /// Choose `b` so that E[ρ(‖Z‖)] = δ·ρ_max for Z ~ N(0, I_p), with `c = δ·ρ_max`.
    pub fn for_breakdown(p: usize, breakdown: f64) -> Self {
        let ratio = |b: f64| Self::expected_rho(p, b) / (b * b / 6.0);
        // ratio falls from 1 (b → 0) to 0 (b → ∞)
        let (mut lo, mut hi) = (1e-3, 1.0);
        while ratio(hi) > breakdown {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if ratio(mid) > breakdown {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        let b = 0.5 * (lo + hi);
        TukeyBiweight {
            b,
            c: breakdown * b * b / 6.0,
        }
    }

    /// E[ρ_b(‖Z‖)] with ‖Z‖² ~ χ²_p, from truncated χ² moments.
    pub fn expected_rho(p: usize, b: f64) -> f64 {
        let pf = p as f64;
        let b2 = b * b;
        let m1 = pf * chi2_cdf(pf + 2.0, b2);
        let m2 = pf * (pf + 2.0) * chi2_cdf(pf + 4.0, b2);
        let m3 = pf * (pf + 2.0) * (pf + 4.0) * chi2_cdf(pf + 6.0, b2);
        m1 / 2.0 - m2 / (2.0 * b2) + m3 / (6.0 * b2 * b2) + b2 / 6.0 * (1.0 - chi2_cdf(pf, b2))
    }

    pub fn rho_max(&self) -> f64 {
        self.b * self.b / 6.0
    }

    /// ρ evaluated at `sqrt(t)`.
    #[inline]
    pub fn rho_sq(&self, t: f64) -> f64 {
        let b2 = self.b * self.b;
        if t >= b2 {
            return b2 / 6.0;
        }
        let u = t / b2;
        b2 / 6.0 * u * (3.0 - 3.0 * u + u * u)
    }

    /// ρ'(d)/d at `d = sqrt(t)`.
    #[inline]
    pub fn weight_sq(&self, t: f64) -> f64 {
        let u = t / (self.b * self.b);
        if u >= 1.0 {
            0.0
        } else {
            (1.0 - u) * (1.0 - u)
        }
    }

    fn mean_rho(&self, dist_sq: &[f64], sigma: f64) -> f64 {
        let s2 = sigma * sigma;
        dist_sq.iter().map(|&t| self.rho_sq(t / s2)).sum::<f64>() / dist_sq.len() as f64
    }

    fn initial_scale(&self, dist_sq: &[f64]) -> f64 {
        let m = median(dist_sq).sqrt();
        if m > 0.0 {
            m
        } else {
            dist_sq
                .iter()
                .fold(0.0f64, |a, &t| a.max(t))
                .sqrt()
                .max(f64::MIN_POSITIVE)
        }
    }

    /// A few fixed-point sweeps σ² ← σ²·mean ρ(d/σ)/c; cheap and monotone.
    fn approx_scale(&self, dist_sq: &[f64], init: f64, sweeps: usize) -> f64 {
        let mut s = if init > 0.0 { init } else { self.initial_scale(dist_sq) };
        for _ in 0..sweeps {
            s *= (self.mean_rho(dist_sq, s) / self.c).sqrt();
        }
        s
    }

    /// The M-scale: the σ solving mean ρ(dᵢ/σ) = c, to full precision.
    pub fn scale(&self, dist_sq: &[f64], init: f64) -> f64 {
        let f = |s: f64| self.mean_rho(dist_sq, s) - self.c;
        let mut s0 = if init > 0.0 { init } else { self.initial_scale(dist_sq) };
        let mut s1 = s0;
        // f is non-increasing in σ; bracket a sign change.
        if f(s0) > 0.0 {
            while f(s1) > 0.0 {
                s0 = s1;
                s1 *= 2.0;
            }
        } else {
            while f(s0) <= 0.0 {
                s1 = s0;
                s0 *= 0.5;
                if s0 < f64::MIN_POSITIVE {
                    return s1;
                }
            }
        }
        let (mut lo, mut hi) = (s0, s1);
        let (mut flo, mut fhi) = (f(lo), f(hi));
        let mut side = 0i8;
        for _ in 0..200 {
            // Illinois false position
            let mid = (lo * fhi - hi * flo) / (fhi - flo);
            let mid = if mid > lo && mid < hi { mid } else { 0.5 * (lo + hi) };
            let fm = f(mid);
            if fm == 0.0 {
                return mid;
            }
            if fm > 0.0 {
                lo = mid;
                flo = fm;
                if side == 1 {
                    fhi *= 0.5;
                }
                side = 1;
            } else {
                hi = mid;
                fhi = fm;
                if side == -1 {
                    flo *= 0.5;
                }
                side = -1;
            }
            if hi - lo <= 4.0 * f64::EPSILON * hi {
                break;
            }
        }
        if flo.abs() < fhi.abs() {
            lo
        } else {
            hi
        }
    }
}

#[derive(Debug, Clone)]
struct SCandidate {
    order: usize,
    center: Vector,
    shape: SpdMatrix,
    dist_sq: Vec<f64>,
    sigma: f64,
}

/// One reweighting step; `exact` selects the full-precision scale.
fn i_step(data: &Matrix, tb: &TukeyBiweight, cand: &SCandidate, exact: bool) -> Option<SCandidate> {
    let s2 = cand.sigma * cand.sigma;
    let w: Vec<f64> = cand.dist_sq.iter().map(|&t| tb.weight_sq(t / s2)).collect();
    let positive = w.iter().filter(|&&v| v > 0.0).count();
    if positive <= data.ncols() {
        return None;
    }
    let (center, cov) = weighted_mean_and_scatter(data, &w, None);
    let shape = SpdMatrix::new(&cov).ok()?.normalized_shape();
    let dist_sq = shape.distances_sq(data, center.as_slice());
    let sigma = if exact {
        tb.scale(&dist_sq, cand.sigma)
    } else {
        tb.approx_scale(&dist_sq, cand.sigma, 3)
    };
    Some(SCandidate {
        order: cand.order,
        center,
        shape,
        dist_sq,
        sigma,
    })
}

fn better(a: &SCandidate, b: &SCandidate) -> bool {
    a.sigma < b.sigma || (a.sigma == b.sigma && a.order < b.order)
}

pub fn fit_s_tukey<R: Rng + ?Sized>(data: &Matrix, spec: &EstimatorSpec, rng: &mut R) -> Result<LocationScatter> {
    check_data(data)?;
    let (_, p) = data.shape();
    let tb = TukeyBiweight::for_breakdown(p, spec.breakdown);

    let mut pool: Vec<SCandidate> = Vec::with_capacity(spec.n_refine + 1);
    for order in 0..spec.n_subsamples {
        let Some((_, center, scatter)) = elemental_start(data, rng) else {
            continue;
        };
        let shape = scatter.normalized_shape();
        let dist_sq = shape.distances_sq(data, center.as_slice());
        let sigma = tb.approx_scale(&dist_sq, 0.0, 5);
        let mut cand = SCandidate {
            order,
            center,
            shape,
            dist_sq,
            sigma,
        };
        for _ in 0..2 {
            match i_step(data, &tb, &cand, false) {
                Some(next) => cand = next,
                None => break,
            }
        }
        if pool.len() == spec.n_refine {
            // Its scale can only beat the current worst if ρ-mean at that scale is below c.
            let worst = pool[pool.len() - 1].sigma;
            if tb.mean_rho(&cand.dist_sq, worst) >= tb.c {
                continue;
            }
        }
        cand.sigma = tb.scale(&cand.dist_sq, cand.sigma);
        let pos = pool.iter().position(|c| better(&cand, c)).unwrap_or(pool.len());
        if pos < spec.n_refine {
            pool.insert(pos, cand);
            pool.truncate(spec.n_refine);
        }
    }
    if pool.is_empty() {
        return Err(EstimateError::DegenerateData(
            "no elemental subset produced a nonsingular scatter".into(),
        ));
    }

    let mut best: Option<SCandidate> = None;
    let mut converged_all = true;
    for mut cand in pool {
        let mut converged = false;
        for _ in 0..spec.max_iterations {
            let Some(next) = i_step(data, &tb, &cand, true) else {
                converged = true;
                break;
            };
            if next.sigma >= cand.sigma {
                converged = true;
                break;
            }
            let rel = (cand.sigma - next.sigma) / cand.sigma;
            cand = next;
            if rel < spec.tol {
                converged = true;
                break;
            }
        }
        converged_all &= converged;
        if best.as_ref().is_none_or(|b| better(&cand, b)) {
            best = Some(cand);
        }
    }

    let best = best.expect("pool is non-empty");
    let s2 = best.sigma * best.sigma;
    let n_used = best.dist_sq.iter().filter(|&&t| tb.weight_sq(t / s2) > 0.0).count();
    let mut fit = LocationScatter::new(best.center, best.shape.scaled(s2), n_used, EstimatorKind::STukey);
    fit.converged = converged_all;
    fit.objective = Some(best.sigma);
    Ok(fit)
}

/// `mean ρ(dᵢ) − c` at a fitted location/scatter; zero for an S solution.
pub fn s_constraint_residual(data: &Matrix, fit: &LocationScatter, breakdown: f64) -> f64 {
    let tb = TukeyBiweight::for_breakdown(fit.dim(), breakdown);
    let d = fit.scatter.distances_sq(data, fit.location.as_slice());
    tb.mean_rho(&d, 1.0) - tb.c
}
