//! Location/scatter estimators: the classical sample moments and six robust
//! alternatives (Winsorized, MVE, MCD, Huber M, Tukey-biweight S and
//! Stahel–Donoho).
//!
//! Every estimator is a pure function of `(data, spec, rng)`. Random draws are
//! made by row index only, so applying an affine map to the data while reusing
//! the seed reproduces the same subsets and directions.

mod classical;
mod m_huber;
mod mcd;
mod mve;
mod s_tukey;
mod sd;
pub(crate) mod select;
mod winsorized;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{Matrix, NumericsError, SpdMatrix, Vector};

pub use classical::fit_classical;
pub use m_huber::{default_huber_k, fit_m_huber, huber_normalizer, huber_residuals, HuberResiduals};
pub use mcd::{c_step, fit_mcd, mcd_consistency_factor};
pub use mve::{fit_mve, mve_objective};
pub use s_tukey::{fit_s_tukey, s_constraint_residual, TukeyBiweight};
pub use sd::{default_directions, fit_sd, outlyingness};
pub use winsorized::{fit_winsorized, winsorize};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimateError {
    #[error("too few observations: n = {n} but need more than p + 1 = {}", p + 1)]
    TooFewObservations { n: usize, p: usize },
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("invalid estimator settings: {0}")]
    InvalidSpec(String),
    #[error("data contains non-finite values")]
    NonFinite,
}

impl From<NumericsError> for EstimateError {
    fn from(e: NumericsError) -> Self {
        EstimateError::DegenerateData(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, EstimateError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Classical,
    Winsorized,
    Mve,
    Mcd,
    MHuber,
    STukey,
    Sd,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 7] = [
        EstimatorKind::Classical,
        EstimatorKind::Winsorized,
        EstimatorKind::Mve,
        EstimatorKind::Mcd,
        EstimatorKind::MHuber,
        EstimatorKind::STukey,
        EstimatorKind::Sd,
    ];

    /// Short label used in reports; the classical fit is reported as plain GQDA.
    pub fn label(self) -> &'static str {
        match self {
            EstimatorKind::Classical => "GQDA",
            EstimatorKind::Winsorized => "W",
            EstimatorKind::Mve => "MVE",
            EstimatorKind::Mcd => "MCD",
            EstimatorKind::MHuber => "M",
            EstimatorKind::STukey => "S",
            EstimatorKind::Sd => "SD",
        }
    }

    pub fn is_robust(self) -> bool {
        self != EstimatorKind::Classical
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for EstimatorKind {
    type Err = EstimateError;

    fn from_str(s: &str) -> Result<Self> {
        let kind = match s.trim().to_ascii_lowercase().as_str() {
            "classical" | "gqda" => EstimatorKind::Classical,
            "w" | "winsorized" | "winsor" => EstimatorKind::Winsorized,
            "mve" => EstimatorKind::Mve,
            "mcd" => EstimatorKind::Mcd,
            "m" | "m_huber" | "huber" => EstimatorKind::MHuber,
            "s" | "s_tukey" | "tukey" => EstimatorKind::STukey,
            "sd" | "stahel_donoho" => EstimatorKind::Sd,
            other => return Err(EstimateError::InvalidSpec(format!("unknown estimator `{other}`"))),
        };
        Ok(kind)
    }
}

/// Estimator selection plus tuning constants. Fields irrelevant to `kind`
/// are ignored. `None` means "derive the default from n and p".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    /// Per-coordinate tail fraction replaced by Winsorization.
    pub winsor_fraction: f64,
    /// Coverage `h` for MVE/MCD; default `⌊(n+p+1)/2⌋`.
    pub subset_size: Option<usize>,
    /// Random elemental starts for MVE, MCD and S.
    pub n_subsamples: usize,
    /// Best starts carried to full convergence (MCD and S).
    pub n_refine: usize,
    /// Huber clipping constant; default `sqrt(χ²_p(0.95))`.
    pub huber_k: Option<f64>,
    /// S-estimator breakdown target in (0, 0.5].
    pub breakdown: f64,
    /// SD projection directions; default `max(1000, 200p) + min(n(n-1)/2, 1000)`.
    pub n_directions: Option<usize>,
    /// SD fraction of most outlying points given zero weight.
    pub trim_fraction: f64,
    pub tol: f64,
    pub max_iterations: usize,
    /// Classical scatter divisor `n - 1` instead of `n`.
    pub unbiased: bool,
}

impl Default for EstimatorSpec {
    fn default() -> Self {
        EstimatorSpec {
            kind: EstimatorKind::Classical,
            winsor_fraction: 0.1,
            subset_size: None,
            n_subsamples: 500,
            n_refine: 10,
            huber_k: None,
            breakdown: 0.5,
            n_directions: None,
            trim_fraction: 0.05,
            tol: 1e-8,
            max_iterations: 200,
            unbiased: false,
        }
    }
}

impl EstimatorSpec {
    pub fn new(kind: EstimatorKind) -> Self {
        EstimatorSpec {
            kind,
            ..Default::default()
        }
    }

    pub fn label(&self) -> &'static str {
        self.kind.label()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(EstimateError::InvalidSpec(msg));
        if !(0.0..0.5).contains(&self.winsor_fraction) {
            return bad(format!("winsor_fraction {} outside [0, 0.5)", self.winsor_fraction));
        }
        if !(0.0..0.5).contains(&self.trim_fraction) {
            return bad(format!("trim_fraction {} outside [0, 0.5)", self.trim_fraction));
        }
        if !(self.breakdown > 0.0 && self.breakdown <= 0.5) {
            return bad(format!("breakdown {} outside (0, 0.5]", self.breakdown));
        }
        if self.n_subsamples == 0 || self.n_refine == 0 || self.max_iterations == 0 {
            return bad("iteration and subsample counts must be at least 1".into());
        }
        if let Some(k) = self.huber_k {
            if !(k > 0.0) {
                return bad(format!("huber_k must be positive, got {k}"));
            }
        }
        if self.n_directions == Some(0) {
            return bad("n_directions must be at least 1".into());
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive".into());
        }
        Ok(())
    }

    /// Coverage for MVE/MCD on an `n × p` sample.
    pub fn coverage(&self, n: usize, p: usize) -> Result<usize> {
        let low = (n + p + 1) / 2;
        let h = self.subset_size.unwrap_or(low);
        if h < low || h > n {
            return Err(EstimateError::InvalidSpec(format!(
                "subset_size {h} outside [{low}, {n}]"
            )));
        }
        Ok(h)
    }
}

impl FromStr for EstimatorSpec {
    type Err = EstimateError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(EstimatorSpec::new(s.parse()?))
    }
}

/// A fitted location vector and scatter matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationScatter {
    pub location: Vector,
    pub scatter: SpdMatrix,
    /// Observations retained (or carrying non-zero weight) in the final fit.
    pub n_used: usize,
    pub estimator: EstimatorKind,
    /// False when an iterative estimator hit its iteration cap.
    pub converged: bool,
    /// Estimator-specific criterion at the solution: raw log-determinant for
    /// MCD, log squared volume for MVE, the S-scale for S.
    pub objective: Option<f64>,
}

impl LocationScatter {
    pub fn new(location: Vector, scatter: SpdMatrix, n_used: usize, estimator: EstimatorKind) -> Self {
        LocationScatter {
            location,
            scatter,
            n_used,
            estimator,
            converged: true,
            objective: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.location.len()
    }
}

/// Fit `spec` to the rows of `data` (n × p).
pub fn fit<R: Rng + ?Sized>(data: &Matrix, spec: &EstimatorSpec, rng: &mut R) -> Result<LocationScatter> {
    spec.validate()?;
    check_data(data)?;
    match spec.kind {
        EstimatorKind::Classical => classical::fit_classical_with(data, spec.unbiased),
        EstimatorKind::Winsorized => fit_winsorized(data, spec.winsor_fraction),
        EstimatorKind::Mve => fit_mve(data, spec, rng),
        EstimatorKind::Mcd => fit_mcd(data, spec, rng),
        EstimatorKind::MHuber => fit_m_huber(data, spec),
        EstimatorKind::STukey => fit_s_tukey(data, spec, rng),
        EstimatorKind::Sd => fit_sd(data, spec, rng),
    }
}

pub(crate) fn check_data(data: &Matrix) -> Result<()> {
    let (n, p) = data.shape();
    if p == 0 || n <= p + 1 {
        return Err(EstimateError::TooFewObservations { n, p });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(EstimateError::NonFinite);
    }
    Ok(())
}

/// χ²_k distribution function.
pub(crate) fn chi2_cdf(df: f64, x: f64) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    if x <= 0.0 {
        return 0.0;
    }
    ChiSquared::new(df).expect("positive degrees of freedom").cdf(x)
}

/// χ²_k quantile function.
pub(crate) fn chi2_quantile(df: f64, prob: f64) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    ChiSquared::new(df)
        .expect("positive degrees of freedom")
        .inverse_cdf(prob)
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    pub fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    pub fn normal_data(n: usize, p: usize, seed: u64) -> Matrix {
        let mut r = rng(seed);
        Matrix::from_fn(n, p, |_, _| r.sample(StandardNormal))
    }

    /// Apply `x ↦ A x + b` to every row.
    pub fn affine(data: &Matrix, a: &Matrix, b: &Vector) -> Matrix {
        let mut out = data * a.transpose();
        for mut row in out.row_iter_mut() {
            row += b.transpose();
        }
        out
    }

    pub fn assert_equivariant(fit_a: &LocationScatter, fit: &LocationScatter, a: &Matrix, b: &Vector, tol: f64) {
        let loc = a * &fit.location + b;
        let scat = a * fit.scatter.matrix() * a.transpose();
        let dl = (&fit_a.location - &loc).norm() / loc.norm().max(1.0);
        let ds = (fit_a.scatter.matrix() - &scat).norm() / scat.norm();
        assert!(dl < tol, "location not equivariant: {dl:e}");
        assert!(ds < tol, "scatter not equivariant: {ds:e}");
    }

    pub fn test_affine() -> (Matrix, Vector) {
        let a = Matrix::from_row_slice(3, 3, &[2.0, 0.5, -0.3, 0.1, 1.5, 0.4, -0.7, 0.2, 3.0]);
        let b = Vector::from_vec(vec![10.0, -4.0, 2.5]);
        (a, b)
    }
}
