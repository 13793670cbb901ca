use super::{check_data, classical::fit_classical_with, EstimateError, EstimatorKind, LocationScatter, Result};
use crate::numerics::Matrix;

/// Coordinatewise Winsorization: in each column the `⌊γn⌋` smallest values are
/// replaced by the smallest retained value and the `⌊γn⌋` largest by the
/// largest retained value.
pub fn winsorize(data: &Matrix, fraction: f64) -> Matrix {
    let n = data.nrows();
    let g = (fraction * n as f64).floor() as usize;
    let mut out = data.clone();
    if g == 0 {
        return out;
    }
    let mut sorted = Vec::with_capacity(n);
    for j in 0..data.ncols() {
        sorted.clear();
        sorted.extend(data.column(j).iter().copied());
        sorted.sort_by(f64::total_cmp);
        let (lo, hi) = (sorted[g], sorted[n - 1 - g]);
        for v in out.column_mut(j).iter_mut() {
            *v = v.clamp(lo, hi);
        }
    }
    out
}

/// Classical moments of the Winsorized sample.
pub fn fit_winsorized(data: &Matrix, fraction: f64) -> Result<LocationScatter> {
    check_data(data)?;
    if !(0.0..0.5).contains(&fraction) {
        return Err(EstimateError::InvalidSpec(format!(
            "winsor_fraction {fraction} outside [0, 0.5)"
        )));
    }
    let mut fit = fit_classical_with(&winsorize(data, fraction), false)?;
    fit.estimator = EstimatorKind::Winsorized;
    Ok(fit)
}
