use super::{check_data, EstimateError, EstimatorKind, LocationScatter, Result};
use crate::numerics::{mean_and_scatter, Matrix, SpdMatrix};

/// Sample mean and sample scatter with divisor `n`.
pub fn fit_classical(data: &Matrix) -> Result<LocationScatter> {
    check_data(data)?;
    fit_classical_with(data, false)
}

pub(crate) fn fit_classical_with(data: &Matrix, unbiased: bool) -> Result<LocationScatter> {
    let (mean, cov) = mean_and_scatter(data, None, unbiased);
    let scatter =
        SpdMatrix::new(&cov).map_err(|e| EstimateError::DegenerateData(format!("sample scatter is singular ({e})")))?;
    Ok(LocationScatter::new(
        mean,
        scatter,
        data.nrows(),
        EstimatorKind::Classical,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::test_support::*;
    use approx::assert_relative_eq;

    #[test]
    fn one_dimensional() {
        // n > p + 1 needs three points in 1-D.
        let f = fit_classical(&Matrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0])).unwrap();
        assert_eq!(f.location[0], 1.0);
        assert_relative_eq!(f.scatter.matrix()[(0, 0)], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn two_distinct_values() {
        // {a, a, b, b}: mean (a+b)/2, scatter (a-b)²/4
        let (a, b) = (1.5, -2.5);
        let f = fit_classical(&Matrix::from_row_slice(4, 1, &[a, b, a, b])).unwrap();
        assert_relative_eq!(f.location[0], (a + b) / 2.0);
        assert_relative_eq!(f.scatter.matrix()[(0, 0)], (a - b).powi(2) / 4.0);
    }

    #[test]
    fn duplicated_point_is_degenerate() {
        let data = Matrix::from_row_slice(4, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert!(matches!(fit_classical(&data), Err(EstimateError::DegenerateData(_))));
    }

    #[test]
    fn exactly_equivariant() {
        let data = normal_data(50, 3, 2);
        let (a, b) = test_affine();
        let f = fit_classical(&data).unwrap();
        let fa = fit_classical(&affine(&data, &a, &b)).unwrap();
        assert_equivariant(&fa, &f, &a, &b, 1e-12);
    }
}
