//! Least squares with an optional ridge penalty on the slope coefficients.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::Result;
use crate::linalg::{solve_spd, xtwy, xtx};
use crate::scalar::Scalar;

#[derive(Debug)]
pub struct LinearModel<S: Scalar> {
    pub intercept: S,
    pub coef: Array1<S>,
    pub ridge_fallback: bool,
}

impl<S: Scalar> LinearModel<S> {
    /// Solves the penalized normal equations. The intercept is never
    /// penalized; `lambda = 0` gives plain least squares with an automatic
    /// tiny-ridge fallback when the Gram matrix is singular.
    pub fn fit(x: ArrayView2<S>, y: ArrayView1<S>, lambda: f64) -> Result<Self> {
        let n = x.nrows();
        let p = x.ncols();
        // Design with a leading intercept column.
        let mut design = Array2::<S>::ones((n, p + 1));
        design
            .slice_mut(ndarray::s![.., 1..])
            .assign(&x);
        let mut gram = xtx(design.view());
        let lam = S::of_f64(lambda);
        for j in 1..=p {
            gram[[j, j]] += lam;
        }
        let rhs = xtwy(design.view(), y, None);
        let solved = solve_spd(&gram, rhs.view(), "least squares normal equations")?;
        let beta = solved.value;
        Ok(Self {
            intercept: beta[0],
            coef: beta.slice(ndarray::s![1..]).to_owned(),
            ridge_fallback: solved.ridge_fallback,
        })
    }

    pub fn predict(&self, x: ArrayView2<S>) -> Array1<S> {
        let mut out = x.dot(&self.coef);
        out.mapv_inplace(|v| v + self.intercept);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn recovers_exact_linear_relationship() {
        let x = array![[0.0, 1.0], [1.0, 0.0], [2.0, 3.0], [4.0, 1.0], [5.0, 5.0]];
        let y = x.column(0).mapv(|v: f64| 2.0 * v) - x.column(1).mapv(|v| 0.5 * v) + 3.0;
        let m = LinearModel::fit(x.view(), y.view(), 0.0).unwrap();
        assert_abs_diff_eq!(m.intercept, 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(m.coef[0], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(m.coef[1], -0.5, epsilon = 1e-9);
        assert!(!m.ridge_fallback);
        let pred = m.predict(x.view());
        for (p, t) in pred.iter().zip(y.iter()) {
            assert_abs_diff_eq!(p, t, epsilon = 1e-9);
        }
    }

    #[test]
    fn matches_hand_solved_normal_equations() {
        // One regressor: slope = Sxy / Sxx around means.
        let x = array![[1.0], [2.0], [3.0], [4.0]];
        let y = array![2.0, 2.5, 4.0, 4.1];
        let xbar = 2.5;
        let ybar = 3.15;
        let sxy: f64 = x
            .column(0)
            .iter()
            .zip(y.iter())
            .map(|(&a, &b)| (a - xbar) * (b - ybar))
            .sum();
        let sxx: f64 = x.column(0).iter().map(|&a| (a - xbar) * (a - xbar)).sum();
        let m = LinearModel::fit(x.view(), y.view(), 0.0).unwrap();
        assert_abs_diff_eq!(m.coef[0], sxy / sxx, epsilon = 1e-10);
        assert_abs_diff_eq!(m.intercept, ybar - sxy / sxx * xbar, epsilon = 1e-10);
    }

    #[test]
    fn collinear_columns_trigger_fallback_with_finite_output() {
        let x: ndarray::Array2<f64> = array![
            [1.0, 2.0],
            [2.0, 4.0],
            [3.0, 6.0],
            [4.0, 8.0],
            [5.0, 10.0]
        ];
        let y = array![1.0, 2.0, 3.0, 4.0, 5.0];
        let m = LinearModel::fit(x.view(), y.view(), 0.0).unwrap();
        assert!(m.ridge_fallback);
        let pred = m.predict(x.view());
        for (p, t) in pred.iter().zip(y.iter()) {
            assert!(p.is_finite());
            assert_abs_diff_eq!(p, t, epsilon = 1e-3);
        }
    }

    #[test]
    fn huge_penalty_shrinks_slopes_toward_zero_and_fit_toward_mean() {
        let x: ndarray::Array2<f64> = array![[1.0], [2.0], [3.0], [4.0]];
        let y = array![1.0, 3.0, 2.0, 6.0];
        let m = LinearModel::fit(x.view(), y.view(), 1e12).unwrap();
        assert!(m.coef[0].abs() < 1e-6);
        let ybar = y.mean().unwrap();
        assert_abs_diff_eq!(m.intercept, ybar, epsilon = 1e-6);
    }

    #[test]
    fn zero_columns_fit_intercept_only() {
        let x = Array2::<f64>::zeros((3, 0));
        let y = array![1.0, 2.0, 6.0];
        let m = LinearModel::fit(x.view(), y.view(), 0.0).unwrap();
        assert_abs_diff_eq!(m.intercept, 3.0, epsilon = 1e-12);
        let pred = m.predict(x.view());
        assert_eq!(pred.len(), 3);
        assert_abs_diff_eq!(pred[0], 3.0, epsilon = 1e-12);
    }
}
