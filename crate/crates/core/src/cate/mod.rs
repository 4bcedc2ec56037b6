//! Conditional effect curves: basis projections of orthogonal score
//! contributions, with pointwise multiplier-bootstrap confidence bands.
//!
//! The workflow is `build_*_basis` → [`project_scores`] → [`cate_predict`]
//! or [`multiplier_bootstrap_band`]. Projecting the per-lot score
//! contributions onto a small basis gives the best linear approximation of
//! the effect curve in that basis, with heteroskedasticity-robust inference
//! for the coefficients.

mod bspline;

pub use bspline::SplineBasis;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{invert_spd, quad_form, xtwx, xtwy, xtx};
use crate::rng::rng_for;
use crate::scalar::Scalar;
use crate::stats::quantile;

/// Default tail mass per side for bootstrap bands.
pub const DEFAULT_BAND_ALPHA: f64 = 0.05;
/// Default bootstrap replicate count.
pub const DEFAULT_N_BOOT: usize = 1000;
/// Bands built from fewer replicates than this are flagged as noisy.
pub const LOW_REPLICATE_FLOOR: usize = 100;

/// Exact-match basis over the distinct values of a discrete variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorBasis<S: Scalar> {
    /// Distinct levels, ascending.
    pub levels: Vec<S>,
}

/// Basis family for projecting scores onto conditioning variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CateBasis<S: Scalar> {
    /// One-dimensional clamped B-spline.
    Spline(SplineBasis<S>),
    /// Tensor product of two axis splines. Column `ix * y.df() + iy` holds
    /// the product of the `ix`-th x-function and the `iy`-th y-function.
    Tensor { x: SplineBasis<S>, y: SplineBasis<S> },
    /// Saturated indicator basis over discrete levels.
    Indicator(IndicatorBasis<S>),
}

/// One-dimensional spline basis fitted to a data column.
pub fn build_spline_basis<S: Scalar>(
    z: ArrayView1<S>,
    degree: usize,
    df: usize,
) -> Result<CateBasis<S>> {
    Ok(CateBasis::Spline(SplineBasis::from_data(z, degree, df)?))
}

/// Tensor-product basis over two data columns, same degree and df per axis.
pub fn build_tensor_basis<S: Scalar>(
    zx: ArrayView1<S>,
    zy: ArrayView1<S>,
    degree: usize,
    df: usize,
) -> Result<CateBasis<S>> {
    Ok(CateBasis::Tensor {
        x: SplineBasis::from_data(zx, degree, df)?,
        y: SplineBasis::from_data(zy, degree, df)?,
    })
}

/// Saturated indicator basis over the distinct values of `z`.
pub fn build_indicator_basis<S: Scalar>(z: ArrayView1<S>) -> Result<CateBasis<S>> {
    if z.is_empty() {
        return Err(Error::Validation(
            "cannot build an indicator basis from no data".into(),
        ));
    }
    let mut levels = Vec::with_capacity(z.len());
    for (i, &v) in z.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: format!("collecting indicator levels (row {i})"),
            });
        }
        levels.push(v);
    }
    levels.sort_by(|a, b| a.partial_cmp(b).expect("finite values order totally"));
    levels.dedup();
    Ok(CateBasis::Indicator(IndicatorBasis { levels }))
}

impl<S: Scalar> CateBasis<S> {
    /// Number of conditioning variables this basis consumes.
    pub fn arity(&self) -> usize {
        match self {
            CateBasis::Spline(_) | CateBasis::Indicator(_) => 1,
            CateBasis::Tensor { .. } => 2,
        }
    }

    /// Number of design columns.
    pub fn n_columns(&self) -> usize {
        match self {
            CateBasis::Spline(s) => s.df(),
            CateBasis::Tensor { x, y } => x.df() * y.df(),
            CateBasis::Indicator(ind) => ind.levels.len(),
        }
    }

    /// Expands `z` (rows × arity) into the design matrix, along with a
    /// per-row flag for points clamped onto the basis boundary.
    pub fn design(&self, z: ArrayView2<S>) -> Result<(Array2<S>, Vec<bool>)> {
        if z.ncols() != self.arity() {
            return Err(Error::Shape(format!(
                "basis consumes {} conditioning columns, got {}",
                self.arity(),
                z.ncols()
            )));
        }
        let n = z.nrows();
        let mut design = Array2::zeros((n, self.n_columns()));
        let mut clamped = vec![false; n];
        match self {
            CateBasis::Spline(s) => {
                let mut row = vec![S::zero(); s.df()];
                for i in 0..n {
                    clamped[i] = s.eval_into(z[[i, 0]], &mut row)?;
                    for (j, &v) in row.iter().enumerate() {
                        design[[i, j]] = v;
                    }
                }
            }
            CateBasis::Tensor { x, y } => {
                let mut bx = vec![S::zero(); x.df()];
                let mut by = vec![S::zero(); y.df()];
                for i in 0..n {
                    let cx = x.eval_into(z[[i, 0]], &mut bx)?;
                    let cy = y.eval_into(z[[i, 1]], &mut by)?;
                    clamped[i] = cx || cy;
                    for (ix, &vx) in bx.iter().enumerate() {
                        for (iy, &vy) in by.iter().enumerate() {
                            design[[i, ix * y.df() + iy]] = vx * vy;
                        }
                    }
                }
            }
            CateBasis::Indicator(ind) => {
                for i in 0..n {
                    let v = z[[i, 0]];
                    if !v.is_finite() {
                        return Err(Error::NonFinite {
                            context: format!("matching indicator levels (row {i})"),
                        });
                    }
                    let idx = ind
                        .levels
                        .binary_search_by(|l| l.partial_cmp(&v).expect("finite levels"))
                        .map_err(|_| {
                            Error::DegenerateSupport(format!(
                                "value {} matches none of the {} indicator levels",
                                v.as_f64(),
                                ind.levels.len()
                            ))
                        })?;
                    design[[i, idx]] = S::one();
                }
            }
        }
        Ok((design, clamped))
    }
}

/// Basis projection of score contributions onto conditioning variables.
///
/// Serialization keeps the coefficient-level summary (basis, `beta`, `vcov`)
/// and drops the training design and residuals, so a deserialized fit can
/// still predict but cannot grow new bootstrap bands.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CateFit<S: Scalar> {
    pub basis: CateBasis<S>,
    pub beta: Array1<S>,
    /// HC0 sandwich covariance of `beta`.
    pub vcov: Array2<S>,
    /// Names of the conditioning columns, one per basis axis.
    pub z_columns: Vec<String>,
    /// Training rows.
    pub n: usize,
    /// Training rows that fell outside the basis boundary and were clamped.
    pub clamped_rows: usize,
    /// Normal equations needed the ridge fallback (collinear basis columns).
    pub ridge_fallback: bool,
    #[serde(skip, default = "empty_matrix")]
    pub design: Array2<S>,
    #[serde(skip, default = "empty_vector")]
    pub residuals: Array1<S>,
    #[serde(skip, default = "empty_matrix")]
    pub xtx_inv: Array2<S>,
}

fn empty_matrix<S: Scalar>() -> Array2<S> {
    Array2::zeros((0, 0))
}

fn empty_vector<S: Scalar>() -> Array1<S> {
    Array1::zeros(0)
}

impl<S: Scalar> CateFit<S> {
    /// Whether the training design and residuals are still attached. False
    /// after deserialization, which drops them.
    pub fn has_residuals(&self) -> bool {
        self.n > 0 && self.residuals.len() == self.n && self.design.nrows() == self.n
    }
}

/// Projects per-row score contributions onto the basis by least squares.
///
/// Coefficients solve the normal equations; the covariance is the HC0
/// sandwich, so pointwise standard errors stay valid under heteroskedastic
/// scores.
pub fn project_scores<S: Scalar>(
    psi_b: ArrayView1<S>,
    basis: &CateBasis<S>,
    z: ArrayView2<S>,
    z_columns: &[&str],
) -> Result<CateFit<S>> {
    let n = psi_b.len();
    if n != z.nrows() {
        return Err(Error::Shape(format!(
            "{} score rows but {} conditioning rows",
            n,
            z.nrows()
        )));
    }
    if n == 0 {
        return Err(Error::Validation("cannot project zero rows".into()));
    }
    if z_columns.len() != basis.arity() {
        return Err(Error::Shape(format!(
            "basis consumes {} conditioning columns but {} names were given",
            basis.arity(),
            z_columns.len()
        )));
    }
    for (i, &v) in psi_b.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: format!("reading score contributions (row {i})"),
            });
        }
    }
    let (design, clamp_flags) = basis.design(z)?;
    let clamped_rows = clamp_flags.iter().filter(|&&c| c).count();
    let gram = xtx(design.view());
    let solution = invert_spd(&gram, "inverting the basis normal equations")?;
    let xtx_inv = solution.value;
    let beta: Array1<S> = xtx_inv.dot(&xtwy(design.view(), psi_b, None));
    let fitted = design.dot(&beta);
    let residuals = &psi_b.to_owned() - &fitted;
    let weights = residuals.mapv(|e| e * e);
    let meat = xtwx(design.view(), Some(weights.view()));
    let sandwich = xtx_inv.dot(&meat).dot(&xtx_inv);
    // Symmetrize away the last-bit drift from the two-sided product.
    let half = S::of_f64(0.5);
    let vcov = (&sandwich + &sandwich.t()).mapv(|v| v * half);
    Ok(CateFit {
        basis: basis.clone(),
        beta,
        vcov,
        z_columns: z_columns.iter().map(|c| c.to_string()).collect(),
        n,
        clamped_rows,
        ridge_fallback: solution.ridge_fallback,
        design,
        residuals,
        xtx_inv,
    })
}

/// Pointwise effect predictions with standard errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatePrediction<S: Scalar> {
    pub theta: Array1<S>,
    pub std_err: Array1<S>,
    /// Rows clamped onto the basis boundary before evaluation.
    pub clamped: Vec<bool>,
}

/// Evaluates the fitted effect curve at new conditioning rows.
pub fn cate_predict<S: Scalar>(fit: &CateFit<S>, z: ArrayView2<S>) -> Result<CatePrediction<S>> {
    let (design, clamped) = fit.basis.design(z)?;
    let theta = design.dot(&fit.beta);
    let mut std_err = Array1::zeros(design.nrows());
    for i in 0..design.nrows() {
        let variance = quad_form(&fit.vcov, design.row(i));
        std_err[i] = variance.max(S::zero()).sqrt();
    }
    Ok(CatePrediction {
        theta,
        std_err,
        clamped,
    })
}

/// Pointwise confidence band over a grid of conditioning values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfidenceBand<S: Scalar> {
    /// Evaluation points, one row per grid point (one or two columns).
    pub grid: Array2<S>,
    pub estimate: Array1<S>,
    pub lower: Array1<S>,
    pub upper: Array1<S>,
    /// Tail mass per side: the band spans the `alpha` and `1 - alpha`
    /// replicate quantiles, so it holds total level `2 * alpha` pointwise.
    pub alpha: f64,
    pub n_boot: usize,
    /// Fewer replicates than [`LOW_REPLICATE_FLOOR`]: quantiles are noisy,
    /// the band is reported anyway.
    pub low_replicates: bool,
    pub z_columns: Vec<String>,
}

/// Gaussian multiplier bootstrap band for the projected effect curve.
///
/// Each replicate perturbs the fit by refitting against `xi * residual`
/// noise with standard normal multipliers `xi`, then the band takes
/// pointwise replicate quantiles. Deterministic given `seed`; replicates are
/// seeded independently, so the parallel schedule cannot change results.
pub fn multiplier_bootstrap_band<S: Scalar>(
    fit: &CateFit<S>,
    grid: ArrayView2<S>,
    alpha: f64,
    n_boot: usize,
    seed: u64,
) -> Result<ConfidenceBand<S>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!(
            "band alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if n_boot == 0 {
        return Err(Error::Parameter(
            "need at least one bootstrap replicate".into(),
        ));
    }
    if grid.nrows() == 0 {
        return Err(Error::Validation("band grid is empty".into()));
    }
    if !fit.has_residuals() {
        return Err(Error::Validation(
            "fit carries no residuals (serialization drops them); refit before bootstrapping"
                .into(),
        ));
    }
    let (grid_design, _) = fit.basis.design(grid)?;
    let estimate = grid_design.dot(&fit.beta);
    let n = fit.n;
    let curves: Vec<Array1<S>> = (0..n_boot)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_for(seed, "boot", r as u64);
            let mut noise = Array1::<S>::zeros(n);
            for i in 0..n {
                let xi: f64 = rng.sample(StandardNormal);
                noise[i] = fit.residuals[i] * S::of_f64(xi);
            }
            let shift = fit.xtx_inv.dot(&xtwy(fit.design.view(), noise.view(), None));
            let beta_star = &fit.beta + &shift;
            grid_design.dot(&beta_star)
        })
        .collect();
    let points = grid.nrows();
    let mut lower = Array1::zeros(points);
    let mut upper = Array1::zeros(points);
    let mut column: Vec<S> = Vec::with_capacity(n_boot);
    for j in 0..points {
        column.clear();
        column.extend(curves.iter().map(|c| c[j]));
        // Clamp so the band always contains the estimate, even when every
        // replicate lands on one side.
        lower[j] = quantile(&column, alpha).min(estimate[j]);
        upper[j] = quantile(&column, 1.0 - alpha).max(estimate[j]);
    }
    Ok(ConfidenceBand {
        grid: grid.to_owned(),
        estimate,
        lower,
        upper,
        alpha,
        n_boot,
        low_replicates: n_boot < LOW_REPLICATE_FLOOR,
        z_columns: fit.z_columns.clone(),
    })
}

/// Linear interpolation of the band's lower curve at `z`.
///
/// Conservative policies treat only where this bound clears the cost, so the
/// query must stay inside the grid; extrapolating a confidence bound would
/// fabricate certainty where there is none.
pub fn cate_lower_bound<S: Scalar>(band: &ConfidenceBand<S>, z: S) -> Result<S> {
    if band.grid.ncols() != 1 {
        return Err(Error::Parameter(
            "lower-bound interpolation needs a one-dimensional grid".into(),
        ));
    }
    if band.grid.nrows() == 0 {
        return Err(Error::Validation("band grid is empty".into()));
    }
    if !z.is_finite() {
        return Err(Error::NonFinite {
            context: "interpolating the lower band".into(),
        });
    }
    let xs = band.grid.column(0);
    for w in 0..xs.len().saturating_sub(1) {
        if xs[w] > xs[w + 1] {
            return Err(Error::Validation(
                "band grid must be sorted ascending".into(),
            ));
        }
    }
    let lo = xs[0];
    let hi = xs[xs.len() - 1];
    if z < lo || z > hi {
        return Err(Error::Extrapolation {
            value: z.as_f64(),
            lo: lo.as_f64(),
            hi: hi.as_f64(),
        });
    }
    let mut j = 0;
    while xs[j] < z {
        j += 1;
    }
    if xs[j] == z {
        return Ok(band.lower[j]);
    }
    // xs[j-1] < z < xs[j], so the bracket has positive width.
    let t = (z - xs[j - 1]) / (xs[j] - xs[j - 1]);
    Ok(band.lower[j - 1] + t * (band.lower[j] - band.lower[j - 1]))
}

/// Evenly spaced one-column grid over `[lo, hi]`, endpoints included.
pub fn grid_1d<S: Scalar>(lo: S, hi: S, points: usize) -> Result<Array2<S>> {
    if points < 2 {
        return Err(Error::Parameter("grid needs at least 2 points".into()));
    }
    if !(lo < hi) {
        return Err(Error::Parameter(format!(
            "grid needs lo < hi, got [{}, {}]",
            lo.as_f64(),
            hi.as_f64()
        )));
    }
    let mut grid = Array2::zeros((points, 1));
    let step = (hi - lo) / S::of_usize(points - 1);
    for i in 0..points {
        grid[[i, 0]] = lo + step * S::of_usize(i);
    }
    grid[[points - 1, 0]] = hi;
    Ok(grid)
}

/// Row-major two-column grid over a rectangle: the first axis varies
/// slowest, `points` values per axis.
pub fn grid_2d<S: Scalar>(x: (S, S), y: (S, S), points: usize) -> Result<Array2<S>> {
    let gx = grid_1d(x.0, x.1, points)?;
    let gy = grid_1d(y.0, y.1, points)?;
    let mut grid = Array2::zeros((points * points, 2));
    for i in 0..points {
        for j in 0..points {
            grid[[i * points + j, 0]] = gx[[i, 0]];
            grid[[i * points + j, 1]] = gy[[j, 0]];
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use proptest::prelude::*;
    use rand::Rng;

    use crate::rng::rng_for;
    use crate::stats::{mean, normal_quantile, sample_sd};

    fn column(values: Vec<f64>) -> Array2<f64> {
        let n = values.len();
        Array2::from_shape_vec((n, 1), values).unwrap()
    }

    fn random_column(n: usize, lo: f64, hi: f64, seed: u64) -> Array1<f64> {
        let mut rng = rng_for(seed, "cate-test", 0);
        Array1::from_iter((0..n).map(|_| rng.gen_range(lo..hi)))
    }

    /// Gaussian elimination with partial pivoting, independent of linalg.
    fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            a.swap(col, pivot);
            b.swap(col, pivot);
            for row in (col + 1)..n {
                let f = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let mut acc = b[row];
            for k in (row + 1)..n {
                acc -= a[row][k] * x[k];
            }
            x[row] = acc / a[row][row];
        }
        x
    }

    #[test]
    fn tensor_design_factorizes_into_axis_products() {
        let zx = random_column(300, -1.0, 2.0, 5);
        let zy = random_column(300, 10.0, 30.0, 6);
        let basis = build_tensor_basis(zx.view(), zy.view(), 2, 5).unwrap();
        assert_eq!(basis.n_columns(), 25);
        assert_eq!(basis.arity(), 2);
        let CateBasis::Tensor { x, y } = &basis else {
            panic!("expected tensor basis");
        };
        let probe = array![[0.4, 17.0], [1.9, 10.5]];
        let (design, clamped) = basis.design(probe.view()).unwrap();
        assert_eq!(clamped, vec![false, false]);
        let mut bx = vec![0.0; 5];
        let mut by = vec![0.0; 5];
        for row in 0..probe.nrows() {
            x.eval_into(probe[[row, 0]], &mut bx).unwrap();
            y.eval_into(probe[[row, 1]], &mut by).unwrap();
            let mut sum = 0.0;
            for ix in 0..5 {
                for iy in 0..5 {
                    let got = design[[row, ix * 5 + iy]];
                    assert!((got - bx[ix] * by[iy]).abs() < 1e-14);
                    sum += got;
                }
            }
            // Product of two partitions of unity is again one.
            assert!((sum - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn grid_2d_orders_first_axis_slowest() {
        let grid = grid_2d((0.0, 1.0), (5.0, 7.0), 3).unwrap();
        assert_eq!(grid.nrows(), 9);
        assert_eq!(grid.row(0).to_vec(), vec![0.0, 5.0]);
        assert_eq!(grid.row(1).to_vec(), vec![0.0, 6.0]);
        assert_eq!(grid.row(3).to_vec(), vec![0.5, 5.0]);
        assert_eq!(grid.row(8).to_vec(), vec![1.0, 7.0]);
    }

    #[test]
    fn projection_matches_gauss_elimination_oracle() {
        let z = random_column(60, 0.0, 4.0, 21);
        let mut rng = rng_for(22, "cate-test", 1);
        let psi = Array1::from_iter((0..60).map(|_| rng.gen_range(-2.0..3.0)));
        let basis = build_spline_basis(z.view(), 3, 5).unwrap();
        let z2 = column(z.to_vec());
        let fit = project_scores(psi.view(), &basis, z2.view(), &["z"]).unwrap();
        assert!(!fit.ridge_fallback);

        let b = &fit.design;
        let p = b.ncols();
        let mut gram = vec![vec![0.0; p]; p];
        let mut rhs = vec![0.0; p];
        for i in 0..60 {
            for a in 0..p {
                rhs[a] += b[[i, a]] * psi[i];
                for c in 0..p {
                    gram[a][c] += b[[i, a]] * b[[i, c]];
                }
            }
        }
        let oracle = gauss_solve(gram, rhs);
        for a in 0..p {
            assert!(
                (fit.beta[a] - oracle[a]).abs() < 1e-8,
                "beta[{a}] = {} vs oracle {}",
                fit.beta[a],
                oracle[a]
            );
        }

        // Least squares leaves residuals orthogonal to every column.
        for a in 0..p {
            let dot: f64 = (0..60).map(|i| b[[i, a]] * fit.residuals[i]).sum();
            assert!(dot.abs() / 60.0 < 1e-8);
        }
    }

    #[test]
    fn saturated_indicator_recovers_group_means_and_hand_hc0() {
        let z = Array1::from(vec![0.0, 1.0, 2.0, 0.0, 1.0, 2.0, 0.0, 1.0]);
        let psi = Array1::from(vec![1.0, 5.0, -2.0, 3.0, 7.0, -4.0, 2.0, 6.0]);
        let basis = build_indicator_basis(z.view()).unwrap();
        assert_eq!(basis.n_columns(), 3);
        let z2 = column(z.to_vec());
        let fit = project_scores(psi.view(), &basis, z2.view(), &["level"]).unwrap();

        // Group means: level 0 -> (1+3+2)/3, level 1 -> (5+7+6)/3, level 2 -> -3.
        assert!((fit.beta[0] - 2.0).abs() < 1e-10);
        assert!((fit.beta[1] - 6.0).abs() < 1e-10);
        assert!((fit.beta[2] - -3.0).abs() < 1e-10);

        // HC0 on an orthogonal design: V_kk = sum of squared residuals in
        // group k divided by the squared group count.
        let sq = |v: f64| v * v;
        let v0 = (sq(1.0 - 2.0) + sq(3.0 - 2.0) + sq(2.0 - 2.0)) / 9.0;
        let v1 = (sq(5.0 - 6.0) + sq(7.0 - 6.0) + sq(6.0 - 6.0)) / 9.0;
        let v2 = (sq(-2.0 - -3.0) + sq(-4.0 - -3.0)) / 4.0;
        assert!((fit.vcov[[0, 0]] - v0).abs() < 1e-12);
        assert!((fit.vcov[[1, 1]] - v1).abs() < 1e-12);
        assert!((fit.vcov[[2, 2]] - v2).abs() < 1e-12);
        assert!(fit.vcov[[0, 1]].abs() < 1e-12);

        let eval = column(vec![0.0, 1.0, 2.0]);
        let pred = cate_predict(&fit, eval.view()).unwrap();
        assert!((pred.theta[0] - 2.0).abs() < 1e-10);
        assert!((pred.std_err[2] - v2.sqrt()).abs() < 1e-12);
        assert_eq!(pred.clamped, vec![false, false, false]);

        // A value between levels matches nothing.
        let bad = column(vec![1.5]);
        assert!(matches!(
            cate_predict(&fit, bad.view()),
            Err(Error::DegenerateSupport(_))
        ));
    }

    #[test]
    fn constant_scores_predict_the_constant_everywhere() {
        let z = random_column(150, -2.0, 5.0, 31);
        let psi = Array1::from_elem(150, 5.0);
        let basis = build_spline_basis(z.view(), 3, 5).unwrap();
        let fit = project_scores(psi.view(), &basis, column(z.to_vec()).view(), &["z"]).unwrap();
        let grid = grid_1d(-2.0, 5.0, 40).unwrap();
        let pred = cate_predict(&fit, grid.view()).unwrap();
        for &t in pred.theta.iter() {
            assert!((t - 5.0).abs() < 1e-8);
        }
    }

    #[test]
    fn mean_fitted_cate_equals_mean_score() {
        let z = random_column(500, 0.0, 1.0, 41);
        let mut rng = rng_for(42, "cate-test", 2);
        let psi = Array1::from_iter((0..500).map(|_| {
            let e: f64 = rng.sample(StandardNormal);
            0.3 + e
        }));
        let basis = build_spline_basis(z.view(), 3, 5).unwrap();
        let fit = project_scores(psi.view(), &basis, column(z.to_vec()).view(), &["z"]).unwrap();
        let fitted = fit.design.dot(&fit.beta);
        let gap = mean(fitted.as_slice().unwrap()) - mean(psi.as_slice().unwrap());
        // The basis spans constants, so the projection preserves the mean.
        assert!(gap.abs() < 1e-8, "mean shifted by {gap}");
    }

    #[test]
    fn prediction_se_matches_explicit_quadratic_form() {
        let z = random_column(80, 0.0, 2.0, 51);
        let mut rng = rng_for(52, "cate-test", 3);
        let psi = Array1::from_iter((0..80).map(|_| rng.gen_range(-1.0..1.0)));
        let basis = build_spline_basis(z.view(), 2, 5).unwrap();
        let fit = project_scores(psi.view(), &basis, column(z.to_vec()).view(), &["z"]).unwrap();
        let eval = grid_1d(0.1, 1.9, 10).unwrap();
        let (design, _) = fit.basis.design(eval.view()).unwrap();
        let pred = cate_predict(&fit, eval.view()).unwrap();
        for i in 0..10 {
            let mut var = 0.0;
            for a in 0..5 {
                for c in 0..5 {
                    var += design[[i, a]] * fit.vcov[[a, c]] * design[[i, c]];
                }
            }
            assert!((pred.std_err[i] - var.max(0.0).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn vcov_is_symmetric_and_positive_semidefinite() {
        let z = random_column(120, -1.0, 1.0, 61);
        let mut rng = rng_for(62, "cate-test", 4);
        let psi = Array1::from_iter((0..120).map(|_| rng.gen_range(-3.0..3.0)));
        let basis = build_spline_basis(z.view(), 3, 6).unwrap();
        let fit = project_scores(psi.view(), &basis, column(z.to_vec()).view(), &["z"]).unwrap();
        for a in 0..6 {
            for c in 0..6 {
                assert_eq!(fit.vcov[[a, c]], fit.vcov[[c, a]]);
            }
        }
        for _ in 0..200 {
            let v = Array1::from_iter((0..6).map(|_| rng.gen_range(-1.0..1.0)));
            let q = quad_form(&fit.vcov, v.view());
            assert!(q >= -1e-10, "negative direction: {q}");
        }
    }

    #[test]
    fn band_collapses_when_scores_lie_in_the_span() {
        let z = random_column(200, 0.0, 3.0, 71);
        let basis = build_spline_basis(z.view(), 3, 5).unwrap();
        let (design, _) = basis.design(column(z.to_vec()).view()).unwrap();
        let gamma = array![0.5, -1.0, 2.0, 0.3, 1.1];
        let psi = design.dot(&gamma);
        let fit = project_scores(psi.view(), &basis, column(z.to_vec()).view(), &["z"]).unwrap();
        let grid = grid_1d(0.0, 3.0, 25).unwrap();
        let band = multiplier_bootstrap_band(&fit, grid.view(), 0.05, 200, 9).unwrap();
        for j in 0..25 {
            assert!(band.upper[j] - band.lower[j] <= 1e-10);
            assert!(band.lower[j] <= band.estimate[j]);
            assert!(band.estimate[j] <= band.upper[j]);
        }
    }

    #[test]
    fn band_is_deterministic_by_seed() {
        let z = random_column(150, 0.0, 1.0, 81);
        let mut rng = rng_for(82, "cate-test", 5);
        let psi = Array1::from_iter((0..150).map(|_| rng.gen_range(-1.0..2.0)));
        let basis = build_spline_basis(z.view(), 3, 5).unwrap();
        let fit = project_scores(psi.view(), &basis, column(z.to_vec()).view(), &["z"]).unwrap();
        let grid = grid_1d(0.05, 0.95, 15).unwrap();
        let a = multiplier_bootstrap_band(&fit, grid.view(), 0.05, 150, 4).unwrap();
        let b = multiplier_bootstrap_band(&fit, grid.view(), 0.05, 150, 4).unwrap();
        assert_eq!(a.lower, b.lower);
        assert_eq!(a.upper, b.upper);
        let c = multiplier_bootstrap_band(&fit, grid.view(), 0.05, 150, 5).unwrap();
        assert!(a.lower != c.lower || a.upper != c.upper);
        assert_eq!(a.z_columns, vec!["z".to_string()]);
        assert!(!a.low_replicates);
    }

    #[test]
    fn band_width_matches_normal_oracle_on_a_constant_basis() {
        let n = 5000;
        let mut rng = rng_for(91, "cate-test", 6);
        let psi = Array1::from_iter((0..n).map(|_| {
            let e: f64 = rng.sample(StandardNormal);
            e
        }));
        // All rows share one level, so the only column is the constant.
        let z = column(vec![0.0; n]);
        let basis = build_indicator_basis(z.column(0)).unwrap();
        let fit = project_scores(psi.view(), &basis, z.view(), &["const"]).unwrap();
        let grid = column(vec![0.0]);
        let band = multiplier_bootstrap_band(&fit, grid.view(), 0.05, 800, 17).unwrap();
        let width = band.upper[0] - band.lower[0];
        let sd = sample_sd(psi.as_slice().unwrap());
        let oracle = 2.0 * normal_quantile(0.95) * sd / (n as f64).sqrt();
        assert!(
            (width - oracle).abs() / oracle < 0.15,
            "width {width} vs analytic {oracle}"
        );
    }

    #[test]
    fn alpha_one_half_degenerates_to_the_replicate_median() {
        let n = 2000;
        let mut rng = rng_for(101, "cate-test", 7);
        let psi = Array1::from_iter((0..n).map(|_| {
            let e: f64 = rng.sample(StandardNormal);
            e
        }));
        let z = column(vec![1.0; n]);
        let basis = build_indicator_basis(z.column(0)).unwrap();
        let fit = project_scores(psi.view(), &basis, z.view(), &["const"]).unwrap();
        let grid = column(vec![1.0]);
        let band = multiplier_bootstrap_band(&fit, grid.view(), 0.5, 501, 3).unwrap();
        // Both quantiles hit the median, so only the contains-the-estimate
        // clamp separates lower from upper.
        assert!(band.upper[0] - band.lower[0] < 0.02);
        assert!(band.lower[0] <= band.estimate[0] && band.estimate[0] <= band.upper[0]);
    }

    #[test]
    fn small_replicate_counts_are_flagged() {
        let z = random_column(50, 0.0, 1.0, 111);
        let psi = random_column(50, -1.0, 1.0, 112);
        let basis = build_spline_basis(z.view(), 1, 3).unwrap();
        let fit = project_scores(psi.view(), &basis, column(z.to_vec()).view(), &["z"]).unwrap();
        let grid = grid_1d(0.1, 0.9, 5).unwrap();
        let band = multiplier_bootstrap_band(&fit, grid.view(), 0.05, 50, 1).unwrap();
        assert!(band.low_replicates);
        assert_eq!(band.n_boot, 50);
    }

    #[test]
    fn lower_bound_interpolates_linearly() {
        let band = ConfidenceBand {
            grid: column(vec![0.0, 1.0, 2.0, 4.0]),
            estimate: Array1::from(vec![1.0, 2.0, 1.5, 0.5]),
            lower: Array1::from(vec![0.5, 1.5, 1.0, -0.5]),
            upper: Array1::from(vec![1.5, 2.5, 2.0, 1.5]),
            alpha: 0.05,
            n_boot: 100,
            low_replicates: false,
            z_columns: vec!["z".into()],
        };
        assert_eq!(cate_lower_bound(&band, 1.0).unwrap(), 1.5);
        assert_eq!(cate_lower_bound(&band, 0.5).unwrap(), 1.0);
        assert!((cate_lower_bound(&band, 3.0).unwrap() - 0.25).abs() < 1e-12);

        // Independent piecewise-linear oracle over random queries.
        let xs = [0.0, 1.0, 2.0, 4.0];
        let ys = [0.5, 1.5, 1.0, -0.5];
        let oracle = |q: f64| {
            let mut seg = 0;
            while xs[seg + 1] < q {
                seg += 1;
            }
            let t = (q - xs[seg]) / (xs[seg + 1] - xs[seg]);
            ys[seg] + t * (ys[seg + 1] - ys[seg])
        };
        let mut rng = rng_for(121, "cate-test", 8);
        for _ in 0..100 {
            let q = rng.gen_range(0.0..4.0);
            let got = cate_lower_bound(&band, q).unwrap();
            assert!((got - oracle(q)).abs() < 1e-12, "query {q}");
        }

        match cate_lower_bound(&band, 4.5) {
            Err(Error::Extrapolation { value, lo, hi }) => {
                assert_eq!(value, 4.5);
                assert_eq!(lo, 0.0);
                assert_eq!(hi, 4.0);
            }
            other => panic!("expected extrapolation error, got {other:?}"),
        }
        assert!(matches!(
            cate_lower_bound(&band, -0.1),
            Err(Error::Extrapolation { .. })
        ));
    }

    #[test]
    fn out_of_range_predictions_clamp_to_the_boundary() {
        let z = random_column(100, 0.0, 1.0, 131);
        let psi = random_column(100, 0.0, 2.0, 132);
        let basis = build_spline_basis(z.view(), 3, 5).unwrap();
        let fit = project_scores(psi.view(), &basis, column(z.to_vec()).view(), &["z"]).unwrap();
        let CateBasis::Spline(s) = &fit.basis else {
            panic!("expected spline basis");
        };
        let (lo, hi) = s.boundary();
        let eval = column(vec![lo - 1.0, hi + 1.0, 0.5]);
        let pred = cate_predict(&fit, eval.view()).unwrap();
        assert_eq!(pred.clamped, vec![true, true, false]);
        let at_edges = cate_predict(&fit, column(vec![lo, hi]).view()).unwrap();
        assert_eq!(pred.theta[0], at_edges.theta[0]);
        assert_eq!(pred.theta[1], at_edges.theta[1]);
    }

    #[test]
    fn serialized_fit_predicts_but_cannot_bootstrap() {
        let z = random_column(90, 0.0, 1.0, 141);
        let psi = random_column(90, -1.0, 1.0, 142);
        let basis = build_spline_basis(z.view(), 3, 5).unwrap();
        let fit = project_scores(psi.view(), &basis, column(z.to_vec()).view(), &["z"]).unwrap();
        let json = serde_json::to_string(&fit).unwrap();
        let back: CateFit<f64> = serde_json::from_str(&json).unwrap();
        assert!(!back.has_residuals());
        let grid = grid_1d(0.1, 0.9, 7).unwrap();
        let a = cate_predict(&fit, grid.view()).unwrap();
        let b = cate_predict(&back, grid.view()).unwrap();
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.std_err, b.std_err);
        assert!(matches!(
            multiplier_bootstrap_band(&back, grid.view(), 0.05, 120, 1),
            Err(Error::Validation(_))
        ));

        let band = multiplier_bootstrap_band(&fit, grid.view(), 0.05, 120, 1).unwrap();
        let band_json = serde_json::to_string(&band).unwrap();
        let band_back: ConfidenceBand<f64> = serde_json::from_str(&band_json).unwrap();
        assert_eq!(band.lower, band_back.lower);
        assert_eq!(band.grid, band_back.grid);
    }

    #[test]
    fn shape_and_parameter_errors_are_reported() {
        let z = random_column(40, 0.0, 1.0, 151);
        let psi = random_column(39, 0.0, 1.0, 152);
        let basis = build_spline_basis(z.view(), 3, 5).unwrap();
        assert!(matches!(
            project_scores(psi.view(), &basis, column(z.to_vec()).view(), &["z"]),
            Err(Error::Shape(_))
        ));
        let psi_ok = random_column(40, 0.0, 1.0, 153);
        assert!(matches!(
            project_scores(psi_ok.view(), &basis, column(z.to_vec()).view(), &["a", "b"]),
            Err(Error::Shape(_))
        ));
        let fit =
            project_scores(psi_ok.view(), &basis, column(z.to_vec()).view(), &["z"]).unwrap();
        let grid = grid_1d(0.2, 0.8, 4).unwrap();
        assert!(matches!(
            multiplier_bootstrap_band(&fit, grid.view(), 0.0, 100, 1),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            multiplier_bootstrap_band(&fit, grid.view(), 0.05, 0, 1),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(grid_1d(1.0, 1.0, 5), Err(Error::Parameter(_))));
        assert!(matches!(grid_1d(0.0, 1.0, 1), Err(Error::Parameter(_))));

        // Two-dimensional bands cannot answer a scalar lower-bound query.
        let zx = random_column(60, 0.0, 1.0, 154);
        let zy = random_column(60, 0.0, 1.0, 155);
        let tensor = build_tensor_basis(zx.view(), zy.view(), 2, 4).unwrap();
        let mut z2 = Array2::zeros((60, 2));
        z2.column_mut(0).assign(&zx);
        z2.column_mut(1).assign(&zy);
        let psi2 = random_column(60, -1.0, 1.0, 156);
        let fit2 = project_scores(psi2.view(), &tensor, z2.view(), &["x", "y"]).unwrap();
        let grid2 = grid_2d((0.2, 0.8), (0.2, 0.8), 3).unwrap();
        let band2 = multiplier_bootstrap_band(&fit2, grid2.view(), 0.05, 120, 2).unwrap();
        assert!(matches!(
            cate_lower_bound(&band2, 0.5),
            Err(Error::Parameter(_))
        ));
    }

    proptest! {
        #[test]
        fn spline_design_rows_sum_to_one(
            raw in prop::collection::vec(-1e3..1e3f64, 8..50),
            degree in 1..=3usize,
            extra in 0..=2usize,
            qs in prop::collection::vec(0.0..1.0f64, 1..12),
        ) {
            let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assume!(max - min > 1e-9);
            let z = Array1::from(raw);
            let df = degree + 1 + extra;
            let basis = build_spline_basis(z.view(), degree, df).unwrap();
            let points: Vec<f64> = qs.iter().map(|q| min + q * (max - min)).collect();
            let (design, clamped) = basis
                .design(column(points).view())
                .unwrap();
            for (i, flag) in clamped.iter().enumerate() {
                prop_assert!(!flag);
                let sum: f64 = design.row(i).sum();
                prop_assert!((sum - 1.0).abs() < 1e-10);
                prop_assert!(design.row(i).iter().all(|&v| v >= -1e-12));
            }
        }
    }
}
