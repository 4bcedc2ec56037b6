//! Dense linear algebra for small symmetric systems.
//!
//! Normal equations in this crate never exceed a few dozen columns, so a
//! plain Cholesky factorization is both fast and dependency-free. Singular
//! systems fall back once to a tiny ridge (`1e-8` on the diagonal); the
//! fallback is reported so callers can surface a warning flag.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Diagonal inflation used when a normal-equations matrix is not positive
/// definite as given.
pub const RIDGE_FALLBACK: f64 = 1e-8;

/// Lower-triangular Cholesky factor, or `None` if the matrix is not positive
/// definite.
fn cholesky<S: Scalar>(a: &Array2<S>) -> Option<Array2<S>> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let mut l = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= S::zero() || !sum.is_finite() {
                    return None;
                }
                l[[i, i]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Some(l)
}

fn chol_solve<S: Scalar>(l: &Array2<S>, b: ArrayView1<S>) -> Array1<S> {
    let n = l.nrows();
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[[i, k]] * y[k];
        }
        y[i] = sum / l[[i, i]];
    }
    let mut x = Array1::zeros(n);
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[[k, i]] * x[k];
        }
        x[i] = sum / l[[i, i]];
    }
    x
}

/// Solution of a symmetric positive definite system together with a flag
/// noting whether the ridge fallback was needed.
pub struct SpdSolution<T> {
    pub value: T,
    pub ridge_fallback: bool,
}

fn factor_with_fallback<S: Scalar>(
    a: &Array2<S>,
    context: &str,
) -> Result<(Array2<S>, bool)> {
    if let Some(l) = cholesky(a) {
        return Ok((l, false));
    }
    let mut ridged = a.clone();
    let lambda = S::of_f64(RIDGE_FALLBACK);
    for i in 0..ridged.nrows() {
        ridged[[i, i]] += lambda;
    }
    match cholesky(&ridged) {
        Some(l) => Ok((l, true)),
        None => Err(Error::Singular {
            context: context.to_string(),
        }),
    }
}

/// Solve `a x = b` for symmetric positive semidefinite `a`.
pub fn solve_spd<S: Scalar>(
    a: &Array2<S>,
    b: ArrayView1<S>,
    context: &str,
) -> Result<SpdSolution<Array1<S>>> {
    let (l, ridge_fallback) = factor_with_fallback(a, context)?;
    Ok(SpdSolution {
        value: chol_solve(&l, b),
        ridge_fallback,
    })
}

/// Inverse of a symmetric positive semidefinite matrix, via Cholesky and
/// identity columns.
pub fn invert_spd<S: Scalar>(a: &Array2<S>, context: &str) -> Result<SpdSolution<Array2<S>>> {
    let n = a.nrows();
    let (l, ridge_fallback) = factor_with_fallback(a, context)?;
    let mut inv = Array2::zeros((n, n));
    let mut e = Array1::zeros(n);
    for j in 0..n {
        e[j] = S::one();
        let col = chol_solve(&l, e.view());
        inv.column_mut(j).assign(&col);
        e[j] = S::zero();
    }
    Ok(SpdSolution {
        value: inv,
        ridge_fallback,
    })
}

/// `Xᵀ X` accumulated symmetrically.
pub fn xtx<S: Scalar>(x: ArrayView2<S>) -> Array2<S> {
    xtwx(x, None)
}

/// `Xᵀ W X` with optional diagonal weights.
pub fn xtwx<S: Scalar>(x: ArrayView2<S>, w: Option<ArrayView1<S>>) -> Array2<S> {
    let (n, p) = x.dim();
    let mut out = Array2::zeros((p, p));
    for i in 0..n {
        let row = x.row(i);
        let wi = w.map_or(S::one(), |w| w[i]);
        for a in 0..p {
            let ra = row[a] * wi;
            for b in a..p {
                out[[a, b]] += ra * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            out[[a, b]] = out[[b, a]];
        }
    }
    out
}

/// `Xᵀ y`, optionally weighted.
pub fn xtwy<S: Scalar>(x: ArrayView2<S>, y: ArrayView1<S>, w: Option<ArrayView1<S>>) -> Array1<S> {
    let (n, p) = x.dim();
    let mut out = Array1::zeros(p);
    for i in 0..n {
        let wi = w.map_or(S::one(), |w| w[i]);
        let yi = y[i] * wi;
        let row = x.row(i);
        for a in 0..p {
            out[a] += row[a] * yi;
        }
    }
    out
}

/// Quadratic form `vᵀ M v`.
pub fn quad_form<S: Scalar>(m: &Array2<S>, v: ArrayView1<S>) -> S {
    let n = m.nrows();
    let mut acc = S::zero();
    for i in 0..n {
        let mut row = S::zero();
        for j in 0..n {
            row += m[[i, j]] * v[j];
        }
        acc += v[i] * row;
    }
    acc
}

/// Eigendecomposition of a symmetric 2x2 matrix `[[a, b], [b, c]]`.
/// Returns `(eigenvalues, unit eigenvectors)` with the larger eigenvalue
/// first and the vectors orthonormal by construction.
pub fn sym_eigen_2x2<S: Scalar>(a: S, b: S, c: S) -> ([S; 2], [[S; 2]; 2]) {
    let half = S::of_f64(0.5);
    let tr = a + c;
    let diff = a - c;
    let disc = (diff * diff + S::of_f64(4.0) * b * b).sqrt();
    let l1 = (tr + disc) * half;
    let l2 = (tr - disc) * half;

    // Pick the algebraically larger residual row for stability.
    let v1 = if b.abs() > S::of_f64(0.0) {
        let (vx, vy) = if (l1 - a).abs() > (l1 - c).abs() {
            (b, l1 - a)
        } else {
            (l1 - c, b)
        };
        let norm = (vx * vx + vy * vy).sqrt();
        [vx / norm, vy / norm]
    } else if a >= c {
        [S::one(), S::zero()]
    } else {
        [S::zero(), S::one()]
    };
    // Exact orthogonality: rotate the first vector by 90 degrees.
    let v2 = [-v1[1], v1[0]];
    ([l1, l2], [v1, v2])
}
