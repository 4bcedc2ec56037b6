//! Clamped B-spline bases with quantile-placed interior knots.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stats::quantile_sorted;

/// One-dimensional clamped B-spline basis.
///
/// The knot vector repeats each boundary `degree + 1` times, so the basis
/// spans constants on `[lo, hi]` and every in-range evaluation row sums to
/// one. Interior knots sit at equally spaced quantiles of the fitting data,
/// which keeps every column populated even when the input is skewed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis<S: Scalar> {
    degree: usize,
    /// Full clamped knot vector, nondecreasing.
    knots: Vec<S>,
    lo: S,
    hi: S,
}

impl<S: Scalar> SplineBasis<S> {
    /// Places knots from data: boundary knots at the observed range and
    /// `df - degree - 1` interior knots at equally spaced quantiles.
    pub fn from_data(z: ArrayView1<S>, degree: usize, df: usize) -> Result<Self> {
        if degree == 0 {
            return Err(Error::Parameter("spline degree must be at least 1".into()));
        }
        if df <= degree {
            return Err(Error::Parameter(format!(
                "spline basis needs df > degree, got df={df} degree={degree}"
            )));
        }
        if z.len() < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 observations to place knots, got {}",
                z.len()
            )));
        }
        let mut sorted = Vec::with_capacity(z.len());
        for (i, &v) in z.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("reading conditioning values (row {i})"),
                });
            }
            sorted.push(v);
        }
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values order totally"));
        let lo = sorted[0];
        let hi = sorted[sorted.len() - 1];
        if lo == hi {
            return Err(Error::DegenerateSupport(
                "conditioning variable is constant; a spline basis needs spread".into(),
            ));
        }
        let n_interior = df - degree - 1;
        let mut knots = Vec::with_capacity(n_interior + 2 * (degree + 1));
        knots.extend(std::iter::repeat(lo).take(degree + 1));
        for j in 1..=n_interior {
            let q = j as f64 / (n_interior + 1) as f64;
            knots.push(quantile_sorted(&sorted, q));
        }
        knots.extend(std::iter::repeat(hi).take(degree + 1));
        Ok(Self {
            degree,
            knots,
            lo,
            hi,
        })
    }

    /// Number of basis functions (columns).
    pub fn df(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Boundary knots: the `(min, max)` of the fitting data.
    pub fn boundary(&self) -> (S, S) {
        (self.lo, self.hi)
    }

    /// Interior knots at the quantile positions, possibly empty.
    pub fn interior_knots(&self) -> &[S] {
        &self.knots[self.degree + 1..self.knots.len() - self.degree - 1]
    }

    /// Evaluates every basis function at `x` into `out` (length [`Self::df`]).
    ///
    /// Points outside the boundary are clamped onto it; the return value says
    /// whether that happened.
    pub fn eval_into(&self, x: S, out: &mut [S]) -> Result<bool> {
        debug_assert_eq!(out.len(), self.df());
        if !x.is_finite() {
            return Err(Error::NonFinite {
                context: "evaluating a spline basis".into(),
            });
        }
        for v in out.iter_mut() {
            *v = S::zero();
        }
        let mut clamped = false;
        let mut x = x;
        if x < self.lo {
            x = self.lo;
            clamped = true;
        }
        if x > self.hi {
            x = self.hi;
            clamped = true;
        }
        let k = self.degree;
        let t = &self.knots;
        // The last span owns the right boundary, so x == hi lands in a
        // nonempty interval.
        let last = t.len() - k - 2;
        let mut span = last;
        for i in k..=last {
            if x < t[i + 1] {
                span = i;
                break;
            }
        }
        // Cox-de Boor recursion over the k+1 functions alive on this span.
        let mut vals = vec![S::zero(); k + 1];
        vals[0] = S::one();
        let mut left = vec![S::zero(); k + 1];
        let mut right = vec![S::zero(); k + 1];
        for d in 1..=k {
            left[d] = x - t[span + 1 - d];
            right[d] = t[span + d] - x;
            let mut saved = S::zero();
            for r in 0..d {
                // Zero-width spans from repeated knots contribute nothing.
                let denom = right[r + 1] + left[d - r];
                let term = if denom != S::zero() {
                    vals[r] / denom
                } else {
                    S::zero()
                };
                vals[r] = saved + right[r + 1] * term;
                saved = left[d - r] * term;
            }
            vals[d] = saved;
        }
        for (j, &v) in vals.iter().enumerate() {
            out[span - k + j] = v;
        }
        Ok(clamped)
    }
}
