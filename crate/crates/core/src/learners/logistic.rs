//! Logistic regression fitted by iteratively reweighted least squares.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::Result;
use crate::linalg::solve_spd;
use crate::scalar::Scalar;

pub(crate) const MAX_ITER_DEFAULT: usize = 100;
pub(crate) const TOL_DEFAULT: f64 = 1e-8;

// Stabilizers: a tiny ridge keeps the weighted Gram matrix invertible under
// separation, the weight floor keeps the working response finite, and the
// probability clamp keeps downstream log-likelihoods finite.
const IRLS_RIDGE: f64 = 1e-8;
const WEIGHT_FLOOR: f64 = 1e-10;
const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug)]
pub struct LogisticModel<S: Scalar> {
    pub intercept: S,
    pub coef: Array1<S>,
    pub iterations: usize,
    pub converged: bool,
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl<S: Scalar> LogisticModel<S> {
    /// Newton steps on the log-likelihood, expressed as weighted least
    /// squares on the working response. Convergence is max absolute
    /// coefficient change below `tol`; hitting `max_iter` (as under complete
    /// separation) stops with finite coefficients rather than erroring.
    pub fn fit(x: ArrayView2<S>, a: ArrayView1<S>, max_iter: usize, tol: f64) -> Result<Self> {
        let n = x.nrows();
        let p = x.ncols();
        let mut design = Array2::<f64>::ones((n, p + 1));
        for i in 0..n {
            for j in 0..p {
                design[[i, j + 1]] = x[[i, j]].as_f64();
            }
        }
        let labels: Vec<f64> = a.iter().map(|&v| v.as_f64()).collect();

        let mut beta = Array1::<f64>::zeros(p + 1);
        let mut iterations = 0;
        let mut converged = false;
        while iterations < max_iter {
            iterations += 1;
            let eta = design.dot(&beta);
            let probs: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
            let weights: Vec<f64> = probs.iter().map(|&pr| (pr * (1.0 - pr)).max(WEIGHT_FLOOR)).collect();
            let z: Vec<f64> = (0..n)
                .map(|i| eta[i] + (labels[i] - probs[i]) / weights[i])
                .collect();

            let mut gram = Array2::<f64>::zeros((p + 1, p + 1));
            let mut rhs = Array1::<f64>::zeros(p + 1);
            for i in 0..n {
                let w = weights[i];
                let row = design.row(i);
                for j in 0..=p {
                    let wj = w * row[j];
                    rhs[j] += wj * z[i];
                    for k in j..=p {
                        gram[[j, k]] += wj * row[k];
                    }
                }
            }
            for j in 0..=p {
                for k in 0..j {
                    gram[[j, k]] = gram[[k, j]];
                }
                gram[[j, j]] += IRLS_RIDGE;
            }

            let next = solve_spd(&gram, rhs.view(), "logistic working least squares")?.value;
            let delta = next
                .iter()
                .zip(beta.iter())
                .map(|(&a, &b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            beta = next;
            if delta < tol {
                converged = true;
                break;
            }
        }

        Ok(Self {
            intercept: S::of_f64(beta[0]),
            coef: Array1::from_iter((0..p).map(|j| S::of_f64(beta[j + 1]))),
            iterations,
            converged,
        })
    }

    pub fn predict(&self, x: ArrayView2<S>) -> Array1<S> {
        let mut out = Array1::<S>::zeros(x.nrows());
        for i in 0..x.nrows() {
            let mut eta = self.intercept.as_f64();
            for j in 0..x.ncols() {
                eta += self.coef[j].as_f64() * x[[i, j]].as_f64();
            }
            let pr = sigmoid(eta).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            out[i] = S::of_f64(pr);
        }
        out
    }
}
