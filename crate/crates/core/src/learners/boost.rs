//! Gradient boosting with depth-one regression trees under squared loss.
//!
//! Each stage fits a stump to the current residuals by exhaustive midpoint
//! search and adds it scaled by the learning rate. Because the stump is the
//! least-squares fit on its partition, training error cannot increase for
//! learning rates in (0, 1].

use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::scalar::Scalar;

#[derive(Debug, Clone)]
struct Stump<S> {
    feature: usize,
    threshold: S,
    left: S,
    right: S,
}

#[derive(Debug)]
pub struct BoostedModel<S: Scalar> {
    base: S,
    learning_rate: S,
    stumps: Vec<Stump<S>>,
    /// Training RMSE after the base fit and after each stage.
    pub stage_rmse: Vec<f64>,
}

impl<S: Scalar> BoostedModel<S> {
    pub fn fit(x: ArrayView2<S>, y: ArrayView1<S>, n_stages: usize, learning_rate: S) -> Self {
        let n = x.nrows();
        let p = x.ncols();
        let base = y.iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;

        // Presorted row order per feature; reused by every stage.
        let orders: Vec<Vec<usize>> = (0..p)
            .map(|f| {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.sort_unstable_by(|&a, &b| {
                    x[[a, f]].partial_cmp(&x[[b, f]]).expect("finite features")
                });
                idx
            })
            .collect();

        let mut residual: Vec<f64> = y.iter().map(|v| v.as_f64() - base).collect();
        let lr = learning_rate.as_f64();
        let mut stumps = Vec::new();
        let mut stage_rmse = Vec::with_capacity(n_stages + 1);
        let rmse = |r: &[f64]| (r.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        stage_rmse.push(rmse(&residual));

        for _ in 0..n_stages {
            let Some(stump) = best_stump(x, &orders, &residual) else {
                break;
            };
            let threshold = S::of_f64(stump.1);
            for (i, r) in residual.iter_mut().enumerate() {
                let fitted = if x[[i, stump.0]] <= threshold {
                    stump.2
                } else {
                    stump.3
                };
                *r -= lr * fitted;
            }
            stumps.push(Stump {
                feature: stump.0,
                threshold,
                left: S::of_f64(lr * stump.2),
                right: S::of_f64(lr * stump.3),
            });
            stage_rmse.push(rmse(&residual));
        }

        Self {
            base: S::of_f64(base),
            learning_rate,
            stumps,
            stage_rmse,
        }
    }

    pub fn predict(&self, x: ArrayView2<S>) -> Array1<S> {
        let mut out = Array1::from_elem(x.nrows(), self.base);
        for stump in &self.stumps {
            for i in 0..x.nrows() {
                out[i] += if x[[i, stump.feature]] <= stump.threshold {
                    stump.left
                } else {
                    stump.right
                };
            }
        }
        out
    }

    pub fn n_stages_fit(&self) -> usize {
        self.stumps.len()
    }

    pub fn learning_rate(&self) -> S {
        self.learning_rate
    }
}

/// Returns `(feature, threshold, left_mean, right_mean)` of the
/// sum-of-squares-optimal stump on the residuals, or `None` when no split
/// strictly improves on the constant fit. Ties favor the lowest feature
/// index and then the lowest threshold.
fn best_stump<S: Scalar>(
    x: ArrayView2<S>,
    orders: &[Vec<usize>],
    residual: &[f64],
) -> Option<(usize, f64, f64, f64)> {
    let n = residual.len();
    if n < 2 {
        return None;
    }
    let total: f64 = residual.iter().sum();
    let parent_score = total * total / n as f64;
    let mut best: Option<(f64, usize, f64, f64, f64)> = None;
    for (f, order) in orders.iter().enumerate() {
        let mut left_sum = 0.0;
        for pos in 0..n - 1 {
            left_sum += residual[order[pos]];
            let xi = x[[order[pos], f]];
            let xj = x[[order[pos + 1], f]];
            if xi >= xj {
                continue;
            }
            let n_left = (pos + 1) as f64;
            let n_right = (n - pos - 1) as f64;
            let right_sum = total - left_sum;
            let score = left_sum * left_sum / n_left + right_sum * right_sum / n_right;
            if score > parent_score && best.as_ref().map_or(true, |b| score > b.0) {
                best = Some((
                    score,
                    f,
                    0.5 * (xi.as_f64() + xj.as_f64()),
                    left_sum / n_left,
                    right_sum / n_right,
                ));
            }
        }
    }
    best.map(|(_, f, t, l, r)| (f, t, l, r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use rand::Rng;

    #[test]
    fn training_rmse_never_increases_across_stages() {
        let n = 200;
        let mut rng = crate::rng::rng_for(5, "boost-test", 0);
        let mut x = Array2::<f64>::zeros((n, 3));
        let mut y = ndarray::Array1::<f64>::zeros(n);
        for i in 0..n {
            for j in 0..3 {
                x[[i, j]] = rng.gen_range(-2.0..2.0);
            }
            y[i] = (x[[i, 0]] * 1.5).sin() + 0.3 * x[[i, 1]] + rng.gen_range(-0.1..0.1);
        }
        let model = BoostedModel::fit(x.view(), y.view(), 150, 0.1);
        for w in model.stage_rmse.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "rmse rose from {} to {}", w[0], w[1]);
        }
        assert!(model.stage_rmse.last().unwrap() < &(0.5 * model.stage_rmse[0]));
    }

    #[test]
    fn single_stage_unit_rate_equals_best_stump() {
        let x = array![[1.0], [2.0], [3.0], [4.0]];
        let y = array![1.0, 1.0, 3.0, 3.0];
        let model = BoostedModel::fit(x.view(), y.view(), 1, 1.0);
        let pred = model.predict(x.view());
        // Base 2.0, stump at 2.5 with residual means -1 and +1.
        assert_abs_diff_eq!(pred[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pred[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pred[2], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pred[3], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_target_stops_after_base() {
        let x = array![[1.0], [2.0], [3.0]];
        let y = array![4.0, 4.0, 4.0];
        let model = BoostedModel::fit(x.view(), y.view(), 50, 0.1);
        assert_eq!(model.n_stages_fit(), 0);
        assert_abs_diff_eq!(model.predict(x.view())[1], 4.0, epsilon = 1e-12);
    }

    #[test]
    fn prediction_composes_base_and_scaled_stumps() {
        let x = array![[0.0], [1.0], [2.0], [3.0], [4.0], [5.0]];
        let y = array![0.0, 0.0, 0.0, 6.0, 6.0, 6.0];
        let model = BoostedModel::fit(x.view(), y.view(), 3, 0.5);
        // Stage fits halve the residual step each time: 3, 1.5, 0.75 left.
        let pred = model.predict(x.view());
        assert_abs_diff_eq!(pred[0], 3.0 - 3.0 * 0.875, epsilon = 1e-12);
        assert_abs_diff_eq!(pred[5], 3.0 + 3.0 * 0.875, epsilon = 1e-12);
    }
}
