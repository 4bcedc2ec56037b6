//! Regression trees with exhaustive midpoint split search.

use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct CartParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

#[derive(Debug, Clone)]
pub(crate) enum Node<S> {
    Internal {
        feature: usize,
        threshold: S,
        left: usize,
        right: usize,
    },
    Leaf {
        value: S,
    },
}

/// A fitted tree as a flat node arena; index 0 is the root.
#[derive(Debug, Clone)]
pub struct TreeModel<S: Scalar> {
    pub(crate) nodes: Vec<Node<S>>,
}

impl<S: Scalar> TreeModel<S> {
    pub fn predict(&self, x: ArrayView2<S>) -> Array1<S> {
        Array1::from_iter((0..x.nrows()).map(|i| self.predict_row(x.row(i))))
    }

    pub fn predict_row(&self, row: ArrayView1<S>) -> S {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { value } => return *value,
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }
}

/// Fits on all rows considering every feature at every node.
pub fn fit_cart<S: Scalar>(x: ArrayView2<S>, y: ArrayView1<S>, params: &CartParams) -> TreeModel<S> {
    let rows: Vec<usize> = (0..x.nrows()).collect();
    let mut builder = Builder {
        x: x.reborrow(),
        y: y.reborrow(),
        params,
        mtry: x.ncols(),
        rng: None,
        nodes: Vec::new(),
        feat_scratch: (0..x.ncols()).collect(),
    };
    builder.build(rows, 0);
    TreeModel { nodes: builder.nodes }
}

/// Forest member fit: bootstrap resamples the rows, then considers a fresh
/// uniform draw of `mtry` features at every node. All randomness flows
/// through `rng` in a fixed order (bootstrap first, then nodes in preorder).
pub fn fit_cart_sampled<S: Scalar>(
    x: ArrayView2<S>,
    y: ArrayView1<S>,
    params: &CartParams,
    mtry: usize,
    rng: &mut ChaCha8Rng,
) -> TreeModel<S> {
    let n = x.nrows();
    let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
    let mut builder = Builder {
        x: x.reborrow(),
        y: y.reborrow(),
        params,
        mtry: mtry.min(x.ncols()).max(1),
        rng: Some(rng),
        nodes: Vec::new(),
        feat_scratch: (0..x.ncols()).collect(),
    };
    builder.build(rows, 0);
    TreeModel { nodes: builder.nodes }
}

struct Builder<'a, S: Scalar> {
    x: ArrayView2<'a, S>,
    y: ArrayView1<'a, S>,
    params: &'a CartParams,
    mtry: usize,
    rng: Option<&'a mut ChaCha8Rng>,
    nodes: Vec<Node<S>>,
    feat_scratch: Vec<usize>,
}

struct Split {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl<S: Scalar> Builder<'_, S> {
    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let n = rows.len();
        let sum: f64 = rows.iter().map(|&i| self.y[i].as_f64()).sum();
        let mean = sum / n as f64;

        let idx = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: S::of_f64(mean),
        });

        if depth >= self.params.max_depth || n < 2 * self.params.min_leaf {
            return idx;
        }
        let parent_score = sum * sum / n as f64;
        let Some(split) = self.best_split(&rows, parent_score) else {
            return idx;
        };

        let threshold = S::of_f64(split.threshold);
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .into_iter()
            .partition(|&i| self.x[[i, split.feature]] <= threshold);
        debug_assert!(left_rows.len() >= self.params.min_leaf);
        debug_assert!(right_rows.len() >= self.params.min_leaf);

        let left = self.build(left_rows, depth + 1);
        let right = self.build(right_rows, depth + 1);
        self.nodes[idx] = Node::Internal {
            feature: split.feature,
            threshold,
            left,
            right,
        };
        idx
    }

    /// Exhaustive scan over candidate features and adjacent-value midpoints,
    /// maximizing the post-split sum-of-squares score. Strict improvement is
    /// required, and only strictly better scores replace the incumbent, so
    /// ties resolve to the lowest feature index and then lowest threshold.
    fn best_split(&mut self, rows: &[usize], parent_score: f64) -> Option<Split> {
        let features = self.node_features();
        let n = rows.len();
        let min_leaf = self.params.min_leaf;
        let mut best: Option<Split> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
        for f in features {
            pairs.clear();
            pairs.extend(
                rows.iter()
                    .map(|&i| (self.x[[i, f]].as_f64(), self.y[i].as_f64())),
            );
            pairs.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features"));
            let total: f64 = pairs.iter().map(|p| p.1).sum();
            let mut left_sum = 0.0;
            for pos in 0..n - 1 {
                left_sum += pairs[pos].1;
                let n_left = pos + 1;
                let n_right = n - n_left;
                if n_left < min_leaf || n_right < min_leaf {
                    continue;
                }
                if pairs[pos].0 >= pairs[pos + 1].0 {
                    continue;
                }
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / n_left as f64
                    + right_sum * right_sum / n_right as f64;
                if score > parent_score && best.as_ref().map_or(true, |b| score > b.score) {
                    best = Some(Split {
                        feature: f,
                        threshold: 0.5 * (pairs[pos].0 + pairs[pos + 1].0),
                        score,
                    });
                }
            }
        }
        best
    }

    fn node_features(&mut self) -> Vec<usize> {
        let p = self.feat_scratch.len();
        if self.mtry >= p {
            return (0..p).collect();
        }
        let rng = self.rng.as_deref_mut().expect("feature sampling needs rng");
        for i in 0..self.mtry {
            let j = rng.gen_range(i..p);
            self.feat_scratch.swap(i, j);
        }
        let mut picked = self.feat_scratch[..self.mtry].to_vec();
        picked.sort_unstable();
        picked
    }
}
