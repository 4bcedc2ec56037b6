//! Axis-aligned decision trees fit by maximizing the scored rework value.
//!
//! Each training row carries a signed score `psi_b - gamma`; a tree earns
//! `(1/n) Σ (2π(z) - 1) (psi_b - gamma)` and the fit searches splits whose
//! leaves capture same-sign score mass. Greedy search picks the best split
//! node by node; exact search enumerates every (root, left child, right
//! child) candidate combination at depth two.

use std::collections::HashMap;

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Cap on candidate thresholds per feature; larger midpoint sets are thinned
/// to this many rank-evenly spaced entries.
pub const CANDIDATE_CAP: usize = 256;
/// Exhaustive search grows quadratically in candidates per extra level, so
/// it stops here.
pub const EXACT_DEPTH_LIMIT: usize = 2;
const GREEDY_DEPTH_LIMIT: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Greedy,
    Exact,
}

/// One node of a fitted tree. Rows with `value <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolicyNode<S: Scalar> {
    Split {
        feature: String,
        threshold: S,
        left: Box<PolicyNode<S>>,
        right: Box<PolicyNode<S>>,
    },
    Leaf {
        action: bool,
    },
}

/// Depth-limited rework tree with its fit metadata.
///
/// The tree is complete at the stated depth whenever the data offers a
/// candidate split; regions where every feature is constant end in an early
/// leaf. Every threshold is the midpoint of two adjacent observed training
/// values of its feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTree<S: Scalar> {
    pub root: PolicyNode<S>,
    /// Requested depth.
    pub depth: usize,
    pub search: SearchMode,
    /// Feature names in the column order of the fitting matrix.
    pub features: Vec<String>,
    /// Cost threshold subtracted from the scores before fitting.
    pub gamma: S,
    pub candidate_cap: usize,
    /// Some feature offered more midpoints than the cap and was thinned.
    pub downsampled: bool,
    /// Training value `(1/n) Σ (2π - 1)(psi_b - gamma)` of the fitted tree.
    pub objective: S,
    pub n_train: usize,
}

enum ResolvedNode<S> {
    Split {
        column: usize,
        threshold: S,
        left: Box<ResolvedNode<S>>,
        right: Box<ResolvedNode<S>>,
    },
    Leaf(bool),
}

impl<S: Scalar> ResolvedNode<S> {
    fn decide(&self, row: ArrayView1<S>) -> bool {
        match self {
            ResolvedNode::Leaf(action) => *action,
            ResolvedNode::Split {
                column,
                threshold,
                left,
                right,
            } => {
                if row[*column] <= *threshold {
                    left.decide(row)
                } else {
                    right.decide(row)
                }
            }
        }
    }
}

impl<S: Scalar> PolicyNode<S> {
    fn resolve(&self, index_of: &HashMap<&str, usize>) -> Result<ResolvedNode<S>> {
        match self {
            PolicyNode::Leaf { action } => Ok(ResolvedNode::Leaf(*action)),
            PolicyNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let column = *index_of
                    .get(feature.as_str())
                    .ok_or_else(|| Error::MissingFeature {
                        name: feature.clone(),
                    })?;
                Ok(ResolvedNode::Split {
                    column,
                    threshold: *threshold,
                    left: Box::new(left.resolve(index_of)?),
                    right: Box::new(right.resolve(index_of)?),
                })
            }
        }
    }
}

impl<S: Scalar> PolicyTree<S> {
    /// Applies the tree to every row of `z`, whose columns are named by
    /// `columns`. All fit features must be present.
    pub fn decide_batch(&self, z: ArrayView2<S>, columns: &[&str]) -> Result<Vec<bool>> {
        if z.ncols() != columns.len() {
            return Err(Error::Shape(format!(
                "{} columns named for a matrix with {}",
                columns.len(),
                z.ncols()
            )));
        }
        let index_of: HashMap<&str, usize> =
            columns.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        for name in &self.features {
            if !index_of.contains_key(name.as_str()) {
                return Err(Error::MissingFeature { name: name.clone() });
            }
        }
        let resolved = self.root.resolve(&index_of)?;
        Ok((0..z.nrows()).map(|i| resolved.decide(z.row(i))).collect())
    }
}

/// Per-feature split candidates: midpoints of adjacent sorted unique values,
/// thinned to the cap by rank.
fn candidate_thresholds<S: Scalar>(col: ArrayView1<S>, cap: usize) -> (Vec<S>, bool) {
    let mut vals: Vec<S> = col.iter().copied().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).expect("finite values order totally"));
    vals.dedup();
    let two = S::of_f64(2.0);
    let mids: Vec<S> = vals
        .windows(2)
        .map(|w| (w[0] + w[1]) / two)
        .collect();
    if mids.len() <= cap {
        return (mids, false);
    }
    let last = mids.len() - 1;
    let mut thinned = Vec::with_capacity(cap);
    for j in 0..cap {
        let idx = (j as f64 * last as f64 / (cap - 1) as f64).round() as usize;
        thinned.push(mids[idx]);
    }
    thinned.dedup();
    (thinned, true)
}

struct FitContext<'a, S: Scalar> {
    z: ArrayView2<'a, S>,
    /// Shifted scores `psi_b - gamma`, widened for stable accumulation.
    s: Vec<f64>,
    candidates: Vec<Vec<S>>,
    /// Per feature, per row: count of candidates below the row's value, so a
    /// row goes left of candidate `c` exactly when its bucket is `<= c`.
    buckets: Vec<Vec<u32>>,
    features: Vec<String>,
}

impl<'a, S: Scalar> FitContext<'a, S> {
    fn sum(&self, rows: &[usize]) -> f64 {
        rows.iter().map(|&i| self.s[i]).sum()
    }

    /// Best single split over the given rows: maximizes
    /// `|sum_left| + |sum_right|`, ties to the lowest (feature, threshold).
    fn best_split(&self, rows: &[usize]) -> Option<(usize, usize, f64)> {
        let total = self.sum(rows);
        let mut best: Option<(usize, usize, f64)> = None;
        for f in 0..self.candidates.len() {
            let k = self.candidates[f].len();
            if k == 0 {
                continue;
            }
            let mut bucket_sums = vec![0.0f64; k + 1];
            for &i in rows {
                bucket_sums[self.buckets[f][i] as usize] += self.s[i];
            }
            let mut left = 0.0;
            for c in 0..k {
                left += bucket_sums[c];
                let score = left.abs() + (total - left).abs();
                if best.map_or(true, |(_, _, s)| score > s) {
                    best = Some((f, c, score));
                }
            }
        }
        best
    }

    fn grow_greedy(&self, rows: &[usize], depth_left: usize) -> PolicyNode<S> {
        let total = self.sum(rows);
        if depth_left == 0 {
            return PolicyNode::Leaf { action: total > 0.0 };
        }
        let Some((f, c, _)) = self.best_split(rows) else {
            return PolicyNode::Leaf { action: total > 0.0 };
        };
        let threshold = self.candidates[f][c];
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .copied()
            .partition(|&i| self.buckets[f][i] as usize <= c);
        PolicyNode::Split {
            feature: self.features[f].clone(),
            threshold,
            left: Box::new(self.grow_greedy(&left_rows, depth_left - 1)),
            right: Box::new(self.grow_greedy(&right_rows, depth_left - 1)),
        }
    }

    /// Exhaustive depth-2 search. For every root feature F and child feature
    /// G a bucket-indexed score table lets the sweep over root candidates
    /// reuse column sums, so the whole search costs O(p² (n + C²)).
    fn exact_depth2(&self) -> PolicyNode<S> {
        let n = self.s.len();
        let all_rows: Vec<usize> = (0..n).collect();
        let total = self.sum(&all_rows);
        let p = self.candidates.len();

        #[derive(Clone, Copy)]
        struct ChildPlan {
            g: usize,
            d: usize,
            score: f64,
        }
        struct RootPlan {
            f: usize,
            c: usize,
            left: ChildPlan,
            right: ChildPlan,
            score: f64,
        }
        let mut best: Option<RootPlan> = None;

        for f in 0..p {
            let kf = self.candidates[f].len();
            if kf == 0 {
                continue;
            }
            // Left-side total after each root candidate, from F's buckets.
            let mut f_bucket = vec![0.0f64; kf + 1];
            for i in 0..n {
                f_bucket[self.buckets[f][i] as usize] += self.s[i];
            }
            let mut left_totals = vec![0.0f64; kf];
            let mut acc = 0.0;
            for c in 0..kf {
                acc += f_bucket[c];
                left_totals[c] = acc;
            }

            let mut best_left: Vec<Option<ChildPlan>> = vec![None; kf];
            let mut best_right: Vec<Option<ChildPlan>> = vec![None; kf];
            for g in 0..p {
                let kg = self.candidates[g].len();
                if kg == 0 {
                    continue;
                }
                // table[bf][bg] = summed score of rows in that bucket pair.
                let width = kg + 1;
                let mut table = vec![0.0f64; (kf + 1) * width];
                for i in 0..n {
                    let bf = self.buckets[f][i] as usize;
                    let bg = self.buckets[g][i] as usize;
                    table[bf * width + bg] += self.s[i];
                }
                let mut g_totals = vec![0.0f64; width];
                for bf in 0..=kf {
                    for bg in 0..width {
                        g_totals[bg] += table[bf * width + bg];
                    }
                }
                let mut left_cols = vec![0.0f64; width];
                for c in 0..kf {
                    for bg in 0..width {
                        left_cols[bg] += table[c * width + bg];
                    }
                    let left_total = left_totals[c];
                    let right_total = total - left_total;
                    let mut left_prefix = 0.0;
                    let mut right_prefix = 0.0;
                    for d in 0..kg {
                        left_prefix += left_cols[d];
                        let ls = left_prefix.abs() + (left_total - left_prefix).abs();
                        if best_left[c].map_or(true, |b| ls > b.score) {
                            best_left[c] = Some(ChildPlan { g, d, score: ls });
                        }
                        right_prefix += g_totals[d] - left_cols[d];
                        let rs = right_prefix.abs() + (right_total - right_prefix).abs();
                        if best_right[c].map_or(true, |b| rs > b.score) {
                            best_right[c] = Some(ChildPlan { g, d, score: rs });
                        }
                    }
                }
            }
            for c in 0..kf {
                // Some feature has candidates, so both sides found a plan.
                let (l, r) = (best_left[c].unwrap(), best_right[c].unwrap());
                let score = l.score + r.score;
                if best.as_ref().map_or(true, |b| score > b.score) {
                    best = Some(RootPlan {
                        f,
                        c,
                        left: l,
                        right: r,
                        score,
                    });
                }
            }
        }

        let Some(plan) = best else {
            return PolicyNode::Leaf { action: total > 0.0 };
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = all_rows
            .iter()
            .copied()
            .partition(|&i| self.buckets[plan.f][i] as usize <= plan.c);
        let child = |rows: &[usize], pick: ChildPlan| -> PolicyNode<S> {
            let sum_left: f64 = rows
                .iter()
                .filter(|&&i| self.buckets[pick.g][i] as usize <= pick.d)
                .map(|&i| self.s[i])
                .sum();
            let sum_right = self.sum(rows) - sum_left;
            PolicyNode::Split {
                feature: self.features[pick.g].clone(),
                threshold: self.candidates[pick.g][pick.d],
                left: Box::new(PolicyNode::Leaf {
                    action: sum_left > 0.0,
                }),
                right: Box::new(PolicyNode::Leaf {
                    action: sum_right > 0.0,
                }),
            }
        };
        PolicyNode::Split {
            feature: self.features[plan.f].clone(),
            threshold: self.candidates[plan.f][plan.c],
            left: Box::new(child(&left_rows, plan.left)),
            right: Box::new(child(&right_rows, plan.right)),
        }
    }
}

/// Fits a rework tree on conditioning matrix `z` (columns named by
/// `features`) against scores `psi_b` at cost threshold `gamma`.
pub fn fit_policy_tree<S: Scalar>(
    z: ArrayView2<S>,
    psi_b: ArrayView1<S>,
    gamma: S,
    depth: usize,
    mode: SearchMode,
    features: &[&str],
) -> Result<PolicyTree<S>> {
    let n = z.nrows();
    if n == 0 {
        return Err(Error::Validation("cannot fit a tree on zero rows".into()));
    }
    if psi_b.len() != n {
        return Err(Error::Shape(format!(
            "{} scores but {} conditioning rows",
            psi_b.len(),
            n
        )));
    }
    if features.len() != z.ncols() {
        return Err(Error::Shape(format!(
            "{} feature names for {} columns",
            features.len(),
            z.ncols()
        )));
    }
    if z.ncols() == 0 {
        return Err(Error::Validation("tree fitting needs features".into()));
    }
    if depth == 0 {
        return Err(Error::Parameter("tree depth must be at least 1".into()));
    }
    match mode {
        SearchMode::Exact if depth > EXACT_DEPTH_LIMIT => {
            return Err(Error::Parameter(format!(
                "exact search supports depth at most {EXACT_DEPTH_LIMIT}, got {depth}"
            )));
        }
        SearchMode::Greedy if depth > GREEDY_DEPTH_LIMIT => {
            return Err(Error::Parameter(format!(
                "greedy depth is capped at {GREEDY_DEPTH_LIMIT}, got {depth}"
            )));
        }
        _ => {}
    }
    if !gamma.is_finite() {
        return Err(Error::NonFinite {
            context: "reading the cost threshold".into(),
        });
    }
    for (i, &v) in psi_b.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: format!("reading scores (row {i})"),
            });
        }
    }
    for i in 0..n {
        for j in 0..z.ncols() {
            if !z[[i, j]].is_finite() {
                return Err(Error::NonFinite {
                    context: format!("reading feature {} (row {i})", features[j]),
                });
            }
        }
    }

    let s: Vec<f64> = psi_b.iter().map(|&v| (v - gamma).as_f64()).collect();
    let mut candidates = Vec::with_capacity(z.ncols());
    let mut downsampled = false;
    for j in 0..z.ncols() {
        let (cands, thinned) = candidate_thresholds(z.column(j), CANDIDATE_CAP);
        downsampled |= thinned;
        candidates.push(cands);
    }
    let buckets: Vec<Vec<u32>> = (0..z.ncols())
        .map(|j| {
            let cands = &candidates[j];
            z.column(j)
                .iter()
                .map(|&v| cands.partition_point(|&t| t < v) as u32)
                .collect()
        })
        .collect();
    let ctx = FitContext {
        z,
        s,
        candidates,
        buckets,
        features: features.iter().map(|f| f.to_string()).collect(),
    };

    let all_rows: Vec<usize> = (0..n).collect();
    let root = match (mode, depth) {
        (SearchMode::Exact, 2) => ctx.exact_depth2(),
        // A single split admits no lookahead, so the greedy sweep is already
        // exhaustive at depth 1.
        _ => ctx.grow_greedy(&all_rows, depth),
    };

    let tree = PolicyTree {
        root,
        depth,
        search: mode,
        features: ctx.features.clone(),
        gamma,
        candidate_cap: CANDIDATE_CAP,
        downsampled,
        objective: S::zero(),
        n_train: n,
    };
    let names: Vec<&str> = features.to_vec();
    let decisions = tree.decide_batch(ctx.z, &names)?;
    let mut value = 0.0f64;
    for (i, &treat) in decisions.iter().enumerate() {
        value += if treat { ctx.s[i] } else { -ctx.s[i] };
    }
    Ok(PolicyTree {
        objective: S::of_f64(value / n as f64),
        ..tree
    })
}
