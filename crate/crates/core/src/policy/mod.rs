//! Rework policies and their out-of-sample value.
//!
//! A policy maps each lot's conditioning values to a binary rework action.
//! Supported families: thresholding a fitted effect curve, thresholding the
//! lower confidence bound ("rework only where we are sure"), decision trees
//! fit on the scores, replaying the logged operator choice, and the two
//! constant policies. Evaluation prices every treated lot at a configurable
//! cost and measures the value against the never-rework baseline.

mod tree;

pub use tree::{
    fit_policy_tree, PolicyNode, PolicyTree, SearchMode, CANDIDATE_CAP, EXACT_DEPTH_LIMIT,
};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::cate::{cate_lower_bound, cate_predict, CateFit, ConfidenceBand};
use crate::data_model::Dataset;
use crate::dml::{
    mean_in_order, mean_slice, EffectEstimate, Estimator, ScoreSet, Target, DEFAULT_ALPHA,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stats::{normal_quantile, sample_sd};

/// A deterministic rework rule over named conditioning columns.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum Policy<S: Scalar> {
    /// Rework where the fitted effect curve clears `gamma`.
    CateThreshold { fit: CateFit<S>, gamma: S },
    /// Rework where the band's lower bound clears `gamma`. Refuses to
    /// evaluate outside the band grid.
    ConservativeThreshold { band: ConfidenceBand<S>, gamma: S },
    /// Fitted decision tree.
    Tree(PolicyTree<S>),
    /// Replays a logged 0/1 decision column.
    Observed { column: String },
    AlwaysTreat,
    NeverTreat,
}

/// Rework where the fitted curve predicts at least `gamma` effect.
pub fn threshold_policy<S: Scalar>(fit: CateFit<S>, gamma: S) -> Result<Policy<S>> {
    check_gamma(gamma)?;
    Ok(Policy::CateThreshold { fit, gamma })
}

/// Rework only where the band's lower bound already clears `gamma`; its
/// treated set can only shrink relative to [`threshold_policy`] at equal
/// `gamma`.
pub fn conservative_policy<S: Scalar>(band: ConfidenceBand<S>, gamma: S) -> Result<Policy<S>> {
    check_gamma(gamma)?;
    if band.grid.ncols() != 1 {
        return Err(Error::Parameter(
            "conservative policies need a one-dimensional band".into(),
        ));
    }
    Ok(Policy::ConservativeThreshold { band, gamma })
}

fn check_gamma<S: Scalar>(gamma: S) -> Result<()> {
    if !gamma.is_finite() || gamma < S::zero() {
        return Err(Error::Parameter(format!(
            "threshold gamma must be finite and nonnegative, got {}",
            gamma.as_f64()
        )));
    }
    Ok(())
}

impl<S: Scalar> Policy<S> {
    /// Human-readable family name; distinguishes 1D from 2D curve
    /// thresholds by the basis arity.
    pub fn form_name(&self) -> &'static str {
        match self {
            Policy::CateThreshold { fit, .. } => {
                if fit.basis.arity() == 2 {
                    "cate_threshold_2d"
                } else {
                    "cate_threshold_1d"
                }
            }
            Policy::ConservativeThreshold { .. } => "conservative_threshold",
            Policy::Tree(_) => "tree",
            Policy::Observed { .. } => "observed",
            Policy::AlwaysTreat => "always_treat",
            Policy::NeverTreat => "never_treat",
        }
    }

    /// Conditioning columns the policy reads.
    pub fn z_columns(&self) -> Vec<String> {
        match self {
            Policy::CateThreshold { fit, .. } => fit.z_columns.clone(),
            Policy::ConservativeThreshold { band, .. } => band.z_columns.clone(),
            Policy::Tree(t) => t.features.clone(),
            Policy::Observed { column } => vec![column.clone()],
            Policy::AlwaysTreat | Policy::NeverTreat => Vec::new(),
        }
    }

    /// Applies the policy to every row of `z`, whose columns are named by
    /// `columns`.
    pub fn decide_batch(&self, z: ArrayView2<S>, columns: &[&str]) -> Result<Vec<bool>> {
        if z.ncols() != columns.len() {
            return Err(Error::Shape(format!(
                "{} columns named for a matrix with {}",
                columns.len(),
                z.ncols()
            )));
        }
        let n = z.nrows();
        match self {
            Policy::AlwaysTreat => Ok(vec![true; n]),
            Policy::NeverTreat => Ok(vec![false; n]),
            Policy::Observed { column } => {
                let idx = find_column(columns, column)?;
                let mut out = Vec::with_capacity(n);
                for i in 0..n {
                    let v = z[[i, idx]];
                    if v == S::zero() {
                        out.push(false);
                    } else if v == S::one() {
                        out.push(true);
                    } else {
                        return Err(Error::Validation(format!(
                            "observed decision column `{column}` must be 0/1, row {i} holds {}",
                            v.as_f64()
                        )));
                    }
                }
                Ok(out)
            }
            Policy::CateThreshold { fit, gamma } => {
                let sub = gather_columns(z, columns, &fit.z_columns)?;
                let pred = cate_predict(fit, sub.view())?;
                Ok(pred.theta.iter().map(|&t| t >= *gamma).collect())
            }
            Policy::ConservativeThreshold { band, gamma } => {
                let idx = find_column(columns, &band.z_columns[0])?;
                let mut out = Vec::with_capacity(n);
                for i in 0..n {
                    let bound = cate_lower_bound(band, z[[i, idx]])?;
                    out.push(bound >= *gamma);
                }
                Ok(out)
            }
            Policy::Tree(t) => t.decide_batch(z, columns),
        }
    }

    /// Single-row convenience wrapper around [`Policy::decide_batch`].
    pub fn decide(&self, row: ArrayView1<S>, columns: &[&str]) -> Result<bool> {
        let wide = row.insert_axis(Axis(0));
        Ok(self.decide_batch(wide, columns)?[0])
    }
}

fn find_column(columns: &[&str], name: &str) -> Result<usize> {
    columns
        .iter()
        .position(|&c| c == name)
        .ok_or_else(|| Error::MissingFeature { name: name.into() })
}

/// The feature matrix with the logged `treatment` column appended, so
/// feature-driven policies and observed-decision replay read one table.
pub fn dataset_decision_frame<S: Scalar>(d: &Dataset<S>) -> (Array2<S>, Vec<String>) {
    let features = d.features();
    let n = d.n();
    let p = features.ncols();
    let mut frame = Array2::zeros((n, p + 1));
    for j in 0..p {
        frame.column_mut(j).assign(&features.column(j));
    }
    for (i, treated) in d.treatments().into_iter().enumerate() {
        frame[[i, p]] = if treated { S::one() } else { S::zero() };
    }
    let mut names: Vec<String> = d.feature_names().to_vec();
    names.push("treatment".to_string());
    (frame, names)
}

/// Copies the named columns of `z` into a dense matrix, in `wanted` order.
fn gather_columns<S: Scalar>(
    z: ArrayView2<S>,
    columns: &[&str],
    wanted: &[String],
) -> Result<Array2<S>> {
    let mut out = Array2::zeros((z.nrows(), wanted.len()));
    for (j, name) in wanted.iter().enumerate() {
        let idx = find_column(columns, name)?;
        out.column_mut(j).assign(&z.column(idx));
    }
    Ok(out)
}

/// Per-row classification weights and labels for the score-sign problem at
/// cost threshold `gamma`: weight `|psi_b - gamma|`, label the sign with
/// ties assigned to "do not rework".
pub fn weighted_classification_targets<S: Scalar>(
    psi_b: ArrayView1<S>,
    gamma: S,
) -> (Array1<S>, Vec<i8>) {
    let mut weights = Array1::zeros(psi_b.len());
    let mut labels = Vec::with_capacity(psi_b.len());
    for (i, &p) in psi_b.iter().enumerate() {
        let s = p - gamma;
        weights[i] = s.abs();
        labels.push(if s > S::zero() { 1 } else { -1 });
    }
    (weights, labels)
}

/// Value of a policy at one cost level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostValue<S: Scalar> {
    pub cost: f64,
    pub value: EffectEstimate<S>,
}

/// Held-out evaluation of one policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyEvalReport<S: Scalar> {
    pub form: String,
    /// One row per cost level: mean of `pi * (psi_b - cost)` with its
    /// normal-approximation interval.
    pub values: Vec<CostValue<S>>,
    /// Mean score over the policy-treated group; absent when the policy
    /// treats nobody.
    pub gate: Option<EffectEstimate<S>>,
    pub share_treated: S,
    pub n: usize,
}

/// Evaluates a policy on held-out population-effect scores.
///
/// The value at cost `c` is the mean of `pi_i * (psi_b_i - c)`: the per-lot
/// yield gain of following the policy instead of never reworking, net of a
/// per-rework cost. Scores must come from data the policy never saw during
/// fitting, or the value is biased upward.
pub fn evaluate_policy<S: Scalar>(
    policy: &Policy<S>,
    scores: &ScoreSet<S>,
    z: ArrayView2<S>,
    columns: &[&str],
    cost_levels: &[f64],
) -> Result<PolicyEvalReport<S>> {
    if scores.target != Target::Ate {
        return Err(Error::EstimandMismatch {
            expected: Target::Ate.to_string(),
            got: scores.target.to_string(),
        });
    }
    let n = scores.n();
    if n != z.nrows() {
        return Err(Error::Shape(format!(
            "{} scores but {} conditioning rows",
            n,
            z.nrows()
        )));
    }
    if n < 2 {
        return Err(Error::Validation(format!(
            "policy evaluation needs at least two lots, got {n}"
        )));
    }
    if cost_levels.is_empty() {
        return Err(Error::Parameter("no cost levels requested".into()));
    }
    for &c in cost_levels {
        if !c.is_finite() {
            return Err(Error::Parameter(format!("cost level {c} is not finite")));
        }
    }
    let pi = policy.decide_batch(z, columns)?;

    let mut values = Vec::with_capacity(cost_levels.len());
    for &c in cost_levels {
        let cost = S::of_f64(c);
        let contrib: Vec<S> = pi
            .iter()
            .zip(scores.psi_b.iter())
            .map(|(&treat, &b)| if treat { b - cost } else { S::zero() })
            .collect();
        let theta_hat = mean_in_order(ArrayView1::from(&contrib[..]));
        let std_err = sample_sd(&contrib) / S::of_usize(n).sqrt();
        let zc = S::of_f64(normal_quantile(1.0 - DEFAULT_ALPHA / 2.0));
        values.push(CostValue {
            cost: c,
            value: EffectEstimate {
                target: Target::Ate,
                estimator: Estimator::Aipw,
                theta_hat,
                std_err,
                ci_low: theta_hat - zc * std_err,
                ci_high: theta_hat + zc * std_err,
                n,
                alpha: DEFAULT_ALPHA,
            },
        });
    }

    let treated: Vec<S> = pi
        .iter()
        .zip(scores.psi_b.iter())
        .filter(|(&t, _)| t)
        .map(|(_, &b)| b)
        .collect();
    let n_treated = treated.len();
    let gate = if n_treated == 0 {
        None
    } else {
        let theta_hat = mean_slice(&treated);
        // A single treated lot has no spread to estimate.
        let std_err = if n_treated >= 2 {
            sample_sd(&treated) / S::of_usize(n_treated).sqrt()
        } else {
            S::zero()
        };
        let zc = S::of_f64(normal_quantile(1.0 - DEFAULT_ALPHA / 2.0));
        Some(EffectEstimate {
            target: Target::Ate,
            estimator: Estimator::Aipw,
            theta_hat,
            std_err,
            ci_low: theta_hat - zc * std_err,
            ci_high: theta_hat + zc * std_err,
            n: n_treated,
            alpha: DEFAULT_ALPHA,
        })
    };

    Ok(PolicyEvalReport {
        form: policy.form_name().to_string(),
        values,
        gate,
        share_treated: S::of_usize(n_treated) / S::of_usize(n),
        n,
    })
}

/// A policy's true value against the best of its own class, both measured
/// on oracle effect differences.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegretReport<S: Scalar> {
    /// Mean oracle effect of the lots this policy treats.
    pub policy_value: S,
    /// Best mean over the policy's class (always at least `policy_value`).
    pub best_value: S,
    pub regret: S,
    /// Which class the maximum ranged over.
    pub class: String,
}

/// Regret of a policy against the best member of its own class, evaluated
/// on true per-lot effects `oracle_delta` (available from simulated data).
///
/// The class optimum is found by brute force: exhaustive tree search for
/// tree policies (depth at most 2), a cutoff sweep for threshold policies,
/// and the two constant rules for everything else. The policy's own value
/// joins the maximum, so regret is never negative.
pub fn regret_vs_oracle<S: Scalar>(
    policy: &Policy<S>,
    z: ArrayView2<S>,
    columns: &[&str],
    oracle_delta: ArrayView1<S>,
) -> Result<RegretReport<S>> {
    let n = z.nrows();
    if oracle_delta.len() != n {
        return Err(Error::OracleMismatch {
            oracle: oracle_delta.len(),
            data: n,
        });
    }
    if n == 0 {
        return Err(Error::Validation("cannot compute regret on zero rows".into()));
    }
    for (i, &d) in oracle_delta.iter().enumerate() {
        if !d.is_finite() {
            return Err(Error::NonFinite {
                context: format!("reading oracle effects (row {i})"),
            });
        }
    }
    let pi = policy.decide_batch(z, columns)?;
    let policy_value = mean_of_treated(&pi, oracle_delta, n);

    let (class_best, class) = match policy {
        Policy::Tree(t) => {
            if t.depth > EXACT_DEPTH_LIMIT {
                return Err(Error::Parameter(format!(
                    "regret enumeration covers tree depth at most {EXACT_DEPTH_LIMIT}, got {}",
                    t.depth
                )));
            }
            let names: Vec<&str> = t.features.iter().map(|f| f.as_str()).collect();
            let sub = gather_columns(z, columns, &t.features)?;
            let best_tree = fit_policy_tree(
                sub.view(),
                oracle_delta,
                S::zero(),
                t.depth,
                SearchMode::Exact,
                &names,
            )?;
            let best_pi = best_tree.decide_batch(sub.view(), &names)?;
            (
                mean_of_treated(&best_pi, oracle_delta, n),
                format!("depth-{} trees on the same features", t.depth),
            )
        }
        Policy::CateThreshold { fit, .. } => {
            let sub = gather_columns(z, columns, &fit.z_columns)?;
            let pred = cate_predict(fit, sub.view())?;
            let signal: Vec<S> = pred.theta.to_vec();
            (
                best_cutoff_value(&signal, oracle_delta, n),
                "nonnegative cutoffs on the fitted curve".to_string(),
            )
        }
        Policy::ConservativeThreshold { band, .. } => {
            let idx = find_column(columns, &band.z_columns[0])?;
            let mut signal = Vec::with_capacity(n);
            for i in 0..n {
                signal.push(cate_lower_bound(band, z[[i, idx]])?);
            }
            (
                best_cutoff_value(&signal, oracle_delta, n),
                "nonnegative cutoffs on the lower band".to_string(),
            )
        }
        Policy::Observed { .. } | Policy::AlwaysTreat | Policy::NeverTreat => {
            let always = mean_in_order(oracle_delta);
            (
                always.max(S::zero()),
                "constant policies".to_string(),
            )
        }
    };

    let best_value = class_best.max(policy_value);
    Ok(RegretReport {
        policy_value,
        best_value,
        regret: best_value - policy_value,
        class,
    })
}

fn mean_of_treated<S: Scalar>(pi: &[bool], delta: ArrayView1<S>, n: usize) -> S {
    let mut total = S::zero();
    for (i, &treat) in pi.iter().enumerate() {
        if treat {
            total += delta[i];
        }
    }
    total / S::of_usize(n)
}

/// Best value of `1{signal >= cutoff}` over nonnegative cutoffs, by sweeping
/// the distinct signal values from above.
fn best_cutoff_value<S: Scalar>(signal: &[S], delta: ArrayView1<S>, n: usize) -> S {
    let mut order: Vec<usize> = (0..signal.len()).collect();
    order.sort_by(|&a, &b| {
        signal[b]
            .partial_cmp(&signal[a])
            .expect("finite signals order totally")
    });
    // Never treating (cutoff above every signal) is always available.
    let mut best = S::zero();
    let mut acc = S::zero();
    let mut k = 0;
    while k < order.len() {
        let v = signal[order[k]];
        if v < S::zero() {
            break;
        }
        // Take the whole tie group: a cutoff at v treats every row >= v.
        let mut j = k;
        while j < order.len() && signal[order[j]] == v {
            acc += delta[order[j]];
            j += 1;
        }
        best = best.max(acc / S::of_usize(n));
        k = j;
    }
    best
}
