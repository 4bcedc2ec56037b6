//! Cross-fitted nuisances and debiased treatment-effect estimation.
//!
//! The estimators here follow the orthogonal-score recipe: fit outcome and
//! propensity nuisances out of fold, form per-lot influence scores, and
//! average. Because the scores are Neyman-orthogonal, slow nuisance
//! convergence contaminates the estimate only at second order.

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data_model::Dataset;
use crate::error::{Error, Result};
use crate::learners::{
    fit_classifier, fit_regressor, kfold_split, select_rows, FoldAssignment, LearnerSpec,
    NuisanceRmse,
};
use crate::rng::derive_seed;
use crate::scalar::Scalar;
use crate::stats::{normal_quantile, sample_sd, sample_var};

/// Default propensity clipping range.
pub const DEFAULT_CLIP: (f64, f64) = (0.025, 0.975);

/// Default fold count for cross-fitting.
pub const DEFAULT_FOLDS: usize = 5;

/// Default two-sided level for effect confidence intervals.
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Which average effect a score set identifies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// Average treatment effect over the population.
    Ate,
    /// Average treatment effect over treated lots.
    Att,
}

impl std::fmt::Display for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Target::Ate => "ate",
            Target::Att => "att",
        })
    }
}

/// Per-fold fit diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldDiag {
    pub fold: usize,
    pub g0_ridge_fallback: bool,
    pub g1_ridge_fallback: bool,
}

/// Out-of-fold nuisance predictions for every lot.
///
/// `m_raw` keeps the classifier output before clipping so calibration
/// diagnostics see the honest values; every score computation uses the
/// clipped `m_hat`.
#[derive(Debug, Clone)]
pub struct NuisanceEstimates<S: Scalar> {
    pub g0_hat: Array1<S>,
    pub g1_hat: Array1<S>,
    pub m_raw: Array1<S>,
    pub m_hat: Array1<S>,
    pub clip_bounds: (f64, f64),
    pub clipped_count: usize,
    pub folds: FoldAssignment,
    pub fold_diags: Vec<FoldDiag>,
}

impl<S: Scalar> NuisanceEstimates<S> {
    /// Assembles estimates from externally computed predictions. Used for
    /// replaying persisted predictions and for injecting exact values in
    /// closed-form checks.
    pub fn from_parts(
        g0_hat: Array1<S>,
        g1_hat: Array1<S>,
        m_raw: Array1<S>,
        clip_bounds: (f64, f64),
        folds: FoldAssignment,
    ) -> Result<Self> {
        let n = folds.n();
        if g0_hat.len() != n || g1_hat.len() != n || m_raw.len() != n {
            return Err(Error::Shape(format!(
                "nuisance vectors must all have the fold assignment's length {n}"
            )));
        }
        let (m_hat, clipped_count) = clip_propensity(m_raw.view(), clip_bounds.0, clip_bounds.1)?;
        Ok(Self {
            g0_hat,
            g1_hat,
            m_raw,
            m_hat,
            clip_bounds,
            clipped_count,
            folds,
            fold_diags: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.folds.n()
    }
}

/// Clamps propensities into `[lo, hi]` and counts how many moved.
pub fn clip_propensity<S: Scalar>(
    m_raw: ArrayView1<S>,
    lo: f64,
    hi: f64,
) -> Result<(Array1<S>, usize)> {
    if !(0.0 < lo && lo < hi && hi < 1.0) {
        return Err(Error::Parameter(format!(
            "clip bounds must satisfy 0 < lo < hi < 1, got ({lo}, {hi})"
        )));
    }
    let lo_s = S::of_f64(lo);
    let hi_s = S::of_f64(hi);
    let mut clipped = 0usize;
    let m_hat = m_raw.mapv(|v| {
        if v < lo_s {
            clipped += 1;
            lo_s
        } else if v > hi_s {
            clipped += 1;
            hi_s
        } else {
            v
        }
    });
    Ok((m_hat, clipped))
}

/// Cross-fits outcome and propensity nuisances on a dataset's adjustment
/// columns (per-chip coordinates, invalid count, workload).
pub fn crossfit_nuisances<S: Scalar>(
    d: &Dataset<S>,
    g_spec: &LearnerSpec,
    m_spec: &LearnerSpec,
    k: usize,
    seed: u64,
) -> Result<NuisanceEstimates<S>> {
    let x = d.submatrix(&d.nuisance_column_indices());
    crossfit_nuisances_on(
        x.view(),
        d.yields().view(),
        &d.treatments(),
        g_spec,
        m_spec,
        k,
        seed,
        DEFAULT_CLIP,
    )
}

/// Cross-fitting core on explicit arrays.
///
/// Each fold's predictions come from models trained strictly on the
/// complement: the treated-arm outcome model on treated complement rows, the
/// control-arm model on control complement rows, and the propensity on all
/// of them. Per-fold learner seeds derive from `seed` so refitting any fold
/// is reproducible in isolation.
#[allow(clippy::too_many_arguments)]
pub fn crossfit_nuisances_on<S: Scalar>(
    x: ArrayView2<S>,
    y: ArrayView1<S>,
    a: &[bool],
    g_spec: &LearnerSpec,
    m_spec: &LearnerSpec,
    k: usize,
    seed: u64,
    clip: (f64, f64),
) -> Result<NuisanceEstimates<S>> {
    let n = x.nrows();
    if y.len() != n || a.len() != n {
        return Err(Error::Shape(format!(
            "features have {n} rows but outcomes/treatments have {}/{}",
            y.len(),
            a.len()
        )));
    }
    g_spec.validate()?;
    m_spec.validate()?;
    let folds = kfold_split(n, k, seed)?;

    struct FoldOutput<S> {
        rows: Vec<usize>,
        g0: Array1<S>,
        g1: Array1<S>,
        m: Array1<S>,
        diag: FoldDiag,
    }

    let run_fold = |fold: usize| -> Result<FoldOutput<S>> {
        let train = folds.rows_out(fold);
        let test = folds.rows_in(fold);
        let treated: Vec<usize> = train.iter().copied().filter(|&i| a[i]).collect();
        let control: Vec<usize> = train.iter().copied().filter(|&i| !a[i]).collect();
        if treated.is_empty() {
            return Err(Error::FoldDegeneracy { fold, group: "treated".into() });
        }
        if control.is_empty() {
            return Err(Error::FoldDegeneracy { fold, group: "control".into() });
        }

        let fit_arm = |rows: &[usize], label: &str| -> Result<crate::learners::FittedModel<S>> {
            let xr = select_rows(x, rows);
            let yr: Array1<S> = rows.iter().map(|&i| y[i]).collect();
            let spec = g_spec.clone().with_seed(derive_seed(seed, label, fold as u64));
            fit_regressor(&spec, xr.view(), yr.view())
        };
        let g1_model = fit_arm(&treated, "g1")?;
        let g0_model = fit_arm(&control, "g0")?;

        let xm = select_rows(x, &train);
        let am: Array1<S> = train
            .iter()
            .map(|&i| if a[i] { S::one() } else { S::zero() })
            .collect();
        let m_spec_fold = m_spec.clone().with_seed(derive_seed(seed, "m", fold as u64));
        let m_model = fit_classifier(&m_spec_fold, xm.view(), am.view())?;

        let xt = select_rows(x, &test);
        Ok(FoldOutput {
            g0: g0_model.predict(xt.view())?,
            g1: g1_model.predict(xt.view())?,
            m: m_model.predict(xt.view())?,
            diag: FoldDiag {
                fold,
                g0_ridge_fallback: g0_model.ridge_fallback,
                g1_ridge_fallback: g1_model.ridge_fallback,
            },
            rows: test,
        })
    };

    // Folds are independent; run them in parallel but assemble in fold order
    // so results are identical to the sequential pass.
    use rayon::prelude::*;
    let outputs: Vec<Result<FoldOutput<S>>> = (0..k).into_par_iter().map(run_fold).collect();

    let mut g0_hat = Array1::zeros(n);
    let mut g1_hat = Array1::zeros(n);
    let mut m_raw = Array1::zeros(n);
    let mut fold_diags = Vec::with_capacity(k);
    for out in outputs {
        let out = out?;
        for (pos, &i) in out.rows.iter().enumerate() {
            g0_hat[i] = out.g0[pos];
            g1_hat[i] = out.g1[pos];
            m_raw[i] = out.m[pos];
        }
        fold_diags.push(out.diag);
    }

    let (m_hat, clipped_count) = clip_propensity(m_raw.view(), clip.0, clip.1)?;
    Ok(NuisanceEstimates {
        g0_hat,
        g1_hat,
        m_raw,
        m_hat,
        clip_bounds: clip,
        clipped_count,
        folds,
        fold_diags,
    })
}

/// Influence scores for one estimand: the estimate solves
/// `mean(psi_a) * theta + mean(psi_b) = 0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreSet<S: Scalar> {
    pub target: Target,
    pub psi_a: Array1<S>,
    pub psi_b: Array1<S>,
}

impl<S: Scalar> ScoreSet<S> {
    pub fn n(&self) -> usize {
        self.psi_b.len()
    }
}

/// Doubly robust scores for the population average effect.
pub fn aipw_scores<S: Scalar>(d: &Dataset<S>, nuis: &NuisanceEstimates<S>) -> Result<ScoreSet<S>> {
    aipw_scores_from(d.yields().view(), &d.treatments(), nuis)
}

pub fn aipw_scores_from<S: Scalar>(
    y: ArrayView1<S>,
    a: &[bool],
    nuis: &NuisanceEstimates<S>,
) -> Result<ScoreSet<S>> {
    let n = check_score_inputs(y, a, nuis)?;
    let mut psi_b = Array1::zeros(n);
    for i in 0..n {
        let g0 = nuis.g0_hat[i];
        let g1 = nuis.g1_hat[i];
        let m = nuis.m_hat[i];
        let base = g1 - g0;
        let adj = if a[i] {
            (y[i] - g1) / m
        } else {
            -(y[i] - g0) / (S::one() - m)
        };
        psi_b[i] = base + adj;
    }
    Ok(ScoreSet {
        target: Target::Ate,
        psi_a: Array1::from_elem(n, -S::one()),
        psi_b,
    })
}

/// Doubly robust scores for the effect on treated lots. Only the control-arm
/// outcome model enters; treated lots contribute their realized outcomes.
pub fn att_scores<S: Scalar>(d: &Dataset<S>, nuis: &NuisanceEstimates<S>) -> Result<ScoreSet<S>> {
    att_scores_from(d.yields().view(), &d.treatments(), nuis)
}

pub fn att_scores_from<S: Scalar>(
    y: ArrayView1<S>,
    a: &[bool],
    nuis: &NuisanceEstimates<S>,
) -> Result<ScoreSet<S>> {
    let n = check_score_inputs(y, a, nuis)?;
    let n_treated = a.iter().filter(|&&t| t).count();
    if n_treated == 0 {
        return Err(Error::DegenerateClass(
            "treated-effect scores need at least one treated lot".into(),
        ));
    }
    let p_hat = S::of_usize(n_treated) / S::of_usize(n);
    let mut psi_a = Array1::zeros(n);
    let mut psi_b = Array1::zeros(n);
    for i in 0..n {
        let resid0 = y[i] - nuis.g0_hat[i];
        let m = nuis.m_hat[i];
        if a[i] {
            psi_a[i] = -S::one() / p_hat;
            psi_b[i] = resid0 / p_hat;
        } else {
            psi_a[i] = S::zero();
            psi_b[i] = -(m * resid0) / ((S::one() - m) * p_hat);
        }
    }
    Ok(ScoreSet {
        target: Target::Att,
        psi_a,
        psi_b,
    })
}

fn check_score_inputs<S: Scalar>(
    y: ArrayView1<S>,
    a: &[bool],
    nuis: &NuisanceEstimates<S>,
) -> Result<usize> {
    let n = y.len();
    if a.len() != n || nuis.n() != n {
        return Err(Error::Shape(format!(
            "scores need aligned inputs: {} outcomes, {} treatments, {} nuisance rows",
            n,
            a.len(),
            nuis.n()
        )));
    }
    if n == 0 {
        return Err(Error::Validation("cannot score an empty dataset".into()));
    }
    Ok(n)
}

/// Which formula produced an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Aipw,
    Naive,
}

/// A point estimate with its normal-approximation confidence interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectEstimate<S: Scalar> {
    pub target: Target,
    pub estimator: Estimator,
    pub theta_hat: S,
    pub std_err: S,
    pub ci_low: S,
    pub ci_high: S,
    pub n: usize,
    pub alpha: f64,
}

/// Solves the empirical moment condition and attaches a two-sided interval
/// at level `1 - alpha` (0.05 by default).
pub fn estimate_ate<S: Scalar>(scores: &ScoreSet<S>) -> Result<EffectEstimate<S>> {
    estimate_with_alpha(scores, DEFAULT_ALPHA)
}

pub fn estimate_with_alpha<S: Scalar>(
    scores: &ScoreSet<S>,
    alpha: f64,
) -> Result<EffectEstimate<S>> {
    let n = scores.n();
    if n < 2 {
        return Err(Error::Validation(format!(
            "effect estimation needs at least two lots, got {n}"
        )));
    }
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::Parameter(format!(
            "interval level alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let mean_a = mean_in_order(scores.psi_a.view());
    if mean_a == S::zero() {
        return Err(Error::DegenerateSupport(
            "score slope averages to zero; the moment condition has no solution".into(),
        ));
    }
    let mean_b = mean_in_order(scores.psi_b.view());
    let theta_hat = -mean_b / mean_a;

    // Plug-in influence values; their sample standard deviation over
    // `sqrt(n)`, rescaled by the slope mean, is the standard error.
    let influence: Vec<S> = scores
        .psi_a
        .iter()
        .zip(scores.psi_b.iter())
        .map(|(&pa, &pb)| pa * theta_hat + pb)
        .collect();
    let sigma = sample_sd(&influence) / mean_a.abs();
    let std_err = sigma / S::of_usize(n).sqrt();

    let z = S::of_f64(normal_quantile(1.0 - alpha / 2.0));
    Ok(EffectEstimate {
        target: scores.target,
        estimator: Estimator::Aipw,
        theta_hat,
        std_err,
        ci_low: theta_hat - z * std_err,
        ci_high: theta_hat + z * std_err,
        n,
        alpha,
    })
}

/// Mean with left-to-right summation; several downstream identities are
/// checked bitwise against this order.
pub(crate) fn mean_in_order<S: Scalar>(v: ArrayView1<S>) -> S {
    let mut acc = S::zero();
    for &x in v.iter() {
        acc += x;
    }
    acc / S::of_usize(v.len())
}

pub(crate) fn mean_slice<S: Scalar>(v: &[S]) -> S {
    let mut acc = S::zero();
    for &x in v {
        acc += x;
    }
    acc / S::of_usize(v.len())
}

/// Unadjusted two-group comparison: difference of group means with the
/// two-sample standard error. Kept as the benchmark the debiased estimate is
/// judged against.
pub fn naive_ate<S: Scalar>(y: ArrayView1<S>, a: &[bool]) -> Result<EffectEstimate<S>> {
    if y.len() != a.len() {
        return Err(Error::Shape(format!(
            "{} outcomes but {} treatments",
            y.len(),
            a.len()
        )));
    }
    let treated: Vec<S> = y
        .iter()
        .zip(a.iter())
        .filter(|(_, &t)| t)
        .map(|(&v, _)| v)
        .collect();
    let control: Vec<S> = y
        .iter()
        .zip(a.iter())
        .filter(|(_, &t)| !t)
        .map(|(&v, _)| v)
        .collect();
    if treated.len() < 2 || control.len() < 2 {
        return Err(Error::DegenerateClass(format!(
            "naive comparison needs two lots per group, got {} treated and {} control",
            treated.len(),
            control.len()
        )));
    }
    let n1 = treated.len();
    let n0 = control.len();
    let theta_hat = mean_slice(&treated) - mean_slice(&control);
    let var = sample_var(&treated) / S::of_usize(n1) + sample_var(&control) / S::of_usize(n0);
    let std_err = var.sqrt();
    let z = S::of_f64(normal_quantile(1.0 - DEFAULT_ALPHA / 2.0));
    Ok(EffectEstimate {
        target: Target::Ate,
        estimator: Estimator::Naive,
        theta_hat,
        std_err,
        ci_low: theta_hat - z * std_err,
        ci_high: theta_hat + z * std_err,
        n: n1 + n0,
        alpha: DEFAULT_ALPHA,
    })
}

/// Prediction-quality table for a fitted nuisance triple.
pub fn rmse_report<S: Scalar>(d: &Dataset<S>, nuis: &NuisanceEstimates<S>) -> NuisanceRmse {
    crate::learners::nuisance_rmse(
        d.yields().view(),
        &d.treatments(),
        nuis.g0_hat.view(),
        nuis.g1_hat.view(),
        nuis.m_raw.view(),
    )
}
