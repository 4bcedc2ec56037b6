//! Robustness of effect and value estimates to unobserved confounding.
//!
//! All estimates here assume the adjustment set closes every backdoor path.
//! This module quantifies what a violation would cost: an explicit bound on
//! the omitted-variable bias as a function of hypothetical confounder
//! strength, the strength needed to explain the whole estimate away, and
//! empirical benchmarks obtained by deliberately omitting observed columns
//! and refitting. None of it estimates actual unobserved confounding; it
//! prices hypothetical amounts of it.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data_model::Dataset;
use crate::dml::{
    aipw_scores, crossfit_nuisances_on, estimate_ate, mean_in_order, NuisanceEstimates, ScoreSet,
    Target, DEFAULT_ALPHA,
};
use crate::error::{Error, Result};
use crate::learners::LearnerSpec;
use crate::policy::{dataset_decision_frame, Policy};
use crate::scalar::Scalar;
use crate::stats::{correlation, normal_quantile, sample_sd};

/// Bisection tolerance on the robustness value.
pub const BISECTION_TOL: f64 = 1e-10;

/// Iteration cap for the bisection solver.
pub const BISECTION_MAX_ITER: usize = 200;

// Confounding strengths live in [0, 1); the solver stays strictly inside.
const STRENGTH_CEIL: f64 = 1.0 - 1e-9;

/// Hypothetical unobserved-confounder strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfoundingScenario<S: Scalar> {
    /// Share of residual outcome variance the confounder would explain.
    pub zeta_y: S,
    /// Relative gain in the treatment representer's second moment.
    pub zeta_d: S,
    /// Alignment between the confounder's outcome and treatment loadings.
    pub rho: S,
}

impl<S: Scalar> ConfoundingScenario<S> {
    pub fn new(zeta_y: S, zeta_d: S, rho: S) -> Result<Self> {
        let sc = Self { zeta_y, zeta_d, rho };
        sc.validate()?;
        Ok(sc)
    }

    /// Moderate reference point: five percent strength on both channels,
    /// worst-case alignment.
    pub fn reference() -> Self {
        Self {
            zeta_y: S::of_f64(0.05),
            zeta_d: S::of_f64(0.05),
            rho: S::one(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: S| v.is_finite() && v >= S::zero() && v < S::one();
        if !unit(self.zeta_y) {
            return Err(Error::Parameter(format!(
                "zeta_y must lie in [0, 1), got {}",
                self.zeta_y.as_f64()
            )));
        }
        if !unit(self.zeta_d) {
            return Err(Error::Parameter(format!(
                "zeta_d must lie in [0, 1), got {}",
                self.zeta_d.as_f64()
            )));
        }
        if !(self.rho.is_finite() && self.rho.abs() <= S::one()) {
            return Err(Error::Parameter(format!(
                "rho must lie in [-1, 1], got {}",
                self.rho.as_f64()
            )));
        }
        Ok(())
    }
}

/// Outcome-residual and representer scales `(sigma, nu)` entering every
/// bound: `sigma^2` is the mean squared outcome residual at the observed
/// arm, `nu^2` the mean squared inverse-propensity representer
/// `a/m - (1-a)/(1-m)`.
pub fn moment_scales<S: Scalar>(
    y: ArrayView1<S>,
    a: &[bool],
    nuis: &NuisanceEstimates<S>,
) -> Result<(S, S)> {
    scales_masked(y, a, nuis, None)
}

/// Same scales with the representer moment restricted to masked rows; the
/// outcome scale is model-wide either way.
fn scales_masked<S: Scalar>(
    y: ArrayView1<S>,
    a: &[bool],
    nuis: &NuisanceEstimates<S>,
    mask: Option<&[bool]>,
) -> Result<(S, S)> {
    let n = nuis.n();
    if y.len() != n || a.len() != n || mask.map_or(false, |m| m.len() != n) {
        return Err(Error::Shape(format!(
            "scale inputs disagree: {} outcomes, {} treatments for {n} nuisance rows",
            y.len(),
            a.len()
        )));
    }
    if n == 0 {
        return Err(Error::Validation("no rows to compute scales from".into()));
    }
    let mut sse = S::zero();
    let mut repr = S::zero();
    for i in 0..n {
        let fitted = if a[i] { nuis.g1_hat[i] } else { nuis.g0_hat[i] };
        let r = y[i] - fitted;
        sse += r * r;
        if mask.map_or(true, |m| m[i]) {
            let alpha = representer(a[i], nuis.m_hat[i]);
            repr += alpha * alpha;
        }
    }
    let denom = S::of_usize(n);
    Ok(((sse / denom).sqrt(), (repr / denom).sqrt()))
}

fn representer<S: Scalar>(a: bool, m: S) -> S {
    if a {
        S::one() / m
    } else {
        -(S::one() / (S::one() - m))
    }
}

/// Worst-case bias for given scales under a confounding scenario:
/// `|rho| * sigma * nu * sqrt(zeta_y * zeta_d / (1 - zeta_d))`.
///
/// Zero whenever any scenario component is zero, and monotone
/// non-decreasing in each of `|rho|`, `zeta_y`, `zeta_d`.
pub fn bound_value<S: Scalar>(sigma: S, nu: S, sc: &ConfoundingScenario<S>) -> Result<S> {
    sc.validate()?;
    if !(sigma.is_finite() && sigma >= S::zero() && nu.is_finite() && nu >= S::zero()) {
        return Err(Error::Parameter(format!(
            "scales must be finite and nonnegative, got sigma {} nu {}",
            sigma.as_f64(),
            nu.as_f64()
        )));
    }
    Ok(sc.rho.abs() * sigma * nu * (sc.zeta_y * sc.zeta_d / (S::one() - sc.zeta_d)).sqrt())
}

/// Worst-case omitted-variable bias of the effect estimate under `sc`.
pub fn ovb_bound<S: Scalar>(
    scores: &ScoreSet<S>,
    nuis: &NuisanceEstimates<S>,
    d: &Dataset<S>,
    sc: &ConfoundingScenario<S>,
) -> Result<S> {
    require_ate(scores)?;
    check_rows(scores, nuis, d)?;
    let (sigma, nu) = moment_scales(d.yields().view(), &d.treatments(), nuis)?;
    bound_value(sigma, nu, sc)
}

fn require_ate<S: Scalar>(scores: &ScoreSet<S>) -> Result<()> {
    if scores.target != Target::Ate {
        return Err(Error::EstimandMismatch {
            expected: Target::Ate.to_string(),
            got: scores.target.to_string(),
        });
    }
    Ok(())
}

fn check_rows<S: Scalar>(
    scores: &ScoreSet<S>,
    nuis: &NuisanceEstimates<S>,
    d: &Dataset<S>,
) -> Result<()> {
    if scores.n() != d.n() || nuis.n() != d.n() {
        return Err(Error::Shape(format!(
            "{} scores and {} nuisance rows for a dataset of {}",
            scores.n(),
            nuis.n(),
            d.n()
        )));
    }
    Ok(())
}

/// Confounding strengths that would erase an estimate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RobustnessValues<S: Scalar> {
    /// Strength (`zeta_y = zeta_d = rv`, `rho = 1`) driving the point
    /// estimate to zero.
    pub rv: S,
    /// Strength measured against the one-sided confidence bound instead;
    /// zero when that bound already crosses zero.
    pub rva: S,
    /// Set when the estimate itself is zero, making `rv` degenerate.
    pub zero_effect: bool,
}

/// Solves `scale * r / sqrt(1 - r) = target` for `r`; the left side is the
/// bias bound at equal strengths and full alignment.
fn solve_strength(target: f64, scale: f64) -> f64 {
    if !(target > 0.0) {
        return 0.0;
    }
    if scale <= 0.0 {
        // The bound cannot reach any positive target.
        return STRENGTH_CEIL;
    }
    let f = |r: f64| scale * r / (1.0 - r).sqrt();
    if f(STRENGTH_CEIL) <= target {
        return STRENGTH_CEIL;
    }
    let (mut lo, mut hi) = (0.0f64, STRENGTH_CEIL);
    for _ in 0..BISECTION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < BISECTION_TOL {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Robustness values of the effect estimate. Negative effects are handled
/// by magnitude; `alpha` defaults to the usual interval level.
pub fn robustness_value<S: Scalar>(
    scores: &ScoreSet<S>,
    nuis: &NuisanceEstimates<S>,
    d: &Dataset<S>,
    alpha: Option<f64>,
) -> Result<RobustnessValues<S>> {
    require_ate(scores)?;
    check_rows(scores, nuis, d)?;
    let est = estimate_ate(scores)?;
    let (sigma, nu) = moment_scales(d.yields().view(), &d.treatments(), nuis)?;
    robustness_from(est.theta_hat, est.std_err, sigma, nu, alpha)
}

fn robustness_from<S: Scalar>(
    theta_hat: S,
    std_err: S,
    sigma: S,
    nu: S,
    alpha: Option<f64>,
) -> Result<RobustnessValues<S>> {
    let alpha = alpha.unwrap_or(DEFAULT_ALPHA);
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let magnitude = theta_hat.abs().as_f64();
    let scale = (sigma * nu).as_f64();
    let zero_effect = magnitude == 0.0;
    let rv = solve_strength(magnitude, scale);
    let margin = magnitude - normal_quantile(1.0 - alpha) * std_err.as_f64();
    let rva = solve_strength(margin, scale);
    Ok(RobustnessValues {
        rv: S::of_f64(rv),
        rva: S::of_f64(rva),
        zero_effect,
    })
}

/// Confounding strength observed when one set of columns is deliberately
/// dropped from the adjustment set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkRow<S: Scalar> {
    pub omitted: Vec<String>,
    /// Outcome-explanation loss, as a share of what the long model leaves
    /// unexplained.
    pub zeta_y: S,
    /// Representer second-moment share the omitted columns carried.
    pub zeta_d: S,
    /// Alignment of the outcome-model and representer shifts.
    pub rho: S,
    /// Effect shift `theta_long - theta_short`.
    pub delta_theta: S,
}

/// Emulates an unobserved confounder by refitting nuisances without the
/// named adjustment columns and comparing against the full ("long") fit.
///
/// The short fit reuses the long fit's fold seed and clip bounds so the only
/// difference is the omitted columns. `rho` is the correlation between the
/// per-lot shift in fitted outcomes and the per-lot shift in the
/// representer, clamped to `[-1, 1]`.
pub fn benchmark_confounder<S: Scalar>(
    d: &Dataset<S>,
    long: &NuisanceEstimates<S>,
    omit: &[&str],
    g_spec: &LearnerSpec,
    m_spec: &LearnerSpec,
    k: usize,
    seed: u64,
) -> Result<BenchmarkRow<S>> {
    if omit.is_empty() {
        return Err(Error::Parameter(
            "benchmarking requires at least one omitted column".into(),
        ));
    }
    if long.n() != d.n() {
        return Err(Error::Shape(format!(
            "{} nuisance rows for a dataset of {}",
            long.n(),
            d.n()
        )));
    }
    let adjustment = d.nuisance_column_indices();
    let mut omitted_idx = Vec::with_capacity(omit.len());
    for name in omit {
        let idx = d.feature_index(name)?;
        if !adjustment.contains(&idx) {
            return Err(Error::Parameter(format!(
                "column `{name}` is not in the adjustment set"
            )));
        }
        omitted_idx.push(idx);
    }
    let remaining: Vec<usize> = adjustment
        .iter()
        .copied()
        .filter(|idx| !omitted_idx.contains(idx))
        .collect();
    if remaining.is_empty() {
        return Err(Error::EmptyAdjustmentSet(omit.len()));
    }

    let y = d.yields();
    let a = d.treatments();
    let x_short = d.submatrix(&remaining);
    let short = crossfit_nuisances_on(
        x_short.view(),
        y.view(),
        &a,
        g_spec,
        m_spec,
        k,
        seed,
        long.clip_bounds,
    )?;

    let r2_long = outcome_r2(y.view(), &a, long);
    let r2_short = outcome_r2(y.view(), &a, &short);
    let slack = S::one() - r2_long;
    let zeta_y = if slack > S::zero() {
        ((r2_long - r2_short) / slack).max(S::zero())
    } else {
        // A perfect long fit leaves nothing to attribute.
        S::zero()
    };

    let (_, nu_long) = moment_scales(y.view(), &a, long)?;
    let (_, nu_short) = moment_scales(y.view(), &a, &short)?;
    let ratio = (nu_short * nu_short) / (nu_long * nu_long);
    let zeta_d = (S::one() - ratio).max(S::zero()).min(S::one());

    let n = d.n();
    let mut dg = Vec::with_capacity(n);
    let mut dalpha = Vec::with_capacity(n);
    for i in 0..n {
        let (g_l, g_s) = if a[i] {
            (long.g1_hat[i], short.g1_hat[i])
        } else {
            (long.g0_hat[i], short.g0_hat[i])
        };
        dg.push(g_l - g_s);
        dalpha.push(representer(a[i], long.m_hat[i]) - representer(a[i], short.m_hat[i]));
    }
    let rho = correlation(&dg, &dalpha).max(-S::one()).min(S::one());

    let theta_long = estimate_ate(&aipw_scores(d, long)?)?.theta_hat;
    let theta_short = estimate_ate(&aipw_scores(d, &short)?)?.theta_hat;

    Ok(BenchmarkRow {
        omitted: omit.iter().map(|s| s.to_string()).collect(),
        zeta_y,
        zeta_d,
        rho,
        delta_theta: theta_long - theta_short,
    })
}

/// Share of outcome variance explained by the fitted arm-specific means.
fn outcome_r2<S: Scalar>(y: ArrayView1<S>, a: &[bool], nuis: &NuisanceEstimates<S>) -> S {
    let n = y.len();
    let mean = mean_in_order(y);
    let mut tss = S::zero();
    let mut sse = S::zero();
    for i in 0..n {
        let dy = y[i] - mean;
        tss += dy * dy;
        let fitted = if a[i] { nuis.g1_hat[i] } else { nuis.g0_hat[i] };
        let r = y[i] - fitted;
        sse += r * r;
    }
    if tss == S::zero() {
        return S::zero();
    }
    S::one() - sse / tss
}

/// Lower bounds of the effect over a grid of confounding strengths at full
/// alignment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContourGrid<S: Scalar> {
    /// Row axis, strictly ascending.
    pub zeta_y: Vec<S>,
    /// Column axis, strictly ascending.
    pub zeta_d: Vec<S>,
    /// `lower[[i, j]] = theta_hat - bound(zeta_y[i], zeta_d[j], rho = 1)`;
    /// non-increasing along each row and each column.
    pub lower: Array2<S>,
}

/// Evaluates the worst-case lower bound of the effect on a strength grid.
pub fn contour_grid<S: Scalar>(
    scores: &ScoreSet<S>,
    nuis: &NuisanceEstimates<S>,
    d: &Dataset<S>,
    zeta_y: &[S],
    zeta_d: &[S],
) -> Result<ContourGrid<S>> {
    require_ate(scores)?;
    check_rows(scores, nuis, d)?;
    check_axis(zeta_y, "zeta_y")?;
    check_axis(zeta_d, "zeta_d")?;
    let theta = estimate_ate(scores)?.theta_hat;
    let (sigma, nu) = moment_scales(d.yields().view(), &d.treatments(), nuis)?;
    let mut lower = Array2::zeros((zeta_y.len(), zeta_d.len()));
    for (i, &zy) in zeta_y.iter().enumerate() {
        for (j, &zd) in zeta_d.iter().enumerate() {
            let sc = ConfoundingScenario {
                zeta_y: zy,
                zeta_d: zd,
                rho: S::one(),
            };
            lower[[i, j]] = theta - bound_value(sigma, nu, &sc)?;
        }
    }
    Ok(ContourGrid {
        zeta_y: zeta_y.to_vec(),
        zeta_d: zeta_d.to_vec(),
        lower,
    })
}

fn check_axis<S: Scalar>(axis: &[S], name: &str) -> Result<()> {
    if axis.is_empty() {
        return Err(Error::Parameter(format!("{name} axis is empty")));
    }
    for &v in axis {
        if !(v.is_finite() && v >= S::zero() && v < S::one()) {
            return Err(Error::Parameter(format!(
                "{name} axis values must lie in [0, 1), got {}",
                v.as_f64()
            )));
        }
    }
    for w in axis.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::Parameter(format!(
                "{name} axis must be strictly ascending"
            )));
        }
    }
    Ok(())
}

/// Full robustness picture for one estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityReport<S: Scalar> {
    /// What the bound protects: `"ate"` or a policy form name.
    pub moment: String,
    pub theta_hat: S,
    pub std_err: S,
    /// Outcome-residual scale entering the bound.
    pub sigma: S,
    /// Representer scale entering the bound.
    pub nu: S,
    pub scenario: ConfoundingScenario<S>,
    pub bias_bound: S,
    /// `theta_hat` shifted by the bias bound in both directions.
    pub bounds: (S, S),
    /// Bias bounds widened further by one-sided sampling noise.
    pub ci_bounds: (S, S),
    pub alpha: f64,
    pub rv: S,
    pub rva: S,
    pub zero_effect: bool,
    pub benchmarks: Vec<BenchmarkRow<S>>,
    pub contour: Option<ContourGrid<S>>,
}

/// Sensitivity report for the average effect under one scenario. Benchmarks
/// and the contour start empty; attach them from their own computations.
pub fn ate_sensitivity<S: Scalar>(
    scores: &ScoreSet<S>,
    nuis: &NuisanceEstimates<S>,
    d: &Dataset<S>,
    scenario: &ConfoundingScenario<S>,
    alpha: Option<f64>,
) -> Result<SensitivityReport<S>> {
    require_ate(scores)?;
    check_rows(scores, nuis, d)?;
    let est = estimate_ate(scores)?;
    let (sigma, nu) = moment_scales(d.yields().view(), &d.treatments(), nuis)?;
    assemble_report(
        "ate".to_string(),
        est.theta_hat,
        est.std_err,
        sigma,
        nu,
        scenario,
        alpha,
    )
}

/// Sensitivity report for a policy's value (at zero rework cost) on
/// held-out scores. The value moment keeps only policy-treated lots, so the
/// representer scale shrinks with the treated share.
pub fn value_sensitivity<S: Scalar>(
    policy: &Policy<S>,
    scores: &ScoreSet<S>,
    nuis: &NuisanceEstimates<S>,
    d: &Dataset<S>,
    scenario: &ConfoundingScenario<S>,
    alpha: Option<f64>,
) -> Result<SensitivityReport<S>> {
    require_ate(scores)?;
    check_rows(scores, nuis, d)?;
    let n = d.n();
    if n < 2 {
        return Err(Error::Validation(format!(
            "value sensitivity needs at least two lots, got {n}"
        )));
    }
    let (frame, names) = dataset_decision_frame(d);
    let cols: Vec<&str> = names.iter().map(String::as_str).collect();
    let pi = policy.decide_batch(frame.view(), &cols)?;

    let contrib: Vec<S> = pi
        .iter()
        .zip(scores.psi_b.iter())
        .map(|(&treat, &b)| if treat { b } else { S::zero() })
        .collect();
    let value = mean_in_order(ArrayView1::from(&contrib[..]));
    let std_err = sample_sd(&contrib) / S::of_usize(n).sqrt();
    let (sigma, nu) =
        scales_masked(d.yields().view(), &d.treatments(), nuis, Some(&pi))?;
    assemble_report(
        policy.form_name().to_string(),
        value,
        std_err,
        sigma,
        nu,
        scenario,
        alpha,
    )
}

fn assemble_report<S: Scalar>(
    moment: String,
    theta_hat: S,
    std_err: S,
    sigma: S,
    nu: S,
    scenario: &ConfoundingScenario<S>,
    alpha: Option<f64>,
) -> Result<SensitivityReport<S>> {
    let bias_bound = bound_value(sigma, nu, scenario)?;
    let values = robustness_from(theta_hat, std_err, sigma, nu, alpha)?;
    let alpha = alpha.unwrap_or(DEFAULT_ALPHA);
    let widen = S::of_f64(normal_quantile(1.0 - alpha)) * std_err;
    Ok(SensitivityReport {
        moment,
        theta_hat,
        std_err,
        sigma,
        nu,
        scenario: *scenario,
        bias_bound,
        bounds: (theta_hat - bias_bound, theta_hat + bias_bound),
        ci_bounds: (
            theta_hat - bias_bound - widen,
            theta_hat + bias_bound + widen,
        ),
        alpha,
        rv: values.rv,
        rva: values.rva,
        zero_effect: values.zero_effect,
        benchmarks: Vec::new(),
        contour: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;
    use rand::Rng;
    use rand_distr::StandardNormal;

    use crate::data_model::LotRecord;
    use crate::dml::{aipw_scores_from, DEFAULT_CLIP};
    use crate::learners::{kfold_split, FoldAssignment};
    use crate::rng::rng_for;

    fn folds(n: usize) -> FoldAssignment {
        kfold_split(n, 2, 0).unwrap()
    }

    /// Nuisances with exactly sigma = 0.5 (residuals all half) and nu = 2
    /// (propensity pinned at one half).
    fn pinned_scales(n: usize) -> (Array1<f64>, Vec<bool>, NuisanceEstimates<f64>) {
        let a: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let g0 = Array1::from_elem(n, 0.4);
        let g1 = Array1::from_elem(n, 0.6);
        let m = Array1::from_elem(n, 0.5);
        let y = Array1::from_shape_fn(n, |i| {
            let fitted = if a[i] { 0.6 } else { 0.4 };
            fitted + if i % 4 < 2 { 0.5 } else { -0.5 }
        });
        let nuis = NuisanceEstimates::from_parts(g0, g1, m, DEFAULT_CLIP, folds(n)).unwrap();
        (y, a, nuis)
    }

    /// Small production dataset with outcomes driven by the mean color.
    fn tiny_dataset(n: usize, seed: u64) -> Dataset<f64> {
        let mut rng = rng_for(seed, "sens-test", 0);
        let mut records = Vec::with_capacity(n);
        for _ in 0..n {
            let base: f64 = rng.gen_range(-0.02..0.02);
            let cx = vec![0.31 + base, 0.31 + base + rng.gen_range(-0.005..0.005)];
            let cy = vec![0.32 - base, 0.32 - base + rng.gen_range(-0.005..0.005)];
            let treated = rng.gen_bool((0.5 + 5.0 * base).clamp(0.1, 0.9));
            let y = (0.85 - 2.0 * base + rng.gen_range(-0.01..0.01)).clamp(0.0, 1.0);
            records.push(
                LotRecord::new(cx, cy, vec![false, false], rng.gen_range(5.0..30.0), treated, y)
                    .unwrap(),
            );
        }
        Dataset::from_records(records).unwrap()
    }

    fn scores_for(
        y: &Array1<f64>,
        a: &[bool],
        nuis: &NuisanceEstimates<f64>,
    ) -> ScoreSet<f64> {
        aipw_scores_from(y.view(), a, nuis).unwrap()
    }

    #[test]
    fn pinned_scales_are_exact() {
        let (y, a, nuis) = pinned_scales(40);
        let (sigma, nu) = moment_scales(y.view(), &a, &nuis).unwrap();
        assert_eq!(sigma, 0.5);
        assert_eq!(nu, 2.0);
    }

    #[test]
    fn bound_matches_closed_form_arithmetic() {
        let sc = ConfoundingScenario::new(0.09, 0.09, 1.0).unwrap();
        let b = bound_value(0.5, 2.0, &sc).unwrap();
        let expect = 0.5 * 2.0 * (0.09f64 * 0.09 / 0.91).sqrt();
        assert!((b - expect).abs() < 1e-15);
        assert!((b - 0.0943).abs() < 5e-5);
    }

    #[test]
    fn bound_vanishes_when_any_component_is_zero() {
        for sc in [
            ConfoundingScenario::new(0.0, 0.3, 0.8).unwrap(),
            ConfoundingScenario::new(0.3, 0.0, 0.8).unwrap(),
            ConfoundingScenario::new(0.3, 0.3, 0.0).unwrap(),
        ] {
            assert_eq!(bound_value(0.7, 3.0, &sc).unwrap(), 0.0);
        }
    }

    #[test]
    fn bound_is_monotone_in_each_component() {
        let mut rng = rng_for(11, "sens-test", 1);
        for _ in 0..200 {
            let zy: f64 = rng.gen_range(0.0..0.95);
            let zd: f64 = rng.gen_range(0.0..0.95);
            let rho: f64 = rng.gen_range(-1.0..1.0);
            let base = bound_value(0.5, 2.0, &ConfoundingScenario::new(zy, zd, rho).unwrap())
                .unwrap();
            let bump_y =
                bound_value(0.5, 2.0, &ConfoundingScenario::new((zy + 0.04).min(0.99), zd, rho).unwrap())
                    .unwrap();
            let bump_d =
                bound_value(0.5, 2.0, &ConfoundingScenario::new(zy, (zd + 0.04).min(0.99), rho).unwrap())
                    .unwrap();
            let bump_r = bound_value(
                0.5,
                2.0,
                &ConfoundingScenario::new(zy, zd, (rho.abs() + 0.04).min(1.0)).unwrap(),
            )
            .unwrap();
            assert!(bump_y >= base && bump_d >= base && bump_r >= base);
        }
    }

    #[test]
    fn scenario_validation_rejects_out_of_range_components() {
        assert!(matches!(
            ConfoundingScenario::new(1.0, 0.1, 0.5),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            ConfoundingScenario::new(0.1, 1.0, 0.5),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            ConfoundingScenario::new(0.1, 0.1, 1.5),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            ConfoundingScenario::new(-0.1, 0.1, 0.5),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn robustness_value_matches_quadratic_root() {
        // With sigma * nu = 1 and theta 0.1, r / sqrt(1 - r) = 0.1 has the
        // closed-form root r = (-t^2 + sqrt(t^4 + 4 t^2)) / 2 at t = 0.1.
        let t = 0.1f64;
        let root = (-t * t + (t.powi(4) + 4.0 * t * t).sqrt()) / 2.0;
        let solved = solve_strength(t, 1.0);
        assert!((solved - root).abs() < 1e-9);

        // And the bound evaluated at the root reproduces theta.
        let sc = ConfoundingScenario::new(solved, solved, 1.0).unwrap();
        let b = bound_value(1.0, 1.0, &sc).unwrap();
        assert!((b - t).abs() < 1e-8);
    }

    #[test]
    fn robustness_self_consistency_on_pinned_scales() {
        let (y, a, nuis) = pinned_scales(60);
        let scores = scores_for(&y, &a, &nuis);
        let est = estimate_ate(&scores).unwrap();
        assert!(est.theta_hat.abs() > 1e-6);

        // Rebuild the solve through public pieces and plug rv back in.
        let (sigma, nu) = moment_scales(y.view(), &a, &nuis).unwrap();
        let rv = robustness_from(est.theta_hat, est.std_err, sigma, nu, None)
            .unwrap()
            .rv;
        let sc = ConfoundingScenario::new(rv, rv, 1.0).unwrap();
        let b = bound_value(sigma, nu, &sc).unwrap();
        assert!((b - est.theta_hat.abs()).abs() < 1e-8);
    }

    #[test]
    fn zero_effect_flags_and_returns_zero() {
        let r = robustness_from(0.0, 0.1, 0.5, 2.0, None).unwrap();
        assert_eq!(r.rv, 0.0);
        assert_eq!(r.rva, 0.0);
        assert!(r.zero_effect);
    }

    #[test]
    fn rva_is_zero_exactly_when_interval_crosses_zero() {
        // Margin positive: theta 0.2, z * se = 1.645 * 0.1 < 0.2.
        let wide = robustness_from(0.2, 0.1, 0.5, 2.0, None).unwrap();
        assert!(wide.rva > 0.0);
        assert!(wide.rv > wide.rva);
        // Margin negative: same theta, se large enough to cross zero.
        let narrow = robustness_from(0.2, 0.2, 0.5, 2.0, None).unwrap();
        assert_eq!(narrow.rva, 0.0);
        assert!(narrow.rv > 0.0);
    }

    #[test]
    fn contour_starts_at_theta_and_decreases_along_axes() {
        let (y, a, nuis) = pinned_scales(80);
        let scores = scores_for(&y, &a, &nuis);
        let d = tiny_dataset(80, 5);
        // The dataset only supplies shapes here; rebuild scales from it so
        // theta matches the scores regardless.
        let zy = [0.0, 0.05, 0.1, 0.2, 0.4];
        let zd = [0.0, 0.1, 0.3, 0.5];
        let grid = contour_grid(&scores, &nuis, &d, &zy, &zd).unwrap();
        let theta = estimate_ate(&scores).unwrap().theta_hat;
        assert_eq!(grid.lower[[0, 0]], theta);
        for i in 0..zy.len() {
            for j in 1..zd.len() {
                assert!(grid.lower[[i, j]] <= grid.lower[[i, j - 1]] + 1e-15);
            }
        }
        for j in 0..zd.len() {
            for i in 1..zy.len() {
                assert!(grid.lower[[i, j]] <= grid.lower[[i - 1, j]] + 1e-15);
            }
        }

        // Each cell equals the scalar bound call.
        let (sigma, nu) = moment_scales(d.yields().view(), &d.treatments(), &nuis).unwrap();
        for (i, &a_) in zy.iter().enumerate() {
            for (j, &b_) in zd.iter().enumerate() {
                let sc = ConfoundingScenario::new(a_, b_, 1.0).unwrap();
                let cell = theta - bound_value(sigma, nu, &sc).unwrap();
                assert_eq!(grid.lower[[i, j]], cell);
            }
        }
    }

    #[test]
    fn contour_rejects_bad_axes() {
        let (y, a, nuis) = pinned_scales(20);
        let scores = scores_for(&y, &a, &nuis);
        let d = tiny_dataset(20, 6);
        assert!(matches!(
            contour_grid(&scores, &nuis, &d, &[], &[0.1]),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            contour_grid(&scores, &nuis, &d, &[0.2, 0.1], &[0.1]),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            contour_grid(&scores, &nuis, &d, &[0.1, 1.0], &[0.1]),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn att_scores_are_rejected() {
        let (y, a, nuis) = pinned_scales(20);
        let d = tiny_dataset(20, 7);
        let mut scores = scores_for(&y, &a, &nuis);
        scores.target = Target::Att;
        assert!(matches!(
            ovb_bound(&scores, &nuis, &d, &ConfoundingScenario::reference()),
            Err(Error::EstimandMismatch { .. })
        ));
        assert!(matches!(
            robustness_value(&scores, &nuis, &d, None),
            Err(Error::EstimandMismatch { .. })
        ));
    }

    #[test]
    fn report_assembles_bounds_and_interval_widening() {
        let (y, a, nuis) = pinned_scales(100);
        let d = tiny_dataset(100, 8);
        let scores = scores_for(&y, &a, &nuis);
        let sc = ConfoundingScenario::reference();
        let report = ate_sensitivity(&scores, &nuis, &d, &sc, None).unwrap();
        let est = estimate_ate(&scores).unwrap();
        assert_eq!(report.moment, "ate");
        assert_eq!(report.theta_hat, est.theta_hat);
        assert!(report.bias_bound > 0.0);
        assert!((report.bounds.0 - (report.theta_hat - report.bias_bound)).abs() < 1e-15);
        assert!((report.bounds.1 - (report.theta_hat + report.bias_bound)).abs() < 1e-15);
        let widen = normal_quantile(0.95) * report.std_err;
        assert!((report.ci_bounds.0 - (report.bounds.0 - widen)).abs() < 1e-15);
        assert!((report.ci_bounds.1 - (report.bounds.1 + widen)).abs() < 1e-15);
        assert!(report.benchmarks.is_empty());
        assert!(report.contour.is_none());

        let json = serde_json::to_string(&report).unwrap();
        let back: SensitivityReport<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back.rv, report.rv);
        assert_eq!(back.scenario, report.scenario);
    }

    #[test]
    fn always_treat_value_report_reduces_to_the_ate_report() {
        let n = 120;
        let d = tiny_dataset(n, 9);
        let y = d.yields();
        let a = d.treatments();
        let mut rng = rng_for(10, "sens-test", 2);
        let g0 = Array1::from_shape_fn(n, |_| rng.gen_range(0.7..0.9));
        let g1 = Array1::from_shape_fn(n, |_| rng.gen_range(0.75..0.95));
        let m = Array1::from_shape_fn(n, |_| rng.gen_range(0.2..0.8));
        let nuis = NuisanceEstimates::from_parts(g0, g1, m, DEFAULT_CLIP, folds(n)).unwrap();
        let scores = scores_for(&y, &a, &nuis);
        let sc = ConfoundingScenario::reference();

        let ate = ate_sensitivity(&scores, &nuis, &d, &sc, None).unwrap();
        let val =
            value_sensitivity(&Policy::AlwaysTreat, &scores, &nuis, &d, &sc, None).unwrap();
        assert_eq!(val.theta_hat, ate.theta_hat);
        assert_eq!(val.sigma, ate.sigma);
        assert_eq!(val.nu, ate.nu);
        assert_eq!(val.rv, ate.rv);
        assert!((val.std_err - ate.std_err).abs() < 1e-12);
        assert!((val.rva - ate.rva).abs() < 1e-9);
        assert_eq!(val.moment, "always_treat");
    }

    #[test]
    fn never_treat_value_report_is_flagged_zero() {
        let n = 40;
        let d = tiny_dataset(n, 11);
        let y = d.yields();
        let a = d.treatments();
        let g0 = Array1::from_elem(n, 0.8);
        let g1 = Array1::from_elem(n, 0.85);
        let m = Array1::from_elem(n, 0.5);
        let nuis = NuisanceEstimates::from_parts(g0, g1, m, DEFAULT_CLIP, folds(n)).unwrap();
        let scores = scores_for(&y, &a, &nuis);
        let report = value_sensitivity(
            &Policy::NeverTreat,
            &scores,
            &nuis,
            &d,
            &ConfoundingScenario::reference(),
            None,
        )
        .unwrap();
        assert_eq!(report.theta_hat, 0.0);
        assert_eq!(report.rv, 0.0);
        assert!(report.zero_effect);
        assert_eq!(report.nu, 0.0);
    }

    #[test]
    fn shrinking_the_value_shrinks_its_robustness() {
        // Same treated set, scores scaled down: nu is unchanged, the value
        // target drops, so the solved strength must drop.
        let n = 100;
        let d = tiny_dataset(n, 12);
        let y = d.yields();
        let a = d.treatments();
        let g0 = Array1::from_elem(n, 0.8);
        let g1 = Array1::from_elem(n, 0.86);
        let m = Array1::from_elem(n, 0.5);
        let nuis = NuisanceEstimates::from_parts(g0, g1, m, DEFAULT_CLIP, folds(n)).unwrap();
        let scores = scores_for(&y, &a, &nuis);
        let mut scaled = scores.clone();
        scaled.psi_b = scores.psi_b.mapv(|v| v * 0.25);
        let sc = ConfoundingScenario::reference();

        let full = value_sensitivity(&Policy::AlwaysTreat, &scores, &nuis, &d, &sc, None)
            .unwrap();
        let small = value_sensitivity(&Policy::AlwaysTreat, &scaled, &nuis, &d, &sc, None)
            .unwrap();
        if full.theta_hat.abs() > 1e-9 {
            assert!(small.rv < full.rv);
        }
    }

    #[test]
    fn omitting_a_noise_column_barely_registers() {
        // Workload is independent noise in this construction: outcomes and
        // treatments depend only on color. Omitting it should report near
        // zero strengths at moderate n.
        let n = 400;
        let d = tiny_dataset(n, 13);
        let g_spec = LearnerSpec::ridge(1e-3);
        let m_spec = LearnerSpec::logistic();
        let long = crate::dml::crossfit_nuisances(&d, &g_spec, &m_spec, 2, 99).unwrap();
        let row =
            benchmark_confounder(&d, &long, &["workload"], &g_spec, &m_spec, 2, 99).unwrap();
        assert!(row.zeta_y.abs() < 0.05, "zeta_y = {}", row.zeta_y);
        assert!(row.zeta_d.abs() < 0.05, "zeta_d = {}", row.zeta_d);
        assert!(row.rho.abs() <= 1.0);
        assert_eq!(row.omitted, vec!["workload".to_string()]);
    }

    #[test]
    fn omitting_the_driving_columns_registers_strongly() {
        // Color drives both outcome and treatment; omitting every color
        // column must shift the outcome fit more than omitting noise.
        let n = 400;
        let d = tiny_dataset(n, 14);
        let g_spec = LearnerSpec::ridge(1e-3);
        let m_spec = LearnerSpec::logistic();
        let long = crate::dml::crossfit_nuisances(&d, &g_spec, &m_spec, 2, 99).unwrap();
        let color: Vec<String> = d
            .feature_names()
            .iter()
            .filter(|n| n.starts_with("cm_") || n.starts_with("cs_"))
            .filter(|n| {
                // Only per-chip columns belong to the adjustment set.
                n.chars().rev().take(2).all(|c| c.is_ascii_digit())
            })
            .cloned()
            .collect();
        let color_refs: Vec<&str> = color.iter().map(String::as_str).collect();
        let strong =
            benchmark_confounder(&d, &long, &color_refs, &g_spec, &m_spec, 2, 99).unwrap();
        let weak =
            benchmark_confounder(&d, &long, &["workload"], &g_spec, &m_spec, 2, 99).unwrap();
        assert!(strong.zeta_y >= weak.zeta_y);
    }

    #[test]
    fn benchmark_rejects_empty_and_full_omissions() {
        let d = tiny_dataset(30, 15);
        let g_spec = LearnerSpec::ridge(1e-3);
        let m_spec = LearnerSpec::logistic();
        let long = crate::dml::crossfit_nuisances(&d, &g_spec, &m_spec, 2, 1).unwrap();
        assert!(matches!(
            benchmark_confounder(&d, &long, &[], &g_spec, &m_spec, 2, 1),
            Err(Error::Parameter(_))
        ));
        let all: Vec<String> = d
            .nuisance_column_indices()
            .iter()
            .map(|&i| d.feature_names()[i].clone())
            .collect();
        let all_refs: Vec<&str> = all.iter().map(String::as_str).collect();
        assert!(matches!(
            benchmark_confounder(&d, &long, &all_refs, &g_spec, &m_spec, 2, 1),
            Err(Error::EmptyAdjustmentSet(_))
        ));
        assert!(matches!(
            benchmark_confounder(&d, &long, &["cm_mean"], &g_spec, &m_spec, 2, 1),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            benchmark_confounder(&d, &long, &["nope"], &g_spec, &m_spec, 2, 1),
            Err(Error::MissingFeature { .. })
        ));
    }

    #[test]
    fn representer_noise_keeps_rho_inside_the_unit_interval() {
        let mut rng = rng_for(16, "sens-test", 3);
        let xs: Vec<f64> = (0..50).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| 2.0 * x).collect();
        let r: f64 = correlation(&xs, &ys);
        assert!(r <= 1.0 && r >= -1.0);
        assert!((r - 1.0).abs() < 1e-12);
    }
}
