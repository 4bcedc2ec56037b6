//! Nuisance learners: specification, fitting, prediction, and tuning.
//!
//! All model families are implemented here directly on dense matrices:
//! ordinary and ridge-penalized least squares, logistic regression via
//! iteratively reweighted least squares, exhaustive-split regression trees,
//! bagged forests with per-split feature subsampling, and stagewise boosted
//! stumps. Fits are deterministic given `(data, spec)`; randomized families
//! consume only the spec's seed.

mod boost;
mod linear;
mod logistic;
mod tree;

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::scalar::Scalar;

pub use boost::BoostedModel;
pub use linear::LinearModel;
pub use logistic::LogisticModel;
pub use tree::TreeModel;

/// Model family identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Ols,
    Ridge,
    Logistic,
    Cart,
    RandomForest,
    BoostedStumps,
}

impl std::fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            LearnerKind::Ols => "ols",
            LearnerKind::Ridge => "ridge",
            LearnerKind::Logistic => "logistic",
            LearnerKind::Cart => "cart",
            LearnerKind::RandomForest => "random_forest",
            LearnerKind::BoostedStumps => "boosted_stumps",
        };
        f.write_str(name)
    }
}

/// Serializable description of a learner: family, hyperparameters, seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub seed: u64,
}

impl LearnerSpec {
    pub fn new(kind: LearnerKind) -> Self {
        Self {
            kind,
            params: BTreeMap::new(),
            seed: 0,
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn ols() -> Self {
        Self::new(LearnerKind::Ols)
    }

    pub fn ridge(lambda: f64) -> Self {
        Self::new(LearnerKind::Ridge).with("lambda", lambda)
    }

    pub fn logistic() -> Self {
        Self::new(LearnerKind::Logistic)
    }

    pub fn cart(max_depth: usize, min_leaf: usize) -> Self {
        Self::new(LearnerKind::Cart)
            .with("max_depth", max_depth as f64)
            .with("min_leaf", min_leaf as f64)
    }

    pub fn random_forest(n_trees: usize, max_depth: usize, min_leaf: usize) -> Self {
        Self::new(LearnerKind::RandomForest)
            .with("n_trees", n_trees as f64)
            .with("max_depth", max_depth as f64)
            .with("min_leaf", min_leaf as f64)
    }

    pub fn boosted_stumps(n_stages: usize, learning_rate: f64) -> Self {
        Self::new(LearnerKind::BoostedStumps)
            .with("n_stages", n_stages as f64)
            .with("learning_rate", learning_rate)
    }

    fn get(&self, key: &str, default: f64) -> f64 {
        self.params.get(key).copied().unwrap_or(default)
    }

    fn get_count(&self, key: &str, default: usize, min: usize) -> Result<usize> {
        let raw = self.get(key, default as f64);
        if raw.fract() != 0.0 || raw < min as f64 || raw > usize::MAX as f64 {
            return Err(Error::Parameter(format!(
                "{}: `{key}` must be an integer >= {min}, got {raw}",
                self.kind
            )));
        }
        Ok(raw as usize)
    }

    /// Checks hyperparameter ranges for the family.
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            LearnerKind::Ols => {}
            LearnerKind::Ridge => {
                let lambda = self.get("lambda", f64::NAN);
                if !(lambda >= 0.0) {
                    return Err(Error::Parameter(format!(
                        "ridge: `lambda` must be a nonnegative number, got {lambda}"
                    )));
                }
            }
            LearnerKind::Logistic => {
                self.get_count("max_iter", logistic::MAX_ITER_DEFAULT, 1)?;
                let tol = self.get("tol", logistic::TOL_DEFAULT);
                if !(tol > 0.0) {
                    return Err(Error::Parameter(format!(
                        "logistic: `tol` must be positive, got {tol}"
                    )));
                }
            }
            LearnerKind::Cart => {
                self.get_count("max_depth", 5, 1)?;
                self.get_count("min_leaf", 1, 1)?;
            }
            LearnerKind::RandomForest => {
                self.get_count("n_trees", 100, 1)?;
                self.get_count("max_depth", 10, 1)?;
                self.get_count("min_leaf", 5, 1)?;
            }
            LearnerKind::BoostedStumps => {
                self.get_count("n_stages", 200, 1)?;
                let lr = self.get("learning_rate", 0.1);
                if !(lr > 0.0 && lr <= 1.0) {
                    return Err(Error::Parameter(format!(
                        "boosted_stumps: `learning_rate` must lie in (0, 1], got {lr}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug)]
pub(crate) enum ModelImpl<S: Scalar> {
    Linear(LinearModel<S>),
    Logistic(LogisticModel<S>),
    Tree(TreeModel<S>),
    Forest(Vec<TreeModel<S>>),
    Boosted(BoostedModel<S>),
}

/// A fitted learner. Produced by [`fit_regressor`] or [`fit_classifier`];
/// prediction is the only operation either task needs downstream.
#[derive(Debug)]
pub struct FittedModel<S: Scalar> {
    pub(crate) inner: ModelImpl<S>,
    pub kind: LearnerKind,
    pub n_features: usize,
    pub n_train: usize,
    /// True when a singular normal-equations system forced the ridge
    /// fallback.
    pub ridge_fallback: bool,
    classifier: bool,
}

impl<S: Scalar> FittedModel<S> {
    /// Predicts one value per row. Classifier outputs are probabilities in
    /// `[0, 1]`.
    pub fn predict(&self, x: ArrayView2<S>) -> Result<Array1<S>> {
        if x.nrows() == 0 {
            return Ok(Array1::zeros(0));
        }
        if x.ncols() != self.n_features {
            return Err(Error::Shape(format!(
                "predict expected {} feature columns, got {}",
                self.n_features,
                x.ncols()
            )));
        }
        let mut out = match &self.inner {
            ModelImpl::Linear(m) => m.predict(x),
            ModelImpl::Logistic(m) => m.predict(x),
            ModelImpl::Tree(t) => t.predict(x),
            ModelImpl::Forest(trees) => {
                let mut acc = Array1::<S>::zeros(x.nrows());
                for t in trees {
                    acc += &t.predict(x);
                }
                acc.mapv_into(|v| v / S::of_usize(trees.len()))
            }
            ModelImpl::Boosted(m) => m.predict(x),
        };
        if self.classifier {
            out.mapv_inplace(|v| v.max(S::zero()).min(S::one()));
        }
        Ok(out)
    }
}

fn check_xy<S: Scalar>(x: ArrayView2<S>, y: ArrayView1<S>) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::Validation("cannot fit on zero rows".into()));
    }
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!(
            "{} rows of features but {} targets",
            x.nrows(),
            y.len()
        )));
    }
    for v in x.iter().chain(y.iter()) {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: "validating training data".into(),
            });
        }
    }
    Ok(())
}

/// Fits a continuous-outcome learner.
pub fn fit_regressor<S: Scalar>(
    spec: &LearnerSpec,
    x: ArrayView2<S>,
    y: ArrayView1<S>,
) -> Result<FittedModel<S>> {
    spec.validate()?;
    check_xy(x, y)?;
    let (inner, ridge_fallback) = match spec.kind {
        LearnerKind::Ols => {
            let m = LinearModel::fit(x, y, 0.0)?;
            let fb = m.ridge_fallback;
            (ModelImpl::Linear(m), fb)
        }
        LearnerKind::Ridge => {
            let m = LinearModel::fit(x, y, spec.get("lambda", f64::NAN))?;
            let fb = m.ridge_fallback;
            (ModelImpl::Linear(m), fb)
        }
        LearnerKind::Cart => {
            let params = tree::CartParams {
                max_depth: spec.get_count("max_depth", 5, 1)?,
                min_leaf: spec.get_count("min_leaf", 1, 1)?,
            };
            (ModelImpl::Tree(tree::fit_cart(x, y, &params)), false)
        }
        LearnerKind::RandomForest => (
            ModelImpl::Forest(fit_forest(spec, x, y)?),
            false,
        ),
        LearnerKind::BoostedStumps => {
            let stages = spec.get_count("n_stages", 200, 1)?;
            let lr = S::of_f64(spec.get("learning_rate", 0.1));
            (ModelImpl::Boosted(BoostedModel::fit(x, y, stages, lr)), false)
        }
        LearnerKind::Logistic => {
            return Err(Error::Parameter(
                "logistic is a classifier; use fit_classifier".into(),
            ));
        }
    };
    Ok(FittedModel {
        inner,
        kind: spec.kind,
        n_features: x.ncols(),
        n_train: x.nrows(),
        ridge_fallback,
        classifier: false,
    })
}

/// Fits a binary-outcome learner on labels in `{0, 1}`. Trees and forests
/// model the class frequency directly; logistic fits by IRLS.
pub fn fit_classifier<S: Scalar>(
    spec: &LearnerSpec,
    x: ArrayView2<S>,
    a: ArrayView1<S>,
) -> Result<FittedModel<S>> {
    spec.validate()?;
    check_xy(x, a)?;
    for &v in a.iter() {
        if v != S::zero() && v != S::one() {
            return Err(Error::Validation(format!(
                "classifier labels must be 0 or 1, got {v}"
            )));
        }
    }
    let ones = a.iter().filter(|&&v| v == S::one()).count();
    if ones == 0 || ones == a.len() {
        return Err(Error::DegenerateClass(format!(
            "{} of {} labels are 1",
            ones,
            a.len()
        )));
    }
    let (inner, ridge_fallback) = match spec.kind {
        LearnerKind::Logistic => {
            let m = LogisticModel::fit(
                x,
                a,
                spec.get_count("max_iter", logistic::MAX_ITER_DEFAULT, 1)?,
                spec.get("tol", logistic::TOL_DEFAULT),
            )?;
            (ModelImpl::Logistic(m), false)
        }
        LearnerKind::Cart => {
            let params = tree::CartParams {
                max_depth: spec.get_count("max_depth", 5, 1)?,
                min_leaf: spec.get_count("min_leaf", 1, 1)?,
            };
            (ModelImpl::Tree(tree::fit_cart(x, a, &params)), false)
        }
        LearnerKind::RandomForest => (ModelImpl::Forest(fit_forest(spec, x, a)?), false),
        other => {
            return Err(Error::Parameter(format!(
                "{other} does not support classification"
            )));
        }
    };
    Ok(FittedModel {
        inner,
        kind: spec.kind,
        n_features: x.ncols(),
        n_train: x.nrows(),
        ridge_fallback,
        classifier: true,
    })
}

fn fit_forest<S: Scalar>(
    spec: &LearnerSpec,
    x: ArrayView2<S>,
    y: ArrayView1<S>,
) -> Result<Vec<TreeModel<S>>> {
    let n_trees = spec.get_count("n_trees", 100, 1)?;
    let params = tree::CartParams {
        max_depth: spec.get_count("max_depth", 10, 1)?,
        min_leaf: spec.get_count("min_leaf", 5, 1)?,
    };
    let default_mtry = (x.ncols() as f64).sqrt().floor().max(1.0) as usize;
    let mtry = spec.get_count("mtry", default_mtry, 1)?.min(x.ncols());
    use rayon::prelude::*;
    let trees: Vec<TreeModel<S>> = (0..n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(spec.seed, "forest-tree", t as u64);
            tree::fit_cart_sampled(x, y, &params, mtry, &mut rng)
        })
        .collect();
    Ok(trees)
}

/// Row-to-fold assignment for cross-fitting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of: Vec<usize>,
    pub seed: u64,
}

impl FoldAssignment {
    pub fn n(&self) -> usize {
        self.fold_of.len()
    }

    pub fn rows_in(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    pub fn rows_out(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold_of[i] != fold).collect()
    }
}

/// Shuffles rows with a seed-derived stream and deals them round-robin, so
/// fold sizes differ by at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 || k > n {
        return Err(Error::Parameter(format!(
            "fold count must satisfy 2 <= k <= n, got k={k} with n={n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = rng_for(seed, "kfold", 0);
    idx.shuffle(&mut rng);
    let mut fold_of = vec![0usize; n];
    for (pos, &row) in idx.iter().enumerate() {
        fold_of[row] = pos % k;
    }
    Ok(FoldAssignment { k, fold_of, seed })
}

/// Learning task for tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

/// Cross-validation loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuneLoss {
    Rmse,
    LogLoss,
}

/// One candidate's outcome in a tuning run.
#[derive(Debug, Clone, Serialize)]
pub struct TuneEntry {
    pub spec: LearnerSpec,
    pub loss: Option<f64>,
    pub error: Option<String>,
}

/// Full tuning report: every candidate with its pooled out-of-fold loss,
/// sorted best first; failed candidates sink to the end with their error
/// recorded.
#[derive(Debug, Clone, Serialize)]
pub struct TuneReport {
    pub best: LearnerSpec,
    pub entries: Vec<TuneEntry>,
    pub loss: TuneLoss,
    pub task: Task,
}

/// Selects the spec minimizing pooled out-of-fold loss. Ties keep the
/// earliest spec in list order.
pub fn grid_tune<S: Scalar>(
    specs: &[LearnerSpec],
    x: ArrayView2<S>,
    y: ArrayView1<S>,
    folds: &FoldAssignment,
    loss: TuneLoss,
    task: Task,
) -> Result<TuneReport> {
    if specs.is_empty() {
        return Err(Error::Parameter("tuning needs at least one candidate".into()));
    }
    if folds.n() != x.nrows() {
        return Err(Error::Shape(format!(
            "fold assignment covers {} rows but data has {}",
            folds.n(),
            x.nrows()
        )));
    }

    let mut entries: Vec<TuneEntry> = Vec::with_capacity(specs.len());
    for spec in specs {
        match cv_loss(spec, x, y, folds, loss, task) {
            Ok(l) => entries.push(TuneEntry {
                spec: spec.clone(),
                loss: Some(l),
                error: None,
            }),
            Err(e) => entries.push(TuneEntry {
                spec: spec.clone(),
                loss: None,
                error: Some(e.to_string()),
            }),
        }
    }

    let best = entries
        .iter()
        .filter_map(|e| e.loss.map(|l| (e, l)))
        .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite losses"))
        .map(|(e, _)| e.spec.clone());
    let best = best.ok_or_else(|| {
        let detail = entries
            .iter()
            .filter_map(|e| e.error.as_deref())
            .next()
            .unwrap_or("no diagnostics")
            .to_string();
        Error::TuningFailed(detail)
    })?;

    // Stable sort keeps list order among exact ties and sinks failures.
    entries.sort_by(|a, b| match (a.loss, b.loss) {
        (Some(x), Some(y)) => x.partial_cmp(&y).expect("finite losses"),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });

    Ok(TuneReport {
        best,
        entries,
        loss,
        task,
    })
}

fn cv_loss<S: Scalar>(
    spec: &LearnerSpec,
    x: ArrayView2<S>,
    y: ArrayView1<S>,
    folds: &FoldAssignment,
    loss: TuneLoss,
    task: Task,
) -> Result<f64> {
    let n = x.nrows();
    let mut oof: Array1<S> = Array1::zeros(n);
    for fold in 0..folds.k {
        let train = folds.rows_out(fold);
        let test = folds.rows_in(fold);
        let xt = select_rows(x, &train);
        let yt: Array1<S> = train.iter().map(|&i| y[i]).collect();
        let spec_fold = spec.clone().with_seed(crate::rng::derive_seed(
            spec.seed,
            "tune-fold",
            fold as u64,
        ));
        let model = match task {
            Task::Regression => fit_regressor(&spec_fold, xt.view(), yt.view())?,
            Task::Classification => fit_classifier(&spec_fold, xt.view(), yt.view())?,
        };
        let xv = select_rows(x, &test);
        let pred = model.predict(xv.view())?;
        for (pos, &i) in test.iter().enumerate() {
            oof[i] = pred[pos];
        }
    }
    Ok(pooled_loss(oof.view(), y, loss))
}

fn pooled_loss<S: Scalar>(pred: ArrayView1<S>, y: ArrayView1<S>, loss: TuneLoss) -> f64 {
    let n = y.len() as f64;
    match loss {
        TuneLoss::Rmse => {
            let sse: f64 = pred
                .iter()
                .zip(y.iter())
                .map(|(&p, &t)| {
                    let d = (p - t).as_f64();
                    d * d
                })
                .sum();
            (sse / n).sqrt()
        }
        TuneLoss::LogLoss => {
            let ll: f64 = pred
                .iter()
                .zip(y.iter())
                .map(|(&p, &t)| {
                    let p = p.as_f64().clamp(1e-12, 1.0 - 1e-12);
                    let t = t.as_f64();
                    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
                })
                .sum();
            ll / n
        }
    }
}

/// Root-mean-squared prediction errors of a nuisance triple: propensity
/// against the binary decision on all rows, each outcome arm against yield
/// on its own rows. Uses raw (unclipped) propensities.
#[derive(Debug, Clone, Serialize)]
pub struct NuisanceRmse {
    pub rmse_m: f64,
    pub rmse_g0: f64,
    pub rmse_g1: f64,
}

pub fn nuisance_rmse<S: Scalar>(
    y: ArrayView1<S>,
    a: &[bool],
    g0_hat: ArrayView1<S>,
    g1_hat: ArrayView1<S>,
    m_raw: ArrayView1<S>,
) -> NuisanceRmse {
    let mut sse_m = 0.0;
    let mut sse_g0 = 0.0;
    let mut n0 = 0usize;
    let mut sse_g1 = 0.0;
    let mut n1 = 0usize;
    for i in 0..y.len() {
        let ai = if a[i] { 1.0 } else { 0.0 };
        let dm = m_raw[i].as_f64() - ai;
        sse_m += dm * dm;
        if a[i] {
            let d = g1_hat[i].as_f64() - y[i].as_f64();
            sse_g1 += d * d;
            n1 += 1;
        } else {
            let d = g0_hat[i].as_f64() - y[i].as_f64();
            sse_g0 += d * d;
            n0 += 1;
        }
    }
    NuisanceRmse {
        rmse_m: (sse_m / y.len() as f64).sqrt(),
        rmse_g0: if n0 > 0 { (sse_g0 / n0 as f64).sqrt() } else { 0.0 },
        rmse_g1: if n1 > 0 { (sse_g1 / n1 as f64).sqrt() } else { 0.0 },
    }
}

pub(crate) fn select_rows<S: Scalar>(x: ArrayView2<S>, rows: &[usize]) -> Array2<S> {
    let mut out = Array2::zeros((rows.len(), x.ncols()));
    for (new_i, &old_i) in rows.iter().enumerate() {
        out.row_mut(new_i).assign(&x.row(old_i));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn toy_regression() -> (Array2<f64>, Array1<f64>) {
        let mut rng = rng_for(21, "learner-test", 0);
        use rand::Rng;
        let n = 80;
        let mut x = Array2::<f64>::zeros((n, 3));
        let mut y = Array1::<f64>::zeros(n);
        for i in 0..n {
            for j in 0..3 {
                x[[i, j]] = rng.gen_range(-1.0..1.0);
            }
            y[i] = 2.0 * x[[i, 0]] - x[[i, 1]] + 0.1 * rng.gen_range(-1.0..1.0);
        }
        (x, y)
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = LearnerSpec::boosted_stumps(150, 0.05).with_seed(9);
        let text = serde_json::to_string(&spec).unwrap();
        let back: LearnerSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(spec, back);
    }

    #[test]
    fn validation_rejects_out_of_range_hyperparameters() {
        assert!(LearnerSpec::ridge(-1.0).validate().is_err());
        assert!(LearnerSpec::ridge(f64::NAN).validate().is_err());
        assert!(LearnerSpec::cart(0, 1).validate().is_err());
        assert!(LearnerSpec::cart(3, 1).with("max_depth", 2.5).validate().is_err());
        assert!(LearnerSpec::random_forest(0, 3, 1).validate().is_err());
        assert!(LearnerSpec::boosted_stumps(10, 1.5).validate().is_err());
        assert!(LearnerSpec::boosted_stumps(10, 0.0).validate().is_err());
        assert!(LearnerSpec::logistic().with("tol", 0.0).validate().is_err());
        assert!(LearnerSpec::ols().validate().is_ok());
    }

    #[test]
    fn regressor_rejects_logistic_and_classifier_rejects_ols() {
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let y = array![0.0, 1.0, 0.0, 1.0];
        let err = fit_regressor(&LearnerSpec::logistic(), x.view(), y.view()).unwrap_err();
        assert!(matches!(err, Error::Parameter(_)));
        let err = fit_classifier(&LearnerSpec::ols(), x.view(), y.view()).unwrap_err();
        assert!(matches!(err, Error::Parameter(_)));
    }

    #[test]
    fn classifier_rejects_single_class_and_nonbinary_labels() {
        let x = array![[0.0], [1.0], [2.0]];
        let ones = array![1.0, 1.0, 1.0];
        let err = fit_classifier(&LearnerSpec::logistic(), x.view(), ones.view()).unwrap_err();
        assert!(matches!(err, Error::DegenerateClass(_)));
        let frac = array![0.0, 0.5, 1.0];
        let err = fit_classifier(&LearnerSpec::logistic(), x.view(), frac.view()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn fit_rejects_shape_mismatch_and_nonfinite_values() {
        let x = array![[0.0], [1.0]];
        let y = array![1.0, 2.0, 3.0];
        assert!(matches!(
            fit_regressor(&LearnerSpec::ols(), x.view(), y.view()).unwrap_err(),
            Error::Shape(_)
        ));
        let bad = array![[0.0], [f64::NAN]];
        let y2 = array![1.0, 2.0];
        assert!(matches!(
            fit_regressor(&LearnerSpec::ols(), bad.view(), y2.view()).unwrap_err(),
            Error::NonFinite { .. }
        ));
    }

    #[test]
    fn predict_checks_width_and_accepts_empty_input() {
        let (x, y) = toy_regression();
        let model = fit_regressor(&LearnerSpec::ols(), x.view(), y.view()).unwrap();
        let narrow = Array2::<f64>::zeros((2, 2));
        assert!(matches!(model.predict(narrow.view()).unwrap_err(), Error::Shape(_)));
        let empty = Array2::<f64>::zeros((0, 3));
        assert_eq!(model.predict(empty.view()).unwrap().len(), 0);
    }

    #[test]
    fn forest_prediction_is_mean_of_member_trees() {
        let (x, y) = toy_regression();
        let spec = LearnerSpec::random_forest(7, 4, 2).with_seed(13);
        let model = fit_regressor(&spec, x.view(), y.view()).unwrap();
        let pred = model.predict(x.view()).unwrap();
        let ModelImpl::Forest(trees) = &model.inner else {
            panic!("expected forest internals");
        };
        assert_eq!(trees.len(), 7);
        for i in 0..x.nrows() {
            let mut acc = 0.0;
            for t in trees {
                acc += t.predict_row(x.row(i));
            }
            assert_abs_diff_eq!(pred[i], acc / 7.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn forest_with_huge_min_leaf_predicts_a_constant() {
        let (x, y) = toy_regression();
        let spec = LearnerSpec::random_forest(1, 1, 1000).with_seed(2);
        let model = fit_regressor(&spec, x.view(), y.view()).unwrap();
        let pred = model.predict(x.view()).unwrap();
        for &p in pred.iter() {
            assert_eq!(p, pred[0]);
        }
    }

    #[test]
    fn forest_is_deterministic_in_seed_and_varies_across_seeds() {
        let (x, y) = toy_regression();
        let fit = |seed| {
            let spec = LearnerSpec::random_forest(5, 4, 2).with_seed(seed);
            fit_regressor(&spec, x.view(), y.view())
                .unwrap()
                .predict(x.view())
                .unwrap()
        };
        let a = fit(7);
        let b = fit(7);
        let c = fit(8);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn classifier_outputs_stay_in_unit_interval() {
        let mut rng = rng_for(3, "learner-test", 1);
        use rand::Rng;
        let n = 60;
        let mut x = Array2::<f64>::zeros((n, 2));
        let mut a = Array1::<f64>::zeros(n);
        for i in 0..n {
            x[[i, 0]] = rng.gen_range(-1.0..1.0);
            x[[i, 1]] = rng.gen_range(-1.0..1.0);
            a[i] = if x[[i, 0]] + 0.3 * rng.gen_range(-1.0..1.0) > 0.0 { 1.0 } else { 0.0 };
        }
        for spec in [
            LearnerSpec::logistic(),
            LearnerSpec::cart(4, 2),
            LearnerSpec::random_forest(5, 4, 2).with_seed(1),
        ] {
            let model = fit_classifier(&spec, x.view(), a.view()).unwrap();
            let pred = model.predict(x.view()).unwrap();
            for &p in pred.iter() {
                assert!((0.0..=1.0).contains(&p), "{spec:?} produced {p}");
            }
        }
    }

    #[test]
    fn kfold_errors_on_bad_counts() {
        assert!(kfold_split(10, 1, 0).is_err());
        assert!(kfold_split(3, 4, 0).is_err());
        assert!(kfold_split(10, 5, 0).is_ok());
    }

    #[test]
    fn kfold_is_deterministic_and_seed_sensitive() {
        let a = kfold_split(40, 5, 11).unwrap();
        let b = kfold_split(40, 5, 11).unwrap();
        let c = kfold_split(40, 5, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.fold_of, c.fold_of);
    }

    #[test]
    fn grid_tune_matches_hand_rolled_cross_validation_for_least_squares() {
        let (x, y) = toy_regression();
        let folds = kfold_split(x.nrows(), 4, 5).unwrap();
        let report = grid_tune(
            &[LearnerSpec::ols()],
            x.view(),
            y.view(),
            &folds,
            TuneLoss::Rmse,
            Task::Regression,
        )
        .unwrap();

        let mut oof = Array1::<f64>::zeros(x.nrows());
        for fold in 0..folds.k {
            let train = folds.rows_out(fold);
            let xt = select_rows(x.view(), &train);
            let yt: Array1<f64> = train.iter().map(|&i| y[i]).collect();
            let m = linear::LinearModel::fit(xt.view(), yt.view(), 0.0).unwrap();
            for i in folds.rows_in(fold) {
                let row = x.row(i);
                oof[i] = m.intercept + m.coef.dot(&row);
            }
        }
        let sse: f64 = oof.iter().zip(y.iter()).map(|(&p, &t)| (p - t) * (p - t)).sum();
        let expected = (sse / x.nrows() as f64).sqrt();
        assert_abs_diff_eq!(report.entries[0].loss.unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn grid_tune_breaks_ties_by_list_order_and_records_failures() {
        let (x, y) = toy_regression();
        let folds = kfold_split(x.nrows(), 3, 1).unwrap();
        let first = LearnerSpec::ols();
        let twin = LearnerSpec::ols().with("tag", 1.0);
        let broken = LearnerSpec::ridge(-2.0);
        let report = grid_tune(
            &[first.clone(), twin, broken],
            x.view(),
            y.view(),
            &folds,
            TuneLoss::Rmse,
            Task::Regression,
        )
        .unwrap();
        assert_eq!(report.best, first);
        assert_eq!(report.entries[0].spec, first);
        let failed = report.entries.last().unwrap();
        assert_eq!(failed.spec.kind, LearnerKind::Ridge);
        assert!(failed.loss.is_none());
        assert!(failed.error.is_some());
    }

    #[test]
    fn grid_tune_with_all_candidates_failing_reports_tuning_failure() {
        let (x, y) = toy_regression();
        let folds = kfold_split(x.nrows(), 3, 1).unwrap();
        let err = grid_tune(
            &[LearnerSpec::ridge(-2.0)],
            x.view(),
            y.view(),
            &folds,
            TuneLoss::Rmse,
            Task::Regression,
        )
        .unwrap_err();
        assert!(matches!(err, Error::TuningFailed(_)));
    }

    #[test]
    fn grid_tune_ranks_signal_aware_model_above_constant_like_one() {
        let (x, y) = toy_regression();
        let folds = kfold_split(x.nrows(), 4, 2).unwrap();
        // An absurd ridge penalty is effectively the mean; plain least
        // squares must beat it on linear data.
        let report = grid_tune(
            &[LearnerSpec::ridge(1e12), LearnerSpec::ols()],
            x.view(),
            y.view(),
            &folds,
            TuneLoss::Rmse,
            Task::Regression,
        )
        .unwrap();
        assert_eq!(report.best.kind, LearnerKind::Ols);
        assert!(report.entries[0].loss.unwrap() < report.entries[1].loss.unwrap());
    }

    #[test]
    fn grid_tune_classification_uses_log_loss() {
        let mut rng = rng_for(17, "learner-test", 2);
        use rand::Rng;
        let n = 90;
        let mut x = Array2::<f64>::zeros((n, 2));
        let mut a = Array1::<f64>::zeros(n);
        for i in 0..n {
            x[[i, 0]] = rng.gen_range(-2.0..2.0);
            x[[i, 1]] = rng.gen_range(-2.0..2.0);
            let pr = 1.0 / (1.0 + (-1.2 * x[[i, 0]]).exp());
            a[i] = if rng.gen_range(0.0..1.0) < pr { 1.0 } else { 0.0 };
        }
        let folds = kfold_split(n, 3, 7).unwrap();
        let report = grid_tune(
            &[LearnerSpec::logistic(), LearnerSpec::cart(3, 5)],
            x.view(),
            a.view(),
            &folds,
            TuneLoss::LogLoss,
            Task::Classification,
        )
        .unwrap();
        assert!(report.entries[0].loss.unwrap() <= report.entries[1].loss.unwrap());
        assert!(report.entries.iter().all(|e| e.loss.is_some()));
    }

    #[test]
    fn nuisance_rmse_matches_hand_computation() {
        let y = array![1.0, 0.5, 0.0, 1.0];
        let a = [true, false, true, false];
        let g0 = array![0.2, 0.4, 0.3, 0.8];
        let g1 = array![0.9, 0.1, 0.4, 0.2];
        let m = array![0.7, 0.3, 0.5, 0.1];
        let r = nuisance_rmse(y.view(), &a, g0.view(), g1.view(), m.view());
        assert_abs_diff_eq!(r.rmse_m, (0.44f64 / 4.0).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.rmse_g1, 0.085f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.rmse_g0, 0.025f64.sqrt(), epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn kfold_partitions_rows_with_balanced_sizes(
            n in 4usize..100,
            k in 2usize..8,
            seed in 0u64..1000,
        ) {
            prop_assume!(k <= n);
            let folds = kfold_split(n, k, seed).unwrap();
            prop_assert_eq!(folds.fold_of.len(), n);
            let mut counts = vec![0usize; k];
            for &f in &folds.fold_of {
                prop_assert!(f < k);
                counts[f] += 1;
            }
            let max = *counts.iter().max().unwrap();
            let min = *counts.iter().min().unwrap();
            prop_assert!(max - min <= 1);
            prop_assert_eq!(counts.iter().sum::<usize>(), n);
        }
    }
}
