//! Pipeline configuration: one JSON document driving every stage.
//!
//! Every knob has a production default, so `{}` is a valid config and any
//! subset of fields can be overridden. The resolved config is persisted to
//! the output directory, and later stages read it back, which is what makes
//! stage-by-stage invocation agree with the monolithic run.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use reworkd_core::data_model::CsvSchema;
use reworkd_core::diagnostics::ControlWeighting;
use reworkd_core::learners::LearnerSpec;
use reworkd_core::simulator::SimConfig;
use reworkd_core::Error;

/// Where the lots come from: the built-in generator or a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSpec {
    /// Generate a synthetic production run. Its `seed` field is ignored:
    /// the pipeline replaces it with a seed derived from the master seed so
    /// one knob controls the whole run.
    Simulate(SimConfig),
    /// Load logged lots from disk. Oracle-dependent outputs (regret tables)
    /// are skipped in this mode because true counterfactuals are unknown.
    Csv {
        path: PathBuf,
        #[serde(default)]
        schema: CsvSchema,
    },
}

impl Default for InputSpec {
    fn default() -> Self {
        InputSpec::Simulate(SimConfig::default())
    }
}

/// Candidate learners per nuisance, selected by cross-validated loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerGrid {
    /// Outcome-regression candidates, scored by RMSE.
    pub outcome: Vec<LearnerSpec>,
    /// Propensity candidates, scored by log loss.
    pub propensity: Vec<LearnerSpec>,
}

impl Default for LearnerGrid {
    fn default() -> Self {
        Self {
            outcome: vec![
                LearnerSpec::boosted_stumps(150, 0.1),
                LearnerSpec::ridge(1.0),
            ],
            propensity: vec![LearnerSpec::logistic()],
        }
    }
}

/// Effect-curve estimation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CateConfig {
    /// Columns that each get a one-dimensional effect curve with a band.
    pub columns: Vec<String>,
    pub degree: usize,
    pub df: usize,
    /// Evaluation points per one-dimensional grid.
    pub grid_points: usize,
    /// Per-side tail mass of the bootstrap band (0.025 gives a 95% band).
    pub band_alpha: f64,
    pub bootstrap_draws: usize,
    /// Column pair spanning the effect surface.
    pub surface: (String, String),
    pub surface_degree: usize,
    pub surface_df: usize,
    /// Grid points per surface axis.
    pub surface_points: usize,
}

impl Default for CateConfig {
    fn default() -> Self {
        Self {
            columns: vec![
                "cm_mean".into(),
                "cs_mean".into(),
                "invalid".into(),
                "workload".into(),
            ],
            degree: 3,
            df: 5,
            grid_points: 40,
            band_alpha: 0.025,
            bootstrap_draws: 500,
            surface: ("cm_mean".into(), "cs_mean".into()),
            surface_degree: 2,
            surface_df: 5,
            surface_points: 30,
        }
    }
}

/// Which policies to learn and how to price them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// Effect floors for threshold and conservative policies.
    pub gammas: Vec<f64>,
    /// Per-rework cost levels the evaluation table prices.
    pub costs: Vec<f64>,
    /// Column whose fitted effect curve drives the threshold policies.
    pub threshold_column: String,
    /// Conditioning columns for the decision trees.
    pub tree_features: Vec<String>,
    pub greedy_depths: Vec<usize>,
    /// Depth of the exactly optimized tree (at most 2).
    pub exact_depth: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            gammas: vec![0.0, 0.01, 0.03, 0.05],
            costs: vec![0.0, 0.01, 0.03],
            threshold_column: "cm_mean".into(),
            tree_features: vec![
                "cm_mean".into(),
                "cs_mean".into(),
                "invalid".into(),
                "workload".into(),
            ],
            greedy_depths: vec![1, 2, 3, 4],
            exact_depth: 2,
        }
    }
}

/// Robustness-analysis settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensitivityConfig {
    /// Reference confounder strength on the outcome channel.
    pub zeta_y: f64,
    /// Reference confounder strength on the treatment channel.
    pub zeta_d: f64,
    /// Assumed alignment between the two channels.
    pub rho: f64,
    pub alpha: f64,
    /// Column groups to drop when benchmarking observable confounding.
    pub benchmarks: Vec<Vec<String>>,
    /// Shared strength axis of the contour grid, strictly ascending in
    /// [0, 1).
    pub contour_axis: Vec<f64>,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self {
            zeta_y: 0.05,
            zeta_d: 0.05,
            rho: 1.0,
            alpha: 0.05,
            benchmarks: vec![vec!["workload".into()], vec!["invalid".into()]],
            contour_axis: (0..13).map(|i| i as f64 * 0.025).collect(),
        }
    }
}

/// Balance and overlap reporting settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosticsConfig {
    /// Histogram bin count for overlap plots.
    pub bins: usize,
    pub weighting: ControlWeighting,
    /// Covariates to histogram by arm; fitted propensities are always
    /// added as an extra panel.
    pub histogram_columns: Vec<String>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            bins: 30,
            weighting: ControlWeighting::Literal,
            histogram_columns: vec!["cm_mean".into()],
        }
    }
}

/// Everything one pipeline run needs, in a single JSON-serializable value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub input: InputSpec,
    /// Cross-fitting folds.
    pub folds: usize,
    /// Propensity clip bounds.
    pub clip: (f64, f64),
    /// Trim quantiles: treated-side low, control-side high, on `cm_mean`.
    pub subsample_quantiles: (f64, f64),
    /// Share of lots that go to the training side.
    pub split_fraction: f64,
    pub learners: LearnerGrid,
    pub cate: CateConfig,
    pub policy: PolicyConfig,
    pub sensitivity: SensitivityConfig,
    pub diagnostics: DiagnosticsConfig,
    /// Master seed; every stage seed derives from it by name and index.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: InputSpec::default(),
            folds: 5,
            clip: (0.025, 0.975),
            subsample_quantiles: (0.01, 0.995),
            split_fraction: 0.7,
            learners: LearnerGrid::default(),
            cate: CateConfig::default(),
            policy: PolicyConfig::default(),
            sensitivity: SensitivityConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
            seed: 17,
        }
    }
}

impl PipelineConfig {
    /// Rejects configs no stage could execute. Stage code still enforces
    /// its own contracts; this catches the obvious mistakes up front.
    pub fn validate(&self) -> Result<(), Error> {
        let fail = |msg: String| Err(Error::Parameter(msg));
        if self.folds < 2 {
            return fail(format!("folds must be at least 2, got {}", self.folds));
        }
        let (lo, hi) = self.clip;
        if !(lo > 0.0 && hi < 1.0 && lo < hi) {
            return fail(format!("clip bounds must satisfy 0 < lo < hi < 1, got ({lo}, {hi})"));
        }
        let (ql, qh) = self.subsample_quantiles;
        if !((0.0..=1.0).contains(&ql) && (0.0..=1.0).contains(&qh)) {
            return fail(format!("trim quantiles must lie in [0, 1], got ({ql}, {qh})"));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return fail(format!(
                "split fraction must lie strictly between 0 and 1, got {}",
                self.split_fraction
            ));
        }
        if self.learners.outcome.is_empty() || self.learners.propensity.is_empty() {
            return fail("both learner candidate lists must be nonempty".into());
        }
        for spec in self.learners.outcome.iter().chain(&self.learners.propensity) {
            spec.validate()?;
        }
        if self.cate.columns.is_empty() {
            return fail("at least one effect-curve column is required".into());
        }
        if self.cate.grid_points < 2 || self.cate.surface_points < 2 {
            return fail("effect grids need at least 2 points per axis".into());
        }
        if !(self.cate.band_alpha > 0.0 && self.cate.band_alpha < 0.5) {
            return fail(format!(
                "band tail mass must lie in (0, 0.5), got {}",
                self.cate.band_alpha
            ));
        }
        if self.cate.bootstrap_draws == 0 {
            return fail("bootstrap draw count must be positive".into());
        }
        for &g in &self.policy.gammas {
            if !(g.is_finite() && g >= 0.0) {
                return fail(format!("policy gammas must be finite and nonnegative, got {g}"));
            }
        }
        if self.policy.costs.is_empty() {
            return fail("at least one cost level is required".into());
        }
        for &c in &self.policy.costs {
            if !c.is_finite() {
                return fail(format!("cost levels must be finite, got {c}"));
            }
        }
        if self.policy.tree_features.is_empty() {
            return fail("decision trees need at least one feature".into());
        }
        for &d in &self.policy.greedy_depths {
            if d == 0 {
                return fail("tree depths must be positive".into());
            }
        }
        if self.policy.exact_depth == 0 || self.policy.exact_depth > 2 {
            return fail(format!(
                "exact tree depth must be 1 or 2, got {}",
                self.policy.exact_depth
            ));
        }
        if !(self.sensitivity.alpha > 0.0 && self.sensitivity.alpha < 1.0) {
            return fail(format!(
                "sensitivity alpha must lie in (0, 1), got {}",
                self.sensitivity.alpha
            ));
        }
        if self.sensitivity.contour_axis.len() < 2 {
            return fail("contour axis needs at least 2 values".into());
        }
        if self.diagnostics.bins < 2 {
            return fail(format!(
                "overlap histograms need at least 2 bins, got {}",
                self.diagnostics.bins
            ));
        }
        Ok(())
    }

    /// True when the input is simulated, which is what unlocks
    /// oracle-dependent outputs.
    pub fn is_simulated(&self) -> bool {
        matches!(self.input, InputSpec::Simulate(_))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips_losslessly() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        // A second serialization of the reparsed value is byte-identical.
        assert_eq!(text, serde_json::to_string_pretty(&back).unwrap());
    }

    #[test]
    fn empty_document_yields_the_default_config() {
        let cfg: PipelineConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
    }

    #[test]
    fn partial_overrides_keep_unrelated_defaults() {
        let cfg: PipelineConfig =
            serde_json::from_str(r#"{"folds": 3, "policy": {"costs": [0.02]}}"#).unwrap();
        assert_eq!(cfg.folds, 3);
        assert_eq!(cfg.policy.costs, vec![0.02]);
        assert_eq!(cfg.policy.gammas, PipelineConfig::default().policy.gammas);
        assert_eq!(cfg.clip, (0.025, 0.975));
    }

    #[test]
    fn csv_input_round_trips() {
        let cfg = PipelineConfig {
            input: InputSpec::Csv {
                path: PathBuf::from("lots.csv"),
                schema: CsvSchema::default(),
            },
            ..PipelineConfig::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        assert!(!back.is_simulated());
    }

    #[test]
    fn bad_knobs_are_rejected() {
        let mut cfg = PipelineConfig::default();
        cfg.folds = 1;
        assert!(cfg.validate().is_err());

        let mut cfg = PipelineConfig::default();
        cfg.clip = (0.5, 0.5);
        assert!(cfg.validate().is_err());

        let mut cfg = PipelineConfig::default();
        cfg.split_fraction = 1.0;
        assert!(cfg.validate().is_err());

        let mut cfg = PipelineConfig::default();
        cfg.learners.propensity.clear();
        assert!(cfg.validate().is_err());

        let mut cfg = PipelineConfig::default();
        cfg.policy.exact_depth = 3;
        assert!(cfg.validate().is_err());

        let mut cfg = PipelineConfig::default();
        cfg.policy.gammas = vec![-0.01];
        assert!(cfg.validate().is_err());
    }
}
