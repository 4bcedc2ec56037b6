//! Persisted intermediates: file layout, serialization, and the directory
//! lock.
//!
//! Every stage writes plain JSON or CSV into one bundle directory and later
//! stages read those files back, so each stage is independently runnable
//! and inspectable. All writers are deterministic: struct fields serialize
//! in declaration order and floats print in shortest round-trip form, which
//! is what makes identical runs byte-identical.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array1;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use reworkd_core::cate::{CateFit, ConfidenceBand};
use reworkd_core::data_model::{load_csv, CsvSchema, Dataset, PcaTransform};
use reworkd_core::dml::{EffectEstimate, NuisanceEstimates};
use reworkd_core::learners::{kfold_split, LearnerSpec, TuneReport};
use reworkd_core::policy::{Policy, PolicyEvalReport, RegretReport};
use reworkd_core::simulator::OracleTable;

use crate::{CliError, Result};

/// One pipeline output directory and the file layout inside it.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub dir: PathBuf,
}

impl Bundle {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.dir.join("config.json")
    }
    pub fn dataset(&self) -> PathBuf {
        self.dir.join("dataset.csv")
    }
    pub fn pca(&self) -> PathBuf {
        self.dir.join("pca.json")
    }
    pub fn preprocess(&self) -> PathBuf {
        self.dir.join("preprocess.json")
    }
    pub fn oracle(&self) -> PathBuf {
        self.dir.join("oracle.csv")
    }
    pub fn split(&self) -> PathBuf {
        self.dir.join("split.json")
    }
    pub fn tune(&self) -> PathBuf {
        self.dir.join("tune.json")
    }
    pub fn nuisance_train(&self) -> PathBuf {
        self.dir.join("nuisance_train.csv")
    }
    pub fn nuisance_eval(&self) -> PathBuf {
        self.dir.join("nuisance_eval.csv")
    }
    pub fn estimate(&self) -> PathBuf {
        self.dir.join("estimate.json")
    }
    pub fn cate_curves(&self) -> PathBuf {
        self.dir.join("cate_1d.json")
    }
    pub fn cate_curves_csv(&self) -> PathBuf {
        self.dir.join("cate_1d.csv")
    }
    pub fn cate_surface(&self) -> PathBuf {
        self.dir.join("cate_2d.json")
    }
    pub fn cate_surface_csv(&self) -> PathBuf {
        self.dir.join("cate_2d.csv")
    }
    pub fn policies(&self) -> PathBuf {
        self.dir.join("policies.json")
    }
    pub fn evaluation(&self) -> PathBuf {
        self.dir.join("evaluation.json")
    }
    pub fn evaluation_csv(&self) -> PathBuf {
        self.dir.join("evaluation.csv")
    }
    pub fn regret(&self) -> PathBuf {
        self.dir.join("regret.json")
    }
    pub fn sensitivity(&self) -> PathBuf {
        self.dir.join("sensitivity.json")
    }
    pub fn contour_csv(&self) -> PathBuf {
        self.dir.join("contour.csv")
    }
    pub fn balance(&self) -> PathBuf {
        self.dir.join("balance.json")
    }
    pub fn balance_csv(&self) -> PathBuf {
        self.dir.join("balance.csv")
    }
    pub fn overlap(&self) -> PathBuf {
        self.dir.join("overlap.json")
    }
    pub fn report_md(&self) -> PathBuf {
        self.dir.join("report.md")
    }
    pub fn plots_dir(&self) -> PathBuf {
        self.dir.join("plots")
    }

    /// Fails with a dependency error naming the subcommand that produces
    /// `path` when the file is absent.
    pub fn require(&self, path: PathBuf, needed: &'static str) -> Result<PathBuf> {
        if path.is_file() {
            Ok(path)
        } else {
            Err(CliError::MissingArtifact {
                artifact: path
                    .file_name()
                    .map(|f| f.to_string_lossy().into_owned())
                    .unwrap_or_else(|| path.display().to_string()),
                needed,
            })
        }
    }
}

/// Exclusive ownership of a bundle directory for the life of one command.
/// Creating the lock file is atomic; dropping the guard releases it.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)
            .map_err(CliError::io(format!("creating output directory `{}`", dir.display())))?;
        let path = dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(CliError::Locked(dir.to_path_buf()))
            }
            Err(e) => Err(CliError::io(format!("locking `{}`", dir.display()))(e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

// ---------------------------------------------------------------------------
// Generic JSON I/O.

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(CliError::json(format!("serializing `{}`", path.display())))?;
    text.push('\n');
    fs::write(path, text).map_err(CliError::io(format!("writing `{}`", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(CliError::io(format!("reading `{}`", path.display())))?;
    serde_json::from_str(&text).map_err(CliError::json(format!("parsing `{}`", path.display())))
}

// ---------------------------------------------------------------------------
// Artifact record types.

/// Winning learner per nuisance plus the full candidate table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneArtifact {
    pub outcome: LearnerSpec,
    pub propensity: LearnerSpec,
    pub outcome_entries: Vec<TuneScore>,
    pub propensity_entries: Vec<TuneScore>,
    /// Seed of the fold assignment the tournament ran on.
    pub fold_seed: u64,
}

/// One candidate's cross-validated loss; `loss` is absent when the
/// candidate failed to fit, with the failure recorded instead.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneScore {
    pub spec: LearnerSpec,
    pub loss: Option<f64>,
    pub error: Option<String>,
}

pub fn tune_scores(report: &TuneReport) -> Vec<TuneScore> {
    report
        .entries
        .iter()
        .map(|e| TuneScore {
            spec: e.spec.clone(),
            loss: e.loss,
            error: e.error.clone(),
        })
        .collect()
}

/// What the trim step did to the raw data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessArtifact {
    /// Requested (treated-low, control-high) quantiles.
    pub quantiles: (f64, f64),
    /// Retained closed interval of `cm_mean`.
    pub interval: (f64, f64),
    /// Indices into the raw data that survived, ascending.
    pub kept: Vec<usize>,
    pub dropped: usize,
    pub n_raw: usize,
    /// Raw pre-trim `cm_mean` values, for the trim histogram.
    pub pre_trim_cm: Vec<f64>,
}

/// Nuisance fit quality, one RMSE per fitted function.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RmseRow {
    pub m: f64,
    pub g0: f64,
    pub g1: f64,
}

/// Headline estimates and everything needed to rebuild the score vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateArtifact {
    /// Population effect on the training side.
    pub ate: EffectEstimate<f64>,
    /// Effect on treated lots, training side.
    pub att: EffectEstimate<f64>,
    /// Unadjusted difference in means, training side.
    pub naive: EffectEstimate<f64>,
    /// Population effect on the held-out side; policy values are measured
    /// against the same scores.
    pub holdout_ate: EffectEstimate<f64>,
    pub rmse_train: RmseRow,
    pub rmse_eval: RmseRow,
    pub k: usize,
    pub clip: (f64, f64),
    pub fold_seed_train: u64,
    pub fold_seed_eval: u64,
    pub clipped_train: usize,
    pub clipped_eval: usize,
    /// True effect over the processed lots; simulated inputs only.
    pub oracle_ate: Option<f64>,
    /// True effect over processed treated lots; simulated inputs only.
    pub oracle_att: Option<f64>,
}

/// One fitted effect curve with its bootstrap band.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CateCurve {
    pub column: String,
    pub fit: CateFit<f64>,
    pub band: ConfidenceBand<f64>,
}

/// The two-column effect surface evaluated on a square grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CateSurface {
    pub columns: (String, String),
    pub fit: CateFit<f64>,
    /// Grid points, row-major with the first axis slowest.
    pub grid: Vec<(f64, f64)>,
    pub theta: Vec<f64>,
    pub std_err: Vec<f64>,
    pub points_per_axis: usize,
}

/// A policy under a stable name used across evaluation and regret tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedPolicy {
    pub name: String,
    pub policy: Policy<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRow {
    pub name: String,
    pub report: PolicyEvalReport<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegretRow {
    pub name: String,
    pub report: RegretReport<f64>,
}

/// Per-lot nuisance predictions for one data side, enough to rebuild the
/// exact score vectors.
#[derive(Debug, Clone)]
pub struct NuisanceRows {
    pub g0_hat: Vec<f64>,
    pub g1_hat: Vec<f64>,
    pub m_raw: Vec<f64>,
}

// ---------------------------------------------------------------------------
// CSV writers and readers.

fn csv_context(path: &Path, action: &str) -> String {
    format!("{action} `{}`", path.display())
}

/// Writes per-lot nuisance predictions with the fold index and the score
/// each lot contributes.
pub fn write_nuisance_csv(
    path: &Path,
    nuis: &NuisanceEstimates<f64>,
    psi_b: &Array1<f64>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(CliError::csv(csv_context(path, "opening")))?;
    let ctx = || CliError::csv(csv_context(path, "writing"));
    w.write_record(["row", "fold", "g0_hat", "g1_hat", "m_raw", "m_hat", "psi_b"])
        .map_err(ctx())?;
    for i in 0..nuis.n() {
        w.write_record(&[
            i.to_string(),
            nuis.folds.fold_of[i].to_string(),
            nuis.g0_hat[i].to_string(),
            nuis.g1_hat[i].to_string(),
            nuis.m_raw[i].to_string(),
            nuis.m_hat[i].to_string(),
            psi_b[i].to_string(),
        ])
        .map_err(ctx())?;
    }
    w.flush().map_err(CliError::io(csv_context(path, "flushing")))
}

pub fn read_nuisance_csv(path: &Path) -> Result<NuisanceRows> {
    let mut r =
        csv::Reader::from_path(path).map_err(CliError::csv(csv_context(path, "opening")))?;
    let mut rows = NuisanceRows { g0_hat: Vec::new(), g1_hat: Vec::new(), m_raw: Vec::new() };
    for rec in r.deserialize::<NuisanceCsvRow>() {
        let rec = rec.map_err(CliError::csv(csv_context(path, "parsing")))?;
        rows.g0_hat.push(rec.g0_hat);
        rows.g1_hat.push(rec.g1_hat);
        rows.m_raw.push(rec.m_raw);
    }
    Ok(rows)
}

#[derive(Deserialize)]
struct NuisanceCsvRow {
    g0_hat: f64,
    g1_hat: f64,
    m_raw: f64,
}

/// Rebuilds clipped nuisance estimates from persisted predictions: the
/// fold assignment is regenerated from its seed and clipping is reapplied,
/// reproducing the original estimates bit for bit.
pub fn rebuild_nuisances(
    rows: &NuisanceRows,
    k: usize,
    fold_seed: u64,
    clip: (f64, f64),
) -> reworkd_core::Result<NuisanceEstimates<f64>> {
    let folds = kfold_split(rows.g0_hat.len(), k, fold_seed)?;
    NuisanceEstimates::from_parts(
        Array1::from_vec(rows.g0_hat.clone()),
        Array1::from_vec(rows.g1_hat.clone()),
        Array1::from_vec(rows.m_raw.clone()),
        clip,
        folds,
    )
}

/// Writes the ground-truth table row-aligned with `dataset.csv`.
pub fn write_oracle_csv(path: &Path, t: &OracleTable<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(CliError::csv(csv_context(path, "opening")))?;
    let ctx = || CliError::csv(csv_context(path, "writing"));
    w.write_record(["y0", "y1", "propensity", "drift"]).map_err(ctx())?;
    for i in 0..t.n() {
        w.write_record(&[
            t.y0[i].to_string(),
            t.y1[i].to_string(),
            t.propensity[i].to_string(),
            t.drift[i].to_string(),
        ])
        .map_err(ctx())?;
    }
    w.flush().map_err(CliError::io(csv_context(path, "flushing")))
}

pub fn read_oracle_csv(path: &Path) -> Result<OracleTable<f64>> {
    let mut r =
        csv::Reader::from_path(path).map_err(CliError::csv(csv_context(path, "opening")))?;
    let (mut y0, mut y1, mut propensity, mut drift) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for rec in r.deserialize::<OracleCsvRow>() {
        let rec = rec.map_err(CliError::csv(csv_context(path, "parsing")))?;
        y0.push(rec.y0);
        y1.push(rec.y1);
        propensity.push(rec.propensity);
        drift.push(rec.drift);
    }
    Ok(OracleTable {
        y0: Array1::from_vec(y0),
        y1: Array1::from_vec(y1),
        propensity: Array1::from_vec(propensity),
        drift: Array1::from_vec(drift),
    })
}

#[derive(Deserialize)]
struct OracleCsvRow {
    y0: f64,
    y1: f64,
    propensity: f64,
    drift: f64,
}

/// Flat per-grid-point view of every one-dimensional effect curve.
pub fn write_cate_curves_csv(path: &Path, curves: &[CateCurve]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(CliError::csv(csv_context(path, "opening")))?;
    let ctx = || CliError::csv(csv_context(path, "writing"));
    w.write_record(["column", "z", "estimate", "lower", "upper"]).map_err(ctx())?;
    for c in curves {
        for i in 0..c.band.estimate.len() {
            w.write_record(&[
                c.column.clone(),
                c.band.grid[[i, 0]].to_string(),
                c.band.estimate[i].to_string(),
                c.band.lower[i].to_string(),
                c.band.upper[i].to_string(),
            ])
            .map_err(ctx())?;
        }
    }
    w.flush().map_err(CliError::io(csv_context(path, "flushing")))
}

/// Flat per-grid-point view of the effect surface.
pub fn write_cate_surface_csv(path: &Path, s: &CateSurface) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(CliError::csv(csv_context(path, "opening")))?;
    let ctx = || CliError::csv(csv_context(path, "writing"));
    w.write_record([s.columns.0.as_str(), s.columns.1.as_str(), "estimate", "std_err"])
        .map_err(ctx())?;
    for (i, &(zx, zy)) in s.grid.iter().enumerate() {
        w.write_record(&[
            zx.to_string(),
            zy.to_string(),
            s.theta[i].to_string(),
            s.std_err[i].to_string(),
        ])
        .map_err(ctx())?;
    }
    w.flush().map_err(CliError::io(csv_context(path, "flushing")))
}

/// Policy evaluation table: one row per policy and cost level.
pub fn write_evaluation_csv(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(CliError::csv(csv_context(path, "opening")))?;
    let ctx = || CliError::csv(csv_context(path, "writing"));
    w.write_record([
        "policy",
        "form",
        "cost",
        "value",
        "std_err",
        "ci_low",
        "ci_high",
        "share_treated",
        "gate",
    ])
    .map_err(ctx())?;
    for row in rows {
        for cv in &row.report.values {
            w.write_record(&[
                row.name.clone(),
                row.report.form.clone(),
                cv.cost.to_string(),
                cv.value.theta_hat.to_string(),
                cv.value.std_err.to_string(),
                cv.value.ci_low.to_string(),
                cv.value.ci_high.to_string(),
                row.report.share_treated.to_string(),
                row.report
                    .gate
                    .as_ref()
                    .map(|g| g.theta_hat.to_string())
                    .unwrap_or_default(),
            ])
            .map_err(ctx())?;
        }
    }
    w.flush().map_err(CliError::io(csv_context(path, "flushing")))
}

/// Worst-case lower bound of the effect over the strength grid.
pub fn write_contour_csv(
    path: &Path,
    grid: &reworkd_core::sensitivity::ContourGrid<f64>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(CliError::csv(csv_context(path, "opening")))?;
    let ctx = || CliError::csv(csv_context(path, "writing"));
    w.write_record(["zeta_y", "zeta_d", "lower_bound"]).map_err(ctx())?;
    for (i, &zy) in grid.zeta_y.iter().enumerate() {
        for (j, &zd) in grid.zeta_d.iter().enumerate() {
            w.write_record(&[zy.to_string(), zd.to_string(), grid.lower[[i, j]].to_string()])
                .map_err(ctx())?;
        }
    }
    w.flush().map_err(CliError::io(csv_context(path, "flushing")))
}

/// Balance table: one row per covariate, one score column per arm.
pub fn write_balance_csv(
    path: &Path,
    report: &reworkd_core::diagnostics::BalanceReport<f64>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(CliError::csv(csv_context(path, "opening")))?;
    let ctx = || CliError::csv(csv_context(path, "writing"));
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let fmt_pass = |v: Option<bool>| v.map(|x| x.to_string()).unwrap_or_default();
    w.write_record(["covariate", "treated_psb", "control_psb", "treated_pass", "control_pass"])
        .map_err(ctx())?;
    for row in &report.rows {
        w.write_record(&[
            row.covariate.clone(),
            fmt(row.treated_psb),
            fmt(row.control_psb),
            fmt_pass(row.treated_pass),
            fmt_pass(row.control_pass),
        ])
        .map_err(ctx())?;
    }
    w.flush().map_err(CliError::io(csv_context(path, "flushing")))
}

// ---------------------------------------------------------------------------
// Dataset round trip.

/// Writes the processed dataset and the exact color rotation it was built
/// with; reading both back reproduces the feature matrix bit for bit.
pub fn write_dataset(bundle: &Bundle, d: &Dataset<f64>) -> Result<()> {
    reworkd_core::data_model::write_csv(d, &bundle.dataset())
        .map_err(in_write(&bundle.dataset()))?;
    write_json(&bundle.pca(), d.pca())
}

/// Loads the processed dataset under its persisted color rotation rather
/// than refitting one, so features match the original run exactly.
pub fn read_dataset(bundle: &Bundle) -> Result<Dataset<f64>> {
    let path = bundle.require(bundle.dataset(), "simulate")?;
    let pca: PcaTransform<f64> = read_json(&bundle.require(bundle.pca(), "simulate")?)?;
    let loaded: Dataset<f64> =
        load_csv(&path, &CsvSchema::default()).map_err(in_read(&path))?;
    Dataset::from_records_with_pca(loaded.records().to_vec(), pca).map_err(in_read(&path))
}

fn in_write(path: &Path) -> impl FnOnce(reworkd_core::Error) -> CliError {
    crate::in_stage(format!("writing {}", path.display()))
}

fn in_read(path: &Path) -> impl FnOnce(reworkd_core::Error) -> CliError {
    crate::in_stage(format!("reading {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use reworkd_core::simulator::{simulate, SimConfig};

    fn small_dataset() -> (Dataset<f64>, OracleTable<f64>) {
        let cfg = SimConfig { n_lots: 60, seed: 5, ..SimConfig::default() };
        simulate(&cfg).unwrap()
    }

    #[test]
    fn dataset_round_trip_preserves_features_bitwise() {
        let (d, _) = small_dataset();
        let tmp = tempfile::tempdir().unwrap();
        let bundle = Bundle::new(tmp.path());
        write_dataset(&bundle, &d).unwrap();
        let back = read_dataset(&bundle).unwrap();
        assert_eq!(d.features(), back.features());
        assert_eq!(d.treatments(), back.treatments());
        assert_eq!(d.yields(), back.yields());
        assert_eq!(d.pca(), back.pca());
    }

    #[test]
    fn oracle_round_trip_is_exact() {
        let (_, t) = small_dataset();
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("oracle.csv");
        write_oracle_csv(&path, &t).unwrap();
        let back = read_oracle_csv(&path).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn nuisance_round_trip_rebuilds_identical_estimates() {
        let (d, _) = small_dataset();
        let nuis = reworkd_core::dml::crossfit_nuisances(
            &d,
            &LearnerSpec::ridge(1.0),
            &LearnerSpec::logistic(),
            3,
            99,
        )
        .unwrap();
        let scores = reworkd_core::dml::aipw_scores(&d, &nuis).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("nuisance.csv");
        write_nuisance_csv(&path, &nuis, &scores.psi_b).unwrap();
        let rows = read_nuisance_csv(&path).unwrap();
        let back = rebuild_nuisances(&rows, 3, 99, nuis.clip_bounds).unwrap();
        assert_eq!(nuis.g0_hat, back.g0_hat);
        assert_eq!(nuis.m_hat, back.m_hat);
        assert_eq!(nuis.folds, back.folds);
        assert_eq!(nuis.clipped_count, back.clipped_count);
        let rescored = reworkd_core::dml::aipw_scores(&d, &back).unwrap();
        assert_eq!(scores.psi_b, rescored.psi_b);
    }

    #[test]
    fn missing_artifact_names_the_producing_subcommand() {
        let tmp = tempfile::tempdir().unwrap();
        let bundle = Bundle::new(tmp.path());
        let err = bundle.require(bundle.policies(), "policy").unwrap_err();
        let text = err.to_string();
        assert!(text.contains("policies.json"), "{text}");
        assert!(text.contains("reworkd policy"), "{text}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn lock_is_exclusive_and_released_on_drop() {
        let tmp = tempfile::tempdir().unwrap();
        let first = DirLock::acquire(tmp.path()).unwrap();
        let second = DirLock::acquire(tmp.path());
        assert!(matches!(second, Err(CliError::Locked(_))));
        drop(first);
        DirLock::acquire(tmp.path()).unwrap();
    }
}
