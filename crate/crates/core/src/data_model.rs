//! Lot-level production data and its derived feature representation.
//!
//! A lot is a panel of `k` chips. Each chip carries a two-dimensional color
//! measurement `(cx, cy)` and a validity flag; the lot carries the operator
//! workload at decision time, the binary rework decision, and the final yield
//! (fraction of conforming chips). Raw colors live in an arbitrary rotated
//! measurement frame; a two-component PCA recovers the conversion axis `C_m`
//! (the direction color moves as phosphor is deposited) and the orthogonal
//! nuisance axis `C_s`. All downstream estimation consumes the derived
//! feature matrix built here.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::scalar::Scalar;
use crate::stats::{correlation, quantile_sorted};

/// One production lot: per-chip color measurements plus lot-level fields.
#[derive(Debug, Clone, PartialEq)]
pub struct LotRecord<S: Scalar> {
    cx: Vec<S>,
    cy: Vec<S>,
    invalid: Vec<bool>,
    workload: S,
    treated: bool,
    yield_frac: S,
}

impl<S: Scalar> LotRecord<S> {
    /// Builds a record, marking chips with non-finite coordinates invalid.
    ///
    /// Requires equally sized chip vectors, a nonnegative workload, yield in
    /// `[0, 1]`, and at least one valid chip.
    pub fn new(
        cx: Vec<S>,
        cy: Vec<S>,
        invalid: Vec<bool>,
        workload: S,
        treated: bool,
        yield_frac: S,
    ) -> Result<Self> {
        if cx.len() != cy.len() || cx.len() != invalid.len() {
            return Err(Error::Shape(format!(
                "chip vectors disagree: {} cx, {} cy, {} flags",
                cx.len(),
                cy.len(),
                invalid.len()
            )));
        }
        if cx.is_empty() {
            return Err(Error::Validation("record has zero chips".into()));
        }
        if !(workload >= S::zero()) {
            return Err(Error::Validation(format!(
                "workload must be a nonnegative count, got {workload}"
            )));
        }
        if !(yield_frac >= S::zero() && yield_frac <= S::one()) {
            return Err(Error::Validation(format!(
                "yield must lie in [0, 1], got {yield_frac}"
            )));
        }
        let mut invalid = invalid;
        for j in 0..cx.len() {
            if !cx[j].is_finite() || !cy[j].is_finite() {
                invalid[j] = true;
            }
        }
        if invalid.iter().all(|&b| b) {
            return Err(Error::DegenerateRecord { row: 0 });
        }
        Ok(Self {
            cx,
            cy,
            invalid,
            workload,
            treated,
            yield_frac,
        })
    }

    pub fn chips(&self) -> usize {
        self.cx.len()
    }

    pub fn cx(&self) -> &[S] {
        &self.cx
    }

    pub fn cy(&self) -> &[S] {
        &self.cy
    }

    pub fn invalid_flags(&self) -> &[bool] {
        &self.invalid
    }

    /// Number of invalid chips; always below `chips()` by construction.
    pub fn invalid_count(&self) -> usize {
        self.invalid.iter().filter(|&&b| b).count()
    }

    pub fn workload(&self) -> S {
        self.workload
    }

    pub fn treated(&self) -> bool {
        self.treated
    }

    pub fn yield_frac(&self) -> S {
        self.yield_frac
    }

    /// Mean raw color over valid chips only.
    pub fn masked_mean_color(&self) -> (S, S) {
        let mut sx = S::zero();
        let mut sy = S::zero();
        let mut n = 0usize;
        for j in 0..self.chips() {
            if !self.invalid[j] {
                sx += self.cx[j];
                sy += self.cy[j];
                n += 1;
            }
        }
        let denom = S::of_usize(n);
        (sx / denom, sy / denom)
    }
}

/// Masked mean color point per record.
pub fn mean_color_points<S: Scalar>(records: &[LotRecord<S>]) -> Vec<(S, S)> {
    records.iter().map(LotRecord::masked_mean_color).collect()
}

/// Fitted two-component rotation from the raw `(cx, cy)` frame into
/// `(C_m, C_s)` coordinates.
///
/// Both components are unit length and mutually orthogonal. The first
/// component is oriented so that its scores correlate nonpositively with the
/// rework decision: under-converted lots (the ones operators rework) sit
/// early on the conversion curve, at low `C_m`. Without treatment labels, or
/// under exactly zero correlation, each component instead keeps its first
/// nonzero coordinate positive.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PcaTransform<S: Scalar> {
    pub mean: [S; 2],
    pub component_m: [S; 2],
    pub component_s: [S; 2],
    /// Sample variances of the fitting scores along each component,
    /// descending.
    pub eigenvalues: [S; 2],
}

impl<S: Scalar> PcaTransform<S> {
    /// Projects a raw color point into `(C_m, C_s)`.
    pub fn apply(&self, point: (S, S)) -> (S, S) {
        let dx = point.0 - self.mean[0];
        let dy = point.1 - self.mean[1];
        (
            self.component_m[0] * dx + self.component_m[1] * dy,
            self.component_s[0] * dx + self.component_s[1] * dy,
        )
    }

    /// Inverse of [`apply`](Self::apply); exact up to rounding because the
    /// rotation is orthonormal.
    pub fn invert(&self, scores: (S, S)) -> (S, S) {
        (
            self.mean[0] + self.component_m[0] * scores.0 + self.component_s[0] * scores.1,
            self.mean[1] + self.component_m[1] * scores.0 + self.component_s[1] * scores.1,
        )
    }
}

fn orient_by_first_nonzero<S: Scalar>(v: [S; 2]) -> [S; 2] {
    let flip = if v[0] != S::zero() {
        v[0] < S::zero()
    } else {
        v[1] < S::zero()
    };
    if flip {
        [-v[0], -v[1]]
    } else {
        v
    }
}

/// Fits the rotation on mean color points, orienting signs as described on
/// [`PcaTransform`]. Requires at least two distinct points.
pub fn fit_pca<S: Scalar>(
    points: &[(S, S)],
    treatments: Option<&[bool]>,
) -> Result<PcaTransform<S>> {
    if points.len() < 2 {
        return Err(Error::DegeneratePca(format!(
            "need at least two points, got {}",
            points.len()
        )));
    }
    if let Some(a) = treatments {
        if a.len() != points.len() {
            return Err(Error::Shape(format!(
                "{} treatment labels for {} points",
                a.len(),
                points.len()
            )));
        }
    }
    let n = S::of_usize(points.len());
    let mx = points.iter().map(|p| p.0).sum::<S>() / n;
    let my = points.iter().map(|p| p.1).sum::<S>() / n;
    let mut sxx = S::zero();
    let mut sxy = S::zero();
    let mut syy = S::zero();
    for p in points {
        let dx = p.0 - mx;
        let dy = p.1 - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let denom = S::of_usize(points.len() - 1);
    let (cxx, cxy, cyy) = (sxx / denom, sxy / denom, syy / denom);
    if cxx == S::zero() && cxy == S::zero() && cyy == S::zero() {
        return Err(Error::DegeneratePca("all points coincide".into()));
    }

    let ([l1, l2], [v1, v2]) = crate::linalg::sym_eigen_2x2(cxx, cxy, cyy);

    let mut component_m = v1;
    let component_s = orient_by_first_nonzero(v2);
    let mut oriented = false;
    if let Some(a) = treatments {
        let scores: Vec<S> = points
            .iter()
            .map(|p| component_m[0] * (p.0 - mx) + component_m[1] * (p.1 - my))
            .collect();
        let labels: Vec<S> = a
            .iter()
            .map(|&t| if t { S::one() } else { S::zero() })
            .collect();
        let corr = correlation(&scores, &labels);
        if corr > S::zero() {
            component_m = [-component_m[0], -component_m[1]];
            oriented = true;
        } else if corr < S::zero() {
            oriented = true;
        }
    }
    if !oriented {
        component_m = orient_by_first_nonzero(component_m);
    }

    Ok(PcaTransform {
        mean: [mx, my],
        component_m,
        component_s,
        eigenvalues: [l1, l2],
    })
}

/// Derived feature columns for one dataset. Column order is per-chip `C_m`,
/// per-chip `C_s`, then the lot-level summaries.
pub fn feature_names(chips: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(2 * chips + 5);
    for j in 0..chips {
        names.push(format!("cm_{j:02}"));
    }
    for j in 0..chips {
        names.push(format!("cs_{j:02}"));
    }
    names.extend(
        ["cm_mean", "cs_mean", "cm_var", "invalid", "workload"]
            .map(str::to_string),
    );
    names
}

/// Production dataset: records plus the derived feature matrix in the fitted
/// `(C_m, C_s)` frame.
#[derive(Debug, Clone)]
pub struct Dataset<S: Scalar> {
    records: Vec<LotRecord<S>>,
    chips: usize,
    pca: PcaTransform<S>,
    feature_names: Vec<String>,
    features: Array2<S>,
}

impl<S: Scalar> Dataset<S> {
    /// Fits the rotation on the records' mean color points (sign set by the
    /// observed decisions) and derives features.
    pub fn from_records(records: Vec<LotRecord<S>>) -> Result<Self> {
        let points = mean_color_points(&records);
        let treatments: Vec<bool> = records.iter().map(LotRecord::treated).collect();
        let pca = fit_pca(&points, Some(&treatments))?;
        Self::from_records_with_pca(records, pca)
    }

    /// Derives features under an already fitted rotation. Used when replaying
    /// a persisted pipeline stage, where the rotation must not be refit.
    pub fn from_records_with_pca(records: Vec<LotRecord<S>>, pca: PcaTransform<S>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Validation("dataset has no records".into()));
        }
        let chips = records[0].chips();
        for (i, r) in records.iter().enumerate() {
            if r.chips() != chips {
                return Err(Error::Shape(format!(
                    "record {i} has {} chips where {chips} expected",
                    r.chips()
                )));
            }
        }

        let names = feature_names(chips);
        let ncols = names.len();
        let mut features = Array2::zeros((records.len(), ncols));
        for (i, r) in records.iter().enumerate() {
            let mut cm = vec![S::zero(); chips];
            let mut cs = vec![S::zero(); chips];
            let mut cm_sum = S::zero();
            let mut cs_sum = S::zero();
            let mut n_valid = 0usize;
            for j in 0..chips {
                if !r.invalid[j] {
                    let (m, s) = pca.apply((r.cx[j], r.cy[j]));
                    cm[j] = m;
                    cs[j] = s;
                    cm_sum += m;
                    cs_sum += s;
                    n_valid += 1;
                }
            }
            let nv = S::of_usize(n_valid);
            let cm_mean = cm_sum / nv;
            let cs_mean = cs_sum / nv;
            // Invalid chips take the panel mean; the count survives as its
            // own feature.
            let mut cm_ss = S::zero();
            for j in 0..chips {
                if r.invalid[j] {
                    cm[j] = cm_mean;
                    cs[j] = cs_mean;
                } else {
                    let d = cm[j] - cm_mean;
                    cm_ss += d * d;
                }
            }
            let cm_var = cm_ss / nv;

            let mut row = features.row_mut(i);
            for j in 0..chips {
                row[j] = cm[j];
                row[chips + j] = cs[j];
            }
            row[2 * chips] = cm_mean;
            row[2 * chips + 1] = cs_mean;
            row[2 * chips + 2] = cm_var;
            row[2 * chips + 3] = S::of_usize(r.invalid_count());
            row[2 * chips + 4] = r.workload;
        }

        Ok(Self {
            records,
            chips,
            pca,
            feature_names: names,
            features,
        })
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn chips(&self) -> usize {
        self.chips
    }

    pub fn records(&self) -> &[LotRecord<S>] {
        &self.records
    }

    pub fn pca(&self) -> &PcaTransform<S> {
        &self.pca
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn features(&self) -> &Array2<S> {
        &self.features
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.feature_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::MissingFeature { name: name.into() })
    }

    /// One feature column, or the pseudo-columns `treatment` / `yield`.
    pub fn column(&self, name: &str) -> Result<Vec<S>> {
        match name {
            "treatment" => Ok(self
                .records
                .iter()
                .map(|r| if r.treated { S::one() } else { S::zero() })
                .collect()),
            "yield" => Ok(self.records.iter().map(|r| r.yield_frac).collect()),
            _ => {
                let idx = self.feature_index(name)?;
                Ok(self.features.column(idx).to_vec())
            }
        }
    }

    pub fn treatments(&self) -> Vec<bool> {
        self.records.iter().map(LotRecord::treated).collect()
    }

    pub fn yields(&self) -> Array1<S> {
        self.records.iter().map(|r| r.yield_frac).collect()
    }

    /// Adjustment set for nuisance learning: every per-chip coordinate plus
    /// the invalid count and workload. Lot-level means and variance are
    /// linear summaries of these and serve conditioning, not adjustment.
    pub fn nuisance_column_indices(&self) -> Vec<usize> {
        let k = self.chips;
        let mut cols: Vec<usize> = (0..2 * k).collect();
        cols.push(2 * k + 3);
        cols.push(2 * k + 4);
        cols
    }

    /// Default conditioning set for policy trees.
    pub fn default_policy_columns() -> [&'static str; 4] {
        ["cm_mean", "cs_mean", "invalid", "cm_var"]
    }

    /// Copies the named columns into a dense matrix.
    pub fn submatrix(&self, cols: &[usize]) -> Array2<S> {
        let mut out = Array2::zeros((self.n(), cols.len()));
        for (c, &idx) in cols.iter().enumerate() {
            out.column_mut(c).assign(&self.features.column(idx));
        }
        out
    }

    /// Row subset preserving the fitted rotation.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let records = rows.iter().map(|&i| self.records[i].clone()).collect();
        let mut features = Array2::zeros((rows.len(), self.features.ncols()));
        for (new_i, &old_i) in rows.iter().enumerate() {
            features.row_mut(new_i).assign(&self.features.row(old_i));
        }
        Self {
            records,
            chips: self.chips,
            pca: self.pca.clone(),
            feature_names: self.feature_names.clone(),
            features,
        }
    }
}

/// Result of trimming to the estimable overlap region.
#[derive(Debug, Clone)]
pub struct SubsampleOutcome<S: Scalar> {
    pub dataset: Dataset<S>,
    /// Row indices retained, relative to the input dataset.
    pub kept: Vec<usize>,
    /// Closed interval of `cm_mean` retained.
    pub interval: (S, S),
    pub dropped: usize,
}

/// Trims rows whose mean conversion coordinate falls outside the region where
/// both decisions actually occur: below the treated group's lower quantile
/// (lots essentially never reworked) or above the control group's upper
/// quantile (lots essentially always reworked).
pub fn subsample_overlap<S: Scalar>(
    d: &Dataset<S>,
    q_treated_low: f64,
    q_control_high: f64,
) -> Result<SubsampleOutcome<S>> {
    for (name, q) in [("treated", q_treated_low), ("control", q_control_high)] {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::Parameter(format!(
                "{name} quantile must lie in [0, 1], got {q}"
            )));
        }
    }
    let cm = d.column("cm_mean")?;
    let mut treated: Vec<S> = Vec::new();
    let mut control: Vec<S> = Vec::new();
    for (r, &v) in d.records().iter().zip(&cm) {
        if r.treated() {
            treated.push(v);
        } else {
            control.push(v);
        }
    }
    if treated.is_empty() || control.is_empty() {
        return Err(Error::Validation(
            "overlap trimming needs both treated and control rows".into(),
        ));
    }
    let sort = |v: &mut Vec<S>| v.sort_by(|a, b| a.partial_cmp(b).expect("finite cm_mean"));
    sort(&mut treated);
    sort(&mut control);
    let lo = quantile_sorted(&treated, q_treated_low);
    let hi = quantile_sorted(&control, q_control_high);
    if lo > hi {
        return Err(Error::OverlapFailure {
            lo: lo.as_f64(),
            hi: hi.as_f64(),
        });
    }

    let kept: Vec<usize> = (0..d.n()).filter(|&i| cm[i] >= lo && cm[i] <= hi).collect();
    let dataset = d.select_rows(&kept);
    let any_treated = dataset.records().iter().any(|r| r.treated());
    let any_control = dataset.records().iter().any(|r| !r.treated());
    if !(any_treated && any_control) {
        return Err(Error::OverlapFailure {
            lo: lo.as_f64(),
            hi: hi.as_f64(),
        });
    }
    Ok(SubsampleOutcome {
        dropped: d.n() - kept.len(),
        kept,
        interval: (lo, hi),
        dataset,
    })
}

/// Deterministic train/evaluation partition.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SplitPlan {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
    pub train_fraction: f64,
    pub seed: u64,
}

/// Shuffles row indices with a seed-derived stream and takes the first
/// `round(frac * n)` as the training side. Both sides are returned sorted.
pub fn train_eval_split<S: Scalar>(d: &Dataset<S>, frac: f64, seed: u64) -> Result<SplitPlan> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::Parameter(format!(
            "split fraction must lie strictly between 0 and 1, got {frac}"
        )));
    }
    if d.n() < 10 {
        return Err(Error::Validation(format!(
            "need at least 10 rows to split, got {}",
            d.n()
        )));
    }
    let mut idx: Vec<usize> = (0..d.n()).collect();
    let mut rng = rng_for(seed, "train-eval-split", 0);
    idx.shuffle(&mut rng);
    let n_train = ((frac * d.n() as f64).round() as usize).clamp(1, d.n() - 1);
    let mut train: Vec<usize> = idx[..n_train].to_vec();
    let mut eval: Vec<usize> = idx[n_train..].to_vec();
    train.sort_unstable();
    eval.sort_unstable();
    Ok(SplitPlan {
        train,
        eval,
        train_fraction: frac,
        seed,
    })
}

/// Header schema for lot CSV files. Chip columns are `cx_00..`, `cy_00..`,
/// and optionally `valid_00..` (1 = valid); invalid chips may instead be
/// encoded as non-finite sentinel values in the coordinate columns.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CsvSchema {
    pub chips: usize,
    pub cx_prefix: String,
    pub cy_prefix: String,
    pub valid_prefix: String,
    pub workload: String,
    pub treatment: String,
    pub yield_col: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            chips: 36,
            cx_prefix: "cx_".into(),
            cy_prefix: "cy_".into(),
            valid_prefix: "valid_".into(),
            workload: "workload".into(),
            treatment: "treatment".into(),
            yield_col: "yield".into(),
        }
    }
}

fn header_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Schema {
            column: name.to_string(),
        })
}

fn parse_cell<S: Scalar>(record: &csv::StringRecord, idx: usize, row: usize, col: &str) -> Result<S> {
    let raw = record.get(idx).unwrap_or("");
    match raw.trim().parse::<f64>() {
        Ok(v) => Ok(S::of_f64(v)),
        Err(_) => Err(Error::Parse {
            row,
            column: col.to_string(),
            detail: format!("`{raw}` is not numeric"),
        }),
    }
}

/// Loads lot records and derives the dataset (rotation fitted on the file's
/// own mean color points).
pub fn load_csv<S: Scalar>(path: &std::path::Path, schema: &CsvSchema) -> Result<Dataset<S>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();

    let k = schema.chips;
    let mut cx_idx = Vec::with_capacity(k);
    let mut cy_idx = Vec::with_capacity(k);
    for j in 0..k {
        cx_idx.push(header_index(&headers, &format!("{}{j:02}", schema.cx_prefix))?);
        cy_idx.push(header_index(&headers, &format!("{}{j:02}", schema.cy_prefix))?);
    }
    // Validity columns are optional as a group: sentinel encoding is enough.
    let first_valid = format!("{}00", schema.valid_prefix);
    let valid_idx: Option<Vec<usize>> = if headers.iter().any(|h| h == first_valid) {
        let mut v = Vec::with_capacity(k);
        for j in 0..k {
            v.push(header_index(&headers, &format!("{}{j:02}", schema.valid_prefix))?);
        }
        Some(v)
    } else {
        None
    };
    let workload_idx = header_index(&headers, &schema.workload)?;
    let treatment_idx = header_index(&headers, &schema.treatment)?;
    let yield_idx = header_index(&headers, &schema.yield_col)?;

    let mut records = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let mut cx = Vec::with_capacity(k);
        let mut cy = Vec::with_capacity(k);
        let mut invalid = vec![false; k];
        for j in 0..k {
            cx.push(parse_cell::<S>(&rec, cx_idx[j], row, &format!("{}{j:02}", schema.cx_prefix))?);
            cy.push(parse_cell::<S>(&rec, cy_idx[j], row, &format!("{}{j:02}", schema.cy_prefix))?);
        }
        if let Some(vi) = &valid_idx {
            for j in 0..k {
                let col = format!("{}{j:02}", schema.valid_prefix);
                let v: S = parse_cell(&rec, vi[j], row, &col)?;
                if v == S::zero() {
                    invalid[j] = true;
                } else if v != S::one() {
                    return Err(Error::Parse {
                        row,
                        column: col,
                        detail: format!("validity flag must be 0 or 1, got {v}"),
                    });
                }
            }
        }
        let workload: S = parse_cell(&rec, workload_idx, row, &schema.workload)?;
        let treatment: S = parse_cell(&rec, treatment_idx, row, &schema.treatment)?;
        if treatment != S::zero() && treatment != S::one() {
            return Err(Error::Validation(format!(
                "row {row}: treatment must be 0 or 1, got {treatment}"
            )));
        }
        let yield_frac: S = parse_cell(&rec, yield_idx, row, &schema.yield_col)?;
        if !(yield_frac >= S::zero() && yield_frac <= S::one()) {
            return Err(Error::Validation(format!(
                "row {row}: yield must lie in [0, 1], got {yield_frac}"
            )));
        }
        if !workload.is_finite() {
            return Err(Error::Validation(format!(
                "row {row}: workload must be finite"
            )));
        }

        let record = LotRecord::new(cx, cy, invalid, workload, treatment == S::one(), yield_frac)
            .map_err(|e| match e {
                Error::DegenerateRecord { .. } => Error::DegenerateRecord { row },
                other => other,
            })?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::Validation(format!(
            "{} contains no data rows",
            path.display()
        )));
    }
    Dataset::from_records(records)
}

/// Writes records in the canonical schema, with explicit validity columns;
/// invalid chips keep whatever coordinates the record stores (the simulator
/// stores NaN sentinels).
pub fn write_csv<S: Scalar>(d: &Dataset<S>, path: &std::path::Path) -> Result<()> {
    let schema = CsvSchema {
        chips: d.chips(),
        ..CsvSchema::default()
    };
    let mut writer = csv::Writer::from_path(path)?;
    let k = d.chips();
    let mut header = Vec::with_capacity(3 * k + 3);
    for j in 0..k {
        header.push(format!("{}{j:02}", schema.cx_prefix));
    }
    for j in 0..k {
        header.push(format!("{}{j:02}", schema.cy_prefix));
    }
    for j in 0..k {
        header.push(format!("{}{j:02}", schema.valid_prefix));
    }
    header.push(schema.workload.clone());
    header.push(schema.treatment.clone());
    header.push(schema.yield_col.clone());
    writer.write_record(&header)?;

    for r in d.records() {
        let mut row = Vec::with_capacity(3 * k + 3);
        for j in 0..k {
            row.push(r.cx()[j].to_string());
        }
        for j in 0..k {
            row.push(r.cy()[j].to_string());
        }
        for j in 0..k {
            row.push(if r.invalid_flags()[j] { "0" } else { "1" }.to_string());
        }
        row.push(r.workload().to_string());
        row.push(if r.treated() { "1" } else { "0" }.to_string());
        row.push(r.yield_frac().to_string());
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}
