//! Overlap and balance diagnostics for the adjustment columns.
//!
//! Balance is scored per covariate and treatment group as the distance
//! between an inverse-propensity weighted group mean and the overall mean,
//! divided by the covariate's variance. The variance (not the standard
//! deviation) in the denominator is deliberate and makes the score scale
//! like 1/s under rescaling by s; thresholds assume the conventions here.

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data_model::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stats::sample_var;

/// Balance scores below this pass.
pub const BALANCE_THRESHOLD: f64 = 0.2;

/// How control-group weights are formed.
///
/// The literal form divides both groups' indicators by the propensity; the
/// complement form divides controls by one minus it, the usual
/// inverse-probability convention. Both are normalized by their weight sum
/// before use, which is what makes the scores shift-invariant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlWeighting {
    #[default]
    Literal,
    Complement,
}

/// Balance scores of one covariate for both treatment groups; a score is
/// absent when the covariate variance is zero or its group is empty.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalanceRow<S: Scalar> {
    pub covariate: String,
    pub treated_psb: Option<S>,
    pub control_psb: Option<S>,
    pub treated_pass: Option<bool>,
    pub control_pass: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalanceReport<S: Scalar> {
    pub threshold: f64,
    pub weighting: ControlWeighting,
    pub rows: Vec<BalanceRow<S>>,
    /// True when every applicable score passes.
    pub all_pass: bool,
}

/// Propensity-weighted balance scores over explicit columns.
///
/// For group `a`, the weighted mean uses weights `1(A_i = a) / m_hat_i`
/// (literal) or `1(A_i = 0) / (1 - m_hat_i)` for controls (complement),
/// normalized by the weight sum. The score is
/// `|weighted mean - overall mean| / variance`.
pub fn psb_on<S: Scalar>(
    x: ArrayView2<S>,
    names: &[&str],
    a: &[bool],
    m_hat: ArrayView1<S>,
    weighting: ControlWeighting,
) -> Result<BalanceReport<S>> {
    let n = x.nrows();
    if names.len() != x.ncols() {
        return Err(Error::Shape(format!(
            "{} names for {} columns",
            names.len(),
            x.ncols()
        )));
    }
    if a.len() != n || m_hat.len() != n {
        return Err(Error::Shape(format!(
            "{n} rows but {} treatments and {} propensities",
            a.len(),
            m_hat.len()
        )));
    }
    if n == 0 {
        return Err(Error::Validation("no rows to balance".into()));
    }
    for (i, &m) in m_hat.iter().enumerate() {
        if !(m > S::zero() && m < S::one()) {
            return Err(Error::Validation(format!(
                "propensities must lie strictly in (0, 1), row {i} holds {}",
                m.as_f64()
            )));
        }
    }

    let threshold = S::of_f64(BALANCE_THRESHOLD);
    let mut rows = Vec::with_capacity(names.len());
    let mut all_pass = true;
    for (j, &name) in names.iter().enumerate() {
        let col = x.column(j);
        let values: Vec<S> = col.to_vec();
        let variance = sample_var(&values);
        if variance == S::zero() {
            rows.push(BalanceRow {
                covariate: name.to_string(),
                treated_psb: None,
                control_psb: None,
                treated_pass: None,
                control_pass: None,
            });
            continue;
        }
        let overall = crate::stats::mean(&values);
        let score = |group: bool| -> Option<S> {
            let mut wsum = S::zero();
            let mut wx = S::zero();
            for i in 0..n {
                if a[i] != group {
                    continue;
                }
                let w = match (group, weighting) {
                    (false, ControlWeighting::Complement) => S::one() / (S::one() - m_hat[i]),
                    _ => S::one() / m_hat[i],
                };
                wsum += w;
                wx += w * col[i];
            }
            if wsum == S::zero() {
                return None;
            }
            Some(((wx / wsum) - overall).abs() / variance)
        };
        let treated_psb = score(true);
        let control_psb = score(false);
        let pass = |p: &Option<S>| p.map(|v| v < threshold);
        let treated_pass = pass(&treated_psb);
        let control_pass = pass(&control_psb);
        if treated_pass == Some(false) || control_pass == Some(false) {
            all_pass = false;
        }
        rows.push(BalanceRow {
            covariate: name.to_string(),
            treated_psb,
            control_psb,
            treated_pass,
            control_pass,
        });
    }
    Ok(BalanceReport {
        threshold: BALANCE_THRESHOLD,
        weighting,
        rows,
        all_pass,
    })
}

/// Balance scores over every derived feature column of a dataset.
pub fn psb<S: Scalar>(
    d: &Dataset<S>,
    m_hat: ArrayView1<S>,
    weighting: ControlWeighting,
) -> Result<BalanceReport<S>> {
    let names: Vec<&str> = d.feature_names().iter().map(String::as_str).collect();
    psb_on(
        d.features().view(),
        &names,
        &d.treatments(),
        m_hat,
        weighting,
    )
}

/// Per-group histogram of one covariate on shared bin edges.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverlapHistogram<S: Scalar> {
    pub covariate: String,
    /// `bins + 1` ascending edges spanning the pooled range; the last bin
    /// is closed on the right.
    pub edges: Vec<S>,
    pub treated: Vec<usize>,
    pub control: Vec<usize>,
}

/// Histogram for treated and control values of one covariate over shared
/// pooled-range edges. An empty group yields all-zero counts.
pub fn overlap_histogram_on<S: Scalar>(
    name: &str,
    values: &[S],
    a: &[bool],
    bins: usize,
) -> Result<OverlapHistogram<S>> {
    if bins < 2 {
        return Err(Error::Parameter(format!(
            "histograms need at least 2 bins, got {bins}"
        )));
    }
    if values.len() != a.len() {
        return Err(Error::Shape(format!(
            "{} values but {} treatments",
            values.len(),
            a.len()
        )));
    }
    if values.is_empty() {
        return Err(Error::Validation("no values to bin".into()));
    }
    let mut lo = values[0];
    let mut hi = values[0];
    for &v in values {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: format!("binning covariate `{name}`"),
            });
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    // A constant covariate still gets a unit-wide axis so the edges stay
    // strictly ascending; every value lands in the first bin.
    if hi == lo {
        hi = lo + S::one();
    }
    let nb = S::of_usize(bins);
    let width = (hi - lo) / nb;
    let mut edges = Vec::with_capacity(bins + 1);
    for e in 0..=bins {
        edges.push(lo + width * S::of_usize(e));
    }
    edges[bins] = hi;

    let mut treated = vec![0usize; bins];
    let mut control = vec![0usize; bins];
    for (i, &v) in values.iter().enumerate() {
        let scaled = ((v - lo) / (hi - lo)) * nb;
        let mut idx = scaled.as_f64().floor() as usize;
        if idx >= bins {
            idx = bins - 1;
        }
        if a[i] {
            treated[idx] += 1;
        } else {
            control[idx] += 1;
        }
    }
    Ok(OverlapHistogram {
        covariate: name.to_string(),
        edges,
        treated,
        control,
    })
}

/// Dataset wrapper; `covariate` may be any feature column or the
/// pseudo-columns `treatment` / `yield`.
pub fn overlap_histogram<S: Scalar>(
    d: &Dataset<S>,
    covariate: &str,
    bins: usize,
) -> Result<OverlapHistogram<S>> {
    let values = d.column(covariate)?;
    overlap_histogram_on(covariate, &values, &d.treatments(), bins)
}
