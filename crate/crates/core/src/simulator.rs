//! Synthetic production line with counterfactual ground truth.
//!
//! Each lot drifts along an AR(1) conversion deficit, its chips scatter
//! around the drifted position, an operator with a soft logistic rule
//! decides whether to rework, and downstream yield counts the valid chips
//! that land inside the target window. Both potential yields are computed
//! from the same downstream noise draws, so the observed yield equals the
//! counterfactual selected by the realized decision, bit for bit.
//!
//! Ground truth (potential yields, propensity, latent drift) is kept in a
//! separate [`OracleTable`] that must never reach an estimator; it exists
//! to score estimators and policies after the fact.

use ndarray::Array1;
use rand::Rng;
use rand_distr::{Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{Dataset, LotRecord};
use crate::error::{Error, Result};
use crate::policy::{dataset_decision_frame, Policy};
use crate::rng::rng_for;
use crate::scalar::Scalar;

/// Lower overlap edge every generated propensity must respect.
pub const PROPENSITY_FLOOR: f64 = 0.02;
/// Generated propensities are `floor + span * sigmoid(index)`, keeping them
/// inside `[PROPENSITY_FLOOR, 1 - PROPENSITY_FLOOR]` by construction.
const PROPENSITY_SPAN: f64 = 1.0 - 2.0 * PROPENSITY_FLOOR;

/// Attempts to redraw a fully invalid panel before giving up.
const MAX_PANEL_REDRAWS: usize = 1000;

/// Generator configuration. All tolerances are in conversion-axis units.
/// Deserialization fills omitted fields from `Default`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_lots: usize,
    pub chips_per_panel: usize,
    /// Center of the acceptance window on the conversion axis.
    pub window_center: f64,
    /// Half width of the acceptance window; may be infinite.
    pub window_half_width: f64,
    /// AR(1) coefficient of the latent drift, strictly inside (-1, 1).
    pub drift_ar1: f64,
    pub drift_innovation_sd: f64,
    /// Conversion deficit per unit drift: `deficit = scale * exp(rate * d)`.
    pub deficit_scale: f64,
    pub deficit_rate: f64,
    pub chip_noise_sd: f64,
    /// Mean conversion gain from rework and its lot-to-lot spread.
    pub rework_shift: f64,
    pub rework_shift_sd: f64,
    pub downstream_noise_sd: f64,
    pub invalid_rate: f64,
    /// Poisson mean of the operator's queue length.
    pub workload_mean: f64,
    pub operator_intercept: f64,
    pub operator_color_coef: f64,
    pub operator_workload_coef: f64,
    pub operator_noise_sd: f64,
    /// Angle between the conversion axis and the raw color-x axis, degrees.
    pub conversion_axis_deg: f64,
    pub color_center: (f64, f64),
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_lots: 2000,
            chips_per_panel: 36,
            window_center: 0.0,
            window_half_width: 0.012,
            drift_ar1: 0.9,
            drift_innovation_sd: (1.0f64 - 0.9 * 0.9).sqrt(),
            deficit_scale: 0.005,
            deficit_rate: 0.8,
            chip_noise_sd: 0.004,
            rework_shift: 0.008,
            rework_shift_sd: 0.003,
            downstream_noise_sd: 0.002,
            invalid_rate: 0.05,
            workload_mean: 20.0,
            operator_intercept: -3.23,
            operator_color_coef: -220.0,
            operator_workload_coef: 0.02,
            operator_noise_sd: 0.35,
            conversion_axis_deg: 32.0,
            color_center: (0.31, 0.32),
            seed: 7,
        }
    }
}

/// A second product line sharing the physics but not the recipe: tighter
/// window, a differently calibrated operator, and its own color geometry.
pub fn second_product_config() -> SimConfig {
    SimConfig {
        window_half_width: 0.011,
        operator_intercept: -3.0,
        operator_color_coef: -240.0,
        conversion_axis_deg: 24.0,
        color_center: (0.29, 0.30),
        ..SimConfig::default()
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(msg));
        if self.n_lots < 2 {
            return bad(format!("need at least 2 lots, got {}", self.n_lots));
        }
        if self.chips_per_panel == 0 {
            return bad("panels need at least one chip".into());
        }
        if !(self.drift_ar1.abs() < 1.0) {
            return bad(format!(
                "drift coefficient must lie strictly in (-1, 1), got {}",
                self.drift_ar1
            ));
        }
        for (name, sd) in [
            ("drift_innovation_sd", self.drift_innovation_sd),
            ("chip_noise_sd", self.chip_noise_sd),
            ("rework_shift_sd", self.rework_shift_sd),
            ("downstream_noise_sd", self.downstream_noise_sd),
            ("operator_noise_sd", self.operator_noise_sd),
        ] {
            if !(sd >= 0.0 && sd.is_finite()) {
                return bad(format!("{name} must be a finite nonnegative sd, got {sd}"));
            }
        }
        if !(self.invalid_rate >= 0.0 && self.invalid_rate <= 0.5) {
            return bad(format!(
                "invalid_rate must lie in [0, 0.5], got {}",
                self.invalid_rate
            ));
        }
        if !(self.window_half_width > 0.0) {
            return bad(format!(
                "window half width must be positive, got {}",
                self.window_half_width
            ));
        }
        if !self.window_center.is_finite() {
            return bad(format!("window center must be finite, got {}", self.window_center));
        }
        if !(self.deficit_scale >= 0.0 && self.deficit_scale.is_finite()) {
            return bad(format!(
                "deficit_scale must be finite and nonnegative, got {}",
                self.deficit_scale
            ));
        }
        if !(self.workload_mean > 0.0 && self.workload_mean.is_finite()) {
            return bad(format!(
                "workload_mean must be a positive rate, got {}",
                self.workload_mean
            ));
        }
        for (name, v) in [
            ("deficit_rate", self.deficit_rate),
            ("rework_shift", self.rework_shift),
            ("operator_intercept", self.operator_intercept),
            ("operator_color_coef", self.operator_color_coef),
            ("operator_workload_coef", self.operator_workload_coef),
            ("conversion_axis_deg", self.conversion_axis_deg),
            ("color_center x", self.color_center.0),
            ("color_center y", self.color_center.1),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite, got {v}"));
            }
        }
        Ok(())
    }
}

/// One generated lot: the observable record plus its hidden ground truth.
#[derive(Debug, Clone)]
pub struct SimulatedLot<S: Scalar> {
    pub record: LotRecord<S>,
    pub y0: S,
    pub y1: S,
    pub propensity: S,
    pub drift: S,
}

/// Ground-truth table, row-aligned with the generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTable<S: Scalar> {
    pub y0: Array1<S>,
    pub y1: Array1<S>,
    pub propensity: Array1<S>,
    pub drift: Array1<S>,
}

impl<S: Scalar> OracleTable<S> {
    pub fn n(&self) -> usize {
        self.y0.len()
    }

    /// Per-lot treatment effect `y1 - y0`.
    pub fn delta(&self) -> Array1<S> {
        &self.y1 - &self.y0
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Draws one lot from its dedicated stream. The draw order inside the
/// stream is part of the format: chip block (position x, position s,
/// invalid flag per chip, redrawn wholesale while the panel is fully
/// invalid), rework shift, downstream noise per chip, workload, operator
/// noise, treatment uniform.
fn generate_lot(cfg: &SimConfig, t: usize, drift: f64) -> Result<SimulatedLot<f64>> {
    let mut rng = rng_for(cfg.seed, "lot", t as u64);
    let k = cfg.chips_per_panel;
    let deficit = cfg.deficit_scale * (cfg.deficit_rate * drift).exp();
    let lot_position = cfg.window_center - deficit;

    let mut cm = vec![0.0f64; k];
    let mut cs = vec![0.0f64; k];
    let mut invalid = vec![false; k];
    let mut attempts = 0usize;
    loop {
        for j in 0..k {
            let nx: f64 = rng.sample(StandardNormal);
            let ns: f64 = rng.sample(StandardNormal);
            cm[j] = lot_position + cfg.chip_noise_sd * nx;
            cs[j] = cfg.chip_noise_sd * ns;
            invalid[j] = rng.gen_bool(cfg.invalid_rate);
        }
        if invalid.iter().any(|&b| !b) {
            break;
        }
        attempts += 1;
        if attempts >= MAX_PANEL_REDRAWS {
            return Err(Error::Generation(format!(
                "lot {t} drew {MAX_PANEL_REDRAWS} fully invalid panels"
            )));
        }
    }

    let shift_noise: f64 = rng.sample(StandardNormal);
    let shift = cfg.rework_shift + cfg.rework_shift_sd * shift_noise;
    let downstream: Vec<f64> = (0..k)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * cfg.downstream_noise_sd)
        .collect();
    let workload = rng.sample(Poisson::new(cfg.workload_mean).map_err(|e| {
        Error::Parameter(format!("workload rate {}: {e}", cfg.workload_mean))
    })?);
    let op_noise: f64 = rng.sample(StandardNormal);
    let treat_u: f64 = rng.gen();

    // The operator inspects valid chips before any rework.
    let mut cm_bar = 0.0;
    let mut n_valid = 0usize;
    for j in 0..k {
        if !invalid[j] {
            cm_bar += cm[j];
            n_valid += 1;
        }
    }
    cm_bar /= n_valid as f64;

    let index = cfg.operator_intercept
        + cfg.operator_color_coef * cm_bar
        + cfg.operator_workload_coef * workload
        + cfg.operator_noise_sd * op_noise;
    let propensity = PROPENSITY_FLOOR + PROPENSITY_SPAN * sigmoid(index);
    let treated = treat_u < propensity;

    // Both counterfactual yields reuse the same downstream draws, so the
    // only difference is the rework shift applied to every chip.
    let mut pass0 = 0usize;
    let mut pass1 = 0usize;
    for j in 0..k {
        if invalid[j] {
            continue;
        }
        let base = cm[j] + downstream[j];
        if (base - cfg.window_center).abs() <= cfg.window_half_width {
            pass0 += 1;
        }
        if (base + shift - cfg.window_center).abs() <= cfg.window_half_width {
            pass1 += 1;
        }
    }
    let y0 = pass0 as f64 / n_valid as f64;
    let y1 = pass1 as f64 / n_valid as f64;
    let observed = if treated { y1 } else { y0 };

    let theta = cfg.conversion_axis_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let mut cx = Vec::with_capacity(k);
    let mut cy = Vec::with_capacity(k);
    for j in 0..k {
        cx.push(cfg.color_center.0 + cos * cm[j] - sin * cs[j]);
        cy.push(cfg.color_center.1 + sin * cm[j] + cos * cs[j]);
    }

    let record = LotRecord::new(cx, cy, invalid, workload, treated, observed)?;
    Ok(SimulatedLot {
        record,
        y0,
        y1,
        propensity,
        drift,
    })
}

/// Generates a dataset together with its ground-truth table.
///
/// The latent drift path is drawn first from its own stream (index 0 seeds
/// the stationary start), then lots are generated independently from
/// per-lot streams, so the output is identical however the lot loop is
/// scheduled.
pub fn simulate<S: Scalar>(cfg: &SimConfig) -> Result<(Dataset<S>, OracleTable<S>)> {
    cfg.validate()?;
    let n = cfg.n_lots;

    let mut drift = Vec::with_capacity(n);
    let stationary_sd = cfg.drift_innovation_sd / (1.0 - cfg.drift_ar1 * cfg.drift_ar1).sqrt();
    let init: f64 = rng_for(cfg.seed, "drift", 0).sample(StandardNormal);
    drift.push(init * stationary_sd);
    for t in 1..n {
        let eta: f64 = rng_for(cfg.seed, "drift", t as u64).sample(StandardNormal);
        drift.push(cfg.drift_ar1 * drift[t - 1] + cfg.drift_innovation_sd * eta);
    }

    let lots: Vec<SimulatedLot<f64>> = (0..n)
        .into_par_iter()
        .map(|t| generate_lot(cfg, t, drift[t]))
        .collect::<Result<_>>()?;

    for lot in &lots {
        if lot.propensity < PROPENSITY_FLOOR || lot.propensity > 1.0 - PROPENSITY_FLOOR {
            return Err(Error::Generation(format!(
                "generated propensity {} escapes [{PROPENSITY_FLOOR}, {}]",
                lot.propensity,
                1.0 - PROPENSITY_FLOOR
            )));
        }
    }

    let mut records = Vec::with_capacity(n);
    let mut y0 = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);
    let mut propensity = Vec::with_capacity(n);
    let mut drift_col = Vec::with_capacity(n);
    for lot in lots {
        y0.push(S::of_f64(lot.y0));
        y1.push(S::of_f64(lot.y1));
        propensity.push(S::of_f64(lot.propensity));
        drift_col.push(S::of_f64(lot.drift));
        let r = lot.record;
        records.push(LotRecord::new(
            r.cx().iter().map(|&v| S::of_f64(v)).collect(),
            r.cy().iter().map(|&v| S::of_f64(v)).collect(),
            r.invalid_flags().to_vec(),
            S::of_f64(r.workload().as_f64()),
            r.treated(),
            S::of_f64(r.yield_frac().as_f64()),
        )?);
    }
    let dataset = Dataset::from_records(records)?;
    let oracle = OracleTable {
        y0: Array1::from(y0),
        y1: Array1::from(y1),
        propensity: Array1::from(propensity),
        drift: Array1::from(drift_col),
    };
    Ok((dataset, oracle))
}

/// Mean treatment effect over all lots.
pub fn oracle_ate<S: Scalar>(t: &OracleTable<S>) -> S {
    let delta = t.delta();
    let mut acc = S::zero();
    for &d in delta.iter() {
        acc += d;
    }
    acc / S::of_usize(t.n())
}

/// Mean treatment effect over the treated lots.
pub fn oracle_att<S: Scalar>(t: &OracleTable<S>, a: &[bool]) -> Result<S> {
    if a.len() != t.n() {
        return Err(Error::OracleMismatch {
            oracle: t.n(),
            data: a.len(),
        });
    }
    let mut acc = S::zero();
    let mut count = 0usize;
    for (i, &treated) in a.iter().enumerate() {
        if treated {
            acc += t.y1[i] - t.y0[i];
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Validation("no treated lots to average".into()));
    }
    Ok(acc / S::of_usize(count))
}

/// Mean effect within one conditioning bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCateBin<S: Scalar> {
    pub lo: S,
    pub hi: S,
    pub mean_delta: S,
    pub count: usize,
}

/// Bins the per-lot effects by a conditioning variable over `bins`
/// equal-width intervals spanning its range; empty bins are omitted.
pub fn oracle_cate<S: Scalar>(
    t: &OracleTable<S>,
    z: &[S],
    bins: usize,
) -> Result<Vec<OracleCateBin<S>>> {
    if z.len() != t.n() {
        return Err(Error::OracleMismatch {
            oracle: t.n(),
            data: z.len(),
        });
    }
    if bins == 0 {
        return Err(Error::Parameter("need at least one bin".into()));
    }
    let mut lo = z[0];
    let mut hi = z[0];
    for &v in z {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: "conditioning variable for ground-truth effects".into(),
            });
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi == lo {
        hi = lo + S::one();
    }
    let nb = S::of_usize(bins);
    let mut sums = vec![S::zero(); bins];
    let mut counts = vec![0usize; bins];
    for (i, &v) in z.iter().enumerate() {
        let scaled = ((v - lo) / (hi - lo)) * nb;
        let mut idx = scaled.as_f64().floor() as usize;
        if idx >= bins {
            idx = bins - 1;
        }
        sums[idx] += t.y1[i] - t.y0[i];
        counts[idx] += 1;
    }
    let width = (hi - lo) / nb;
    let mut out = Vec::new();
    for b in 0..bins {
        if counts[b] == 0 {
            continue;
        }
        out.push(OracleCateBin {
            lo: lo + width * S::of_usize(b),
            hi: if b + 1 == bins { hi } else { lo + width * S::of_usize(b + 1) },
            mean_delta: sums[b] / S::of_usize(counts[b]),
            count: counts[b],
        });
    }
    Ok(out)
}

/// Ground-truth value of a decision vector at a per-lot rework cost:
/// the mean of `pi * (y1 - y0 - cost)` against a never-rework baseline.
pub fn oracle_policy_value<S: Scalar>(t: &OracleTable<S>, pi: &[bool], cost: S) -> Result<S> {
    if pi.len() != t.n() {
        return Err(Error::OracleMismatch {
            oracle: t.n(),
            data: pi.len(),
        });
    }
    let mut acc = S::zero();
    for (i, &go) in pi.iter().enumerate() {
        if go {
            acc += t.y1[i] - t.y0[i] - cost;
        }
    }
    Ok(acc / S::of_usize(t.n()))
}

/// Applies a policy to the dataset's decision frame and scores it against
/// the ground truth.
pub fn oracle_policy_value_for<S: Scalar>(
    t: &OracleTable<S>,
    policy: &Policy<S>,
    d: &Dataset<S>,
    cost: S,
) -> Result<S> {
    let (frame, columns) = dataset_decision_frame(d);
    let names: Vec<&str> = columns.iter().map(String::as_str).collect();
    let pi = policy.decide_batch(frame.view(), &names)?;
    oracle_policy_value(t, &pi, cost)
}
