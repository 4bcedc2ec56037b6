//! Estimation library for cost-optimal rework policies on lot-based
//! production data.
//!
//! The crate covers the full chain from raw lot measurements to deployable
//! decision rules: feature derivation ([`data_model`]), nuisance learners
//! ([`learners`]), debiased treatment-effect scores ([`dml`]), spline
//! projections of effect heterogeneity ([`cate`]), policy learning and
//! evaluation ([`policy`]), omitted-confounder sensitivity ([`sensitivity`]),
//! balance diagnostics ([`diagnostics`]), and a synthetic production line
//! with counterfactual ground truth ([`simulator`]).
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix `f64`, which all documented tolerances
//! assume.

pub mod cate;
pub mod data_model;
pub mod diagnostics;
pub mod dml;
pub mod error;
pub mod learners;
pub mod linalg;
pub mod policy;
pub mod rng;
pub mod scalar;
pub mod sensitivity;
pub mod simulator;
pub mod stats;

pub use error::{Error, ErrorKind, Result};
pub use scalar::Scalar;

pub type LotRecord = data_model::LotRecord<f64>;
pub type Dataset = data_model::Dataset<f64>;
pub type PcaTransform = data_model::PcaTransform<f64>;
pub type SubsampleOutcome = data_model::SubsampleOutcome<f64>;
pub type FittedModel = learners::FittedModel<f64>;
pub type NuisanceEstimates = dml::NuisanceEstimates<f64>;
pub type ScoreSet = dml::ScoreSet<f64>;
pub type EffectEstimate = dml::EffectEstimate<f64>;
pub type CateBasis = cate::CateBasis<f64>;
pub type CateFit = cate::CateFit<f64>;
pub type ConfidenceBand = cate::ConfidenceBand<f64>;
pub type Policy = policy::Policy<f64>;
pub type PolicyTree = policy::PolicyTree<f64>;
pub type PolicyEvalReport = policy::PolicyEvalReport<f64>;
pub type SensitivityReport = sensitivity::SensitivityReport<f64>;
pub type BalanceReport = diagnostics::BalanceReport<f64>;
pub type OracleTable = simulator::OracleTable<f64>;
