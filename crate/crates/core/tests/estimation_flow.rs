//! End-to-end flow on simulated data: generate, trim, split, cross-fit,
//! estimate, project effects, learn and evaluate policies, and check the
//! answers against the generator's ground truth.

use std::sync::OnceLock;

use ndarray::Array2;

use reworkd_core::cate::{build_spline_basis, multiplier_bootstrap_band, project_scores};
use reworkd_core::data_model::{subsample_overlap, train_eval_split, Dataset};
use reworkd_core::diagnostics::{psb, ControlWeighting};
use reworkd_core::dml::{
    aipw_scores, att_scores, crossfit_nuisances, estimate_ate, naive_ate, rmse_report,
    NuisanceEstimates, ScoreSet,
};
use reworkd_core::learners::LearnerSpec;
use reworkd_core::policy::{
    dataset_decision_frame, evaluate_policy, fit_policy_tree, regret_vs_oracle, threshold_policy,
    Policy, SearchMode,
};
use reworkd_core::sensitivity::{ate_sensitivity, ConfoundingScenario};
use reworkd_core::simulator::{oracle_ate, simulate, OracleTable, SimConfig};

struct Flow {
    train: Dataset<f64>,
    eval: Dataset<f64>,
    oracle_train: OracleTable<f64>,
    oracle_eval: OracleTable<f64>,
    nuis_train: NuisanceEstimates<f64>,
    nuis_eval: NuisanceEstimates<f64>,
    scores_train: ScoreSet<f64>,
    scores_eval: ScoreSet<f64>,
}

fn flow() -> &'static Flow {
    static FLOW: OnceLock<Flow> = OnceLock::new();
    FLOW.get_or_init(|| {
        let cfg = SimConfig {
            n_lots: 2400,
            seed: 424,
            ..SimConfig::default()
        };
        let (full, oracle) = simulate::<f64>(&cfg).unwrap();

        let trimmed = subsample_overlap(&full, 0.01, 0.995).unwrap();
        let keep = |idx: &[usize]| OracleTable {
            y0: idx.iter().map(|&i| oracle.y0[i]).collect(),
            y1: idx.iter().map(|&i| oracle.y1[i]).collect(),
            propensity: idx.iter().map(|&i| oracle.propensity[i]).collect(),
            drift: idx.iter().map(|&i| oracle.drift[i]).collect(),
        };
        let oracle_kept = keep(&trimmed.kept);
        let d = trimmed.dataset;

        let plan = train_eval_split(&d, 0.7, 31).unwrap();
        let train = d.select_rows(&plan.train);
        let eval = d.select_rows(&plan.eval);
        let oracle_train = OracleTable {
            y0: plan.train.iter().map(|&i| oracle_kept.y0[i]).collect(),
            y1: plan.train.iter().map(|&i| oracle_kept.y1[i]).collect(),
            propensity: plan
                .train
                .iter()
                .map(|&i| oracle_kept.propensity[i])
                .collect(),
            drift: plan.train.iter().map(|&i| oracle_kept.drift[i]).collect(),
        };
        let oracle_eval = OracleTable {
            y0: plan.eval.iter().map(|&i| oracle_kept.y0[i]).collect(),
            y1: plan.eval.iter().map(|&i| oracle_kept.y1[i]).collect(),
            propensity: plan
                .eval
                .iter()
                .map(|&i| oracle_kept.propensity[i])
                .collect(),
            drift: plan.eval.iter().map(|&i| oracle_kept.drift[i]).collect(),
        };

        let g = LearnerSpec::boosted_stumps(150, 0.1);
        let m = LearnerSpec::logistic();
        let nuis_train = crossfit_nuisances(&train, &g, &m, 5, 1001).unwrap();
        let nuis_eval = crossfit_nuisances(&eval, &g, &m, 5, 1002).unwrap();
        let scores_train = aipw_scores(&train, &nuis_train).unwrap();
        let scores_eval = aipw_scores(&eval, &nuis_eval).unwrap();
        Flow {
            train,
            eval,
            oracle_train,
            oracle_eval,
            nuis_train,
            nuis_eval,
            scores_train,
            scores_eval,
        }
    })
}

#[test]
fn debiased_estimate_recovers_the_true_effect_where_naive_fails() {
    let f = flow();
    let est = estimate_ate(&f.scores_train).unwrap();
    let truth = oracle_ate(&f.oracle_train);
    assert!(truth > 0.0, "ground truth {truth}");

    let slack = 3.5 * est.std_err;
    assert!(
        (est.theta_hat - truth).abs() < slack.max(0.03),
        "estimate {} vs truth {truth} (se {})",
        est.theta_hat,
        est.std_err
    );

    let naive = naive_ate(f.train.yields().view(), &f.train.treatments()).unwrap();
    assert!(naive.theta_hat < 0.0, "naive {}", naive.theta_hat);

    let att = estimate_ate(&att_scores(&f.train, &f.nuis_train).unwrap()).unwrap();
    assert!(att.theta_hat > est.theta_hat, "att {}", att.theta_hat);

    let rmse = rmse_report(&f.train, &f.nuis_train);
    assert!(rmse.rmse_m < 0.5 && rmse.rmse_g0 < 0.5 && rmse.rmse_g1 < 0.5);
}

#[test]
fn projected_effects_peak_in_the_deficit_region() {
    let f = flow();
    let z_vals = f.train.column("cm_mean").unwrap();
    let z = Array2::from_shape_vec((z_vals.len(), 1), z_vals.clone()).unwrap();
    let basis = build_spline_basis(z.column(0), 3, 5).unwrap();
    let fit = project_scores(f.scores_train.psi_b.view(), &basis, z.view(), &["cm_mean"]).unwrap();

    let lo = z_vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = z_vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let grid = reworkd_core::cate::grid_1d(lo, hi, 25).unwrap();
    let band = multiplier_bootstrap_band(&fit, grid.view(), 0.05, 400, 5).unwrap();
    assert_eq!(band.estimate.len(), 25);
    for i in 0..25 {
        assert!(band.lower[i] <= band.estimate[i] && band.estimate[i] <= band.upper[i]);
    }
}

#[test]
fn learned_policies_beat_the_operator_on_held_out_lots() {
    let f = flow();
    let z_vals = f.train.column("cm_mean").unwrap();
    let z = Array2::from_shape_vec((z_vals.len(), 1), z_vals.clone()).unwrap();
    let basis = build_spline_basis(z.column(0), 3, 5).unwrap();
    let fit = project_scores(f.scores_train.psi_b.view(), &basis, z.view(), &["cm_mean"]).unwrap();
    let threshold = threshold_policy(fit, 0.0).unwrap();

    let cols = [
        "cm_mean".to_string(),
        "cs_mean".to_string(),
        "invalid".to_string(),
        "cm_var".to_string(),
    ];
    let idx: Vec<usize> = cols
        .iter()
        .map(|c| f.train.feature_index(c).unwrap())
        .collect();
    let ztree = f.train.submatrix(&idx);
    let names: Vec<&str> = cols.iter().map(String::as_str).collect();
    let tree = fit_policy_tree(
        ztree.view(),
        f.scores_train.psi_b.view(),
        0.0,
        2,
        SearchMode::Exact,
        &names,
    )
    .unwrap();
    let tree_policy = Policy::Tree(tree);

    let (frame, frame_cols) = dataset_decision_frame(&f.eval);
    let frame_names: Vec<&str> = frame_cols.iter().map(String::as_str).collect();
    let costs = [0.0, 0.01, 0.03];

    let observed = Policy::Observed {
        column: "treatment".into(),
    };
    let report_obs =
        evaluate_policy(&observed, &f.scores_eval, frame.view(), &frame_names, &costs).unwrap();
    let report_thr =
        evaluate_policy(&threshold, &f.scores_eval, frame.view(), &frame_names, &costs).unwrap();
    let report_tree = evaluate_policy(
        &tree_policy,
        &f.scores_eval,
        frame.view(),
        &frame_names,
        &costs,
    )
    .unwrap();

    for c in 0..costs.len() {
        assert!(
            report_thr.values[c].value.theta_hat > report_obs.values[c].value.theta_hat,
            "cost {}: threshold {} vs observed {}",
            costs[c],
            report_thr.values[c].value.theta_hat,
            report_obs.values[c].value.theta_hat
        );
        assert!(
            report_tree.values[c].value.theta_hat > report_obs.values[c].value.theta_hat,
            "cost {}: tree {} vs observed {}",
            costs[c],
            report_tree.values[c].value.theta_hat,
            report_obs.values[c].value.theta_hat
        );
    }

    // Estimated values agree with the generator's counterfactual value.
    let delta = f.oracle_eval.delta();
    for (policy, report) in [(&threshold, &report_thr), (&tree_policy, &report_tree)] {
        let pi = policy.decide_batch(frame.view(), &frame_names).unwrap();
        let mut truth = 0.0;
        for (i, &go) in pi.iter().enumerate() {
            if go {
                truth += delta[i];
            }
        }
        truth /= pi.len() as f64;
        let est = &report.values[0].value;
        assert!(
            (est.theta_hat - truth).abs() < 4.0 * est.std_err,
            "value {} vs truth {truth} (se {})",
            est.theta_hat,
            est.std_err
        );
    }

    // Regret against the oracle stays modest for the learned threshold.
    let (eval_frame, eval_cols) = dataset_decision_frame(&f.eval);
    let eval_names: Vec<&str> = eval_cols.iter().map(String::as_str).collect();
    let regret = regret_vs_oracle(
        &threshold,
        eval_frame.view(),
        &eval_names,
        delta.view(),
    )
    .unwrap();
    assert!(regret.regret >= 0.0);
    assert!(regret.regret < 0.1, "regret {}", regret.regret);
}

#[test]
fn sensitivity_report_is_coherent_on_simulated_data() {
    let f = flow();
    let report = ate_sensitivity(
        &f.scores_train,
        &f.nuis_train,
        &f.train,
        &ConfoundingScenario::reference(),
        None,
    )
    .unwrap();
    assert!(report.sigma > 0.0 && report.nu > 0.0);
    assert!(report.bias_bound > 0.0);
    assert!(report.bounds.0 < report.theta_hat && report.theta_hat < report.bounds.1);
    assert!(report.rv > 0.0 && report.rv < 1.0);
    assert!(report.rva <= report.rv);
}

#[test]
fn weighting_by_fitted_propensities_improves_balance() {
    let f = flow();
    let fitted = psb(
        &f.train,
        f.nuis_train.m_hat.view(),
        ControlWeighting::Literal,
    )
    .unwrap();
    let share = f.train.treatments().iter().filter(|&&a| a).count() as f64
        / f.train.n() as f64;
    let flat = ndarray::Array1::from_elem(f.train.n(), share);
    let unweighted = psb(&f.train, flat.view(), ControlWeighting::Literal).unwrap();

    let score_of = |report: &reworkd_core::BalanceReport, name: &str| {
        report
            .rows
            .iter()
            .find(|r| r.covariate == name)
            .unwrap()
            .treated_psb
            .unwrap()
    };
    let with_m = score_of(&fitted, "cm_mean");
    let without = score_of(&unweighted, "cm_mean");
    assert!(
        without > 0.2,
        "confounded covariate looks balanced: {without}"
    );
    assert!(with_m < without, "weighted {with_m} vs raw {without}");
}
