//! The pipeline stages and their orchestration.
//!
//! Each stage is a function over one bundle directory: it reads the files
//! earlier stages wrote, computes its slice, and persists its own outputs.
//! The monolithic `run` command executes the same functions in order, so a
//! stage-by-stage invocation produces byte-identical files.
//!
//! Stage seeds derive from the master seed by stage name and index, never
//! from each other, so adding a stage cannot reshuffle existing ones.

use std::fs;

use ndarray::{Array1, Array2, Axis};

use reworkd_core::cate::{
    build_spline_basis, build_tensor_basis, cate_predict, grid_1d, grid_2d,
    multiplier_bootstrap_band, project_scores,
};
use reworkd_core::data_model::{load_csv, train_eval_split, Dataset, SplitPlan};
use reworkd_core::diagnostics::{overlap_histogram, overlap_histogram_on, psb, OverlapHistogram};
use reworkd_core::dml::{
    aipw_scores, att_scores, crossfit_nuisances_on, estimate_ate, naive_ate, rmse_report,
    NuisanceEstimates, ScoreSet,
};
use reworkd_core::learners::{grid_tune, kfold_split, Task, TuneLoss};
use reworkd_core::policy::{
    conservative_policy, dataset_decision_frame, evaluate_policy, fit_policy_tree,
    regret_vs_oracle, threshold_policy, Policy, SearchMode, EXACT_DEPTH_LIMIT,
};
use reworkd_core::rng::derive_seed;
use reworkd_core::sensitivity::{ate_sensitivity, benchmark_confounder, contour_grid, ConfoundingScenario};
use reworkd_core::simulator::{simulate, OracleTable};

use crate::artifacts::{
    read_dataset, read_json, read_nuisance_csv, read_oracle_csv, rebuild_nuisances, tune_scores,
    write_balance_csv, write_cate_curves_csv, write_cate_surface_csv, write_contour_csv,
    write_dataset, write_evaluation_csv, write_json, write_nuisance_csv, write_oracle_csv, Bundle,
    CateCurve, CateSurface, EstimateArtifact, EvalRow, NamedPolicy, PreprocessArtifact, RegretRow,
    RmseRow, TuneArtifact,
};
use crate::config::{InputSpec, PipelineConfig};
use crate::{in_stage, plots, CliError, Result};

/// Stage names in execution order, as the subcommands expose them.
pub const STAGES: [&str; 8] = [
    "simulate",
    "estimate",
    "cate",
    "policy",
    "evaluate",
    "sensitivity",
    "diagnose",
    "report",
];

// ---------------------------------------------------------------------------
// Shared loaders.

fn load_config(bundle: &Bundle) -> Result<PipelineConfig> {
    read_json(&bundle.require(bundle.config(), "simulate")?)
}

fn load_split(bundle: &Bundle) -> Result<SplitPlan> {
    read_json(&bundle.require(bundle.split(), "simulate")?)
}

fn load_estimate(bundle: &Bundle) -> Result<EstimateArtifact> {
    read_json(&bundle.require(bundle.estimate(), "estimate")?)
}

/// Rebuilds one side's nuisances and population-effect scores from the
/// persisted predictions; bit-identical to what the estimate stage used.
fn load_side(
    bundle: &Bundle,
    d: &Dataset<f64>,
    est: &EstimateArtifact,
    train_side: bool,
    stage: &'static str,
) -> Result<(NuisanceEstimates<f64>, ScoreSet<f64>)> {
    let (path, seed) = if train_side {
        (bundle.require(bundle.nuisance_train(), "estimate")?, est.fold_seed_train)
    } else {
        (bundle.require(bundle.nuisance_eval(), "estimate")?, est.fold_seed_eval)
    };
    let rows = read_nuisance_csv(&path)?;
    let nuis = rebuild_nuisances(&rows, est.k, seed, est.clip).map_err(in_stage(stage))?;
    let scores = aipw_scores(d, &nuis).map_err(in_stage(stage))?;
    Ok((nuis, scores))
}

/// Stacks named dataset columns into an `n x k` matrix.
fn column_matrix(
    d: &Dataset<f64>,
    names: &[String],
) -> reworkd_core::Result<(Array2<f64>, Vec<String>)> {
    let mut cols = Vec::with_capacity(names.len());
    for name in names {
        cols.push(d.column(name)?);
    }
    let m = Array2::from_shape_fn((d.n(), names.len()), |(i, j)| cols[j][i]);
    Ok((m, names.to_vec()))
}

fn keep_rows(t: &OracleTable<f64>, rows: &[usize]) -> OracleTable<f64> {
    let pick = |v: &Array1<f64>| -> Array1<f64> { rows.iter().map(|&i| v[i]).collect() };
    OracleTable {
        y0: pick(&t.y0),
        y1: pick(&t.y1),
        propensity: pick(&t.propensity),
        drift: pick(&t.drift),
    }
}

fn column_range(values: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    (lo, hi)
}

// ---------------------------------------------------------------------------
// Stage 1: simulate (or load), trim, split.

pub fn stage_simulate(bundle: &Bundle, cfg: &PipelineConfig) -> Result<()> {
    let tag = "simulate";
    cfg.validate().map_err(in_stage(tag))?;

    // The resolved config pins the generator seed derived from the master
    // seed, so the persisted document records exactly what ran.
    let mut resolved = cfg.clone();
    let (raw, oracle) = match &mut resolved.input {
        InputSpec::Simulate(sim) => {
            sim.seed = derive_seed(cfg.seed, "simulate", 0);
            let (d, t) = simulate::<f64>(sim).map_err(in_stage(tag))?;
            (d, Some(t))
        }
        InputSpec::Csv { path, schema } => {
            let d = load_csv::<f64>(path, schema).map_err(in_stage(tag))?;
            (d, None)
        }
    };

    let pre_trim_cm = raw.column("cm_mean").map_err(in_stage(tag))?;
    let (q_lo, q_hi) = resolved.subsample_quantiles;
    let trimmed =
        reworkd_core::data_model::subsample_overlap(&raw, q_lo, q_hi).map_err(in_stage(tag))?;

    let plan = train_eval_split(
        &trimmed.dataset,
        resolved.split_fraction,
        derive_seed(cfg.seed, "split", 0),
    )
    .map_err(in_stage(tag))?;

    write_json(&bundle.config(), &resolved)?;
    write_dataset(bundle, &trimmed.dataset)?;
    write_json(
        &bundle.preprocess(),
        &PreprocessArtifact {
            quantiles: resolved.subsample_quantiles,
            interval: trimmed.interval,
            kept: trimmed.kept.clone(),
            dropped: trimmed.dropped,
            n_raw: raw.n(),
            pre_trim_cm,
        },
    )?;
    if let Some(t) = oracle {
        write_oracle_csv(&bundle.oracle(), &keep_rows(&t, &trimmed.kept))?;
    }
    write_json(&bundle.split(), &plan)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Stage 2: tune learners, cross-fit both sides, headline estimates.

pub fn stage_estimate(bundle: &Bundle) -> Result<()> {
    let tag = "estimate";
    let cfg = load_config(bundle)?;
    let d = read_dataset(bundle)?;
    let plan = load_split(bundle)?;
    let train = d.select_rows(&plan.train);
    let eval = d.select_rows(&plan.eval);

    // Model tournament on the training side only.
    let tune_seed = derive_seed(cfg.seed, "tune", 0);
    let folds = kfold_split(train.n(), cfg.folds, tune_seed).map_err(in_stage(tag))?;
    let x = train.submatrix(&train.nuisance_column_indices());
    let y = train.yields();
    let a = train.treatments();
    let a01: Array1<f64> = a.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();
    let g_report = grid_tune(
        &cfg.learners.outcome,
        x.view(),
        y.view(),
        &folds,
        TuneLoss::Rmse,
        Task::Regression,
    )
    .map_err(in_stage(tag))?;
    let m_report = grid_tune(
        &cfg.learners.propensity,
        x.view(),
        a01.view(),
        &folds,
        TuneLoss::LogLoss,
        Task::Classification,
    )
    .map_err(in_stage(tag))?;
    let tuned = TuneArtifact {
        outcome: g_report.best.clone(),
        propensity: m_report.best.clone(),
        outcome_entries: tune_scores(&g_report),
        propensity_entries: tune_scores(&m_report),
        fold_seed: tune_seed,
    };
    write_json(&bundle.tune(), &tuned)?;

    // Cross-fit each side with its own derived seed.
    let seed_train = derive_seed(cfg.seed, "crossfit", 0);
    let seed_eval = derive_seed(cfg.seed, "crossfit", 1);
    let crossfit = |side: &Dataset<f64>, seed: u64| -> reworkd_core::Result<NuisanceEstimates<f64>> {
        crossfit_nuisances_on(
            side.submatrix(&side.nuisance_column_indices()).view(),
            side.yields().view(),
            &side.treatments(),
            &tuned.outcome,
            &tuned.propensity,
            cfg.folds,
            seed,
            cfg.clip,
        )
    };
    let nuis_train = crossfit(&train, seed_train).map_err(in_stage(tag))?;
    let nuis_eval = crossfit(&eval, seed_eval).map_err(in_stage(tag))?;

    let sc_train = aipw_scores(&train, &nuis_train).map_err(in_stage(tag))?;
    let sc_eval = aipw_scores(&eval, &nuis_eval).map_err(in_stage(tag))?;
    let sc_att = att_scores(&train, &nuis_train).map_err(in_stage(tag))?;

    let ate = estimate_ate(&sc_train).map_err(in_stage(tag))?;
    let att = estimate_ate(&sc_att).map_err(in_stage(tag))?;
    let naive = naive_ate(train.yields().view(), &a).map_err(in_stage(tag))?;
    let holdout_ate = estimate_ate(&sc_eval).map_err(in_stage(tag))?;

    let to_row = |r: reworkd_core::learners::NuisanceRmse| RmseRow {
        m: r.rmse_m,
        g0: r.rmse_g0,
        g1: r.rmse_g1,
    };
    let (oracle_ate, oracle_att) = if bundle.oracle().is_file() {
        let t = read_oracle_csv(&bundle.oracle())?;
        let ate_o = reworkd_core::simulator::oracle_ate(&t);
        let att_o = reworkd_core::simulator::oracle_att(&t, &d.treatments()).map_err(in_stage(tag))?;
        (Some(ate_o), Some(att_o))
    } else {
        (None, None)
    };

    write_nuisance_csv(&bundle.nuisance_train(), &nuis_train, &sc_train.psi_b)?;
    write_nuisance_csv(&bundle.nuisance_eval(), &nuis_eval, &sc_eval.psi_b)?;
    write_json(
        &bundle.estimate(),
        &EstimateArtifact {
            ate,
            att,
            naive,
            holdout_ate,
            rmse_train: to_row(rmse_report(&train, &nuis_train)),
            rmse_eval: to_row(rmse_report(&eval, &nuis_eval)),
            k: cfg.folds,
            clip: cfg.clip,
            fold_seed_train: seed_train,
            fold_seed_eval: seed_eval,
            clipped_train: nuis_train.clipped_count,
            clipped_eval: nuis_eval.clipped_count,
            oracle_ate,
            oracle_att,
        },
    )
}

// ---------------------------------------------------------------------------
// Stage 3: effect curves and the effect surface.

pub fn stage_cate(bundle: &Bundle) -> Result<()> {
    let tag = "cate";
    let cfg = load_config(bundle)?;
    let d = read_dataset(bundle)?;
    let plan = load_split(bundle)?;
    let est = load_estimate(bundle)?;
    let train = d.select_rows(&plan.train);
    let (_, scores) = load_side(bundle, &train, &est, true, tag)?;

    let mut curves = Vec::with_capacity(cfg.cate.columns.len());
    for (i, col) in cfg.cate.columns.iter().enumerate() {
        let z = train.column(col).map_err(in_stage(tag))?;
        let zarr = Array1::from_vec(z);
        let basis =
            build_spline_basis(zarr.view(), cfg.cate.degree, cfg.cate.df).map_err(in_stage(tag))?;
        let zmat = zarr.view().insert_axis(Axis(1));
        let fit =
            project_scores(scores.psi_b.view(), &basis, zmat, &[col]).map_err(in_stage(tag))?;
        // Span the band grid over the full processed dataset, not just the
        // training side: conservative policies refuse to decide outside the
        // band, and the held-out rows must stay evaluable.
        let (lo, hi) = column_range(&d.column(col).map_err(in_stage(tag))?);
        let grid = grid_1d(lo, hi, cfg.cate.grid_points).map_err(in_stage(tag))?;
        let band = multiplier_bootstrap_band(
            &fit,
            grid.view(),
            cfg.cate.band_alpha,
            cfg.cate.bootstrap_draws,
            derive_seed(cfg.seed, "band", i as u64),
        )
        .map_err(in_stage(tag))?;
        curves.push(CateCurve { column: col.clone(), fit, band });
    }
    write_json(&bundle.cate_curves(), &curves)?;
    write_cate_curves_csv(&bundle.cate_curves_csv(), &curves)?;

    let (sx, sy) = (&cfg.cate.surface.0, &cfg.cate.surface.1);
    let zx = Array1::from_vec(train.column(sx).map_err(in_stage(tag))?);
    let zy = Array1::from_vec(train.column(sy).map_err(in_stage(tag))?);
    let basis2 = build_tensor_basis(
        zx.view(),
        zy.view(),
        cfg.cate.surface_degree,
        cfg.cate.surface_df,
    )
    .map_err(in_stage(tag))?;
    let mut z2 = Array2::zeros((train.n(), 2));
    z2.column_mut(0).assign(&zx);
    z2.column_mut(1).assign(&zy);
    let fit2 = project_scores(
        scores.psi_b.view(),
        &basis2,
        z2.view(),
        &[sx.as_str(), sy.as_str()],
    )
    .map_err(in_stage(tag))?;
    let grid2 = grid_2d(
        column_range(&d.column(sx).map_err(in_stage(tag))?),
        column_range(&d.column(sy).map_err(in_stage(tag))?),
        cfg.cate.surface_points,
    )
    .map_err(in_stage(tag))?;
    let pred = cate_predict(&fit2, grid2.view()).map_err(in_stage(tag))?;
    let surface = CateSurface {
        columns: (sx.clone(), sy.clone()),
        fit: fit2,
        grid: grid2.rows().into_iter().map(|r| (r[0], r[1])).collect(),
        theta: pred.theta.to_vec(),
        std_err: pred.std_err.to_vec(),
        points_per_axis: cfg.cate.surface_points,
    };
    write_json(&bundle.cate_surface(), &surface)?;
    write_cate_surface_csv(&bundle.cate_surface_csv(), &surface)
}

// ---------------------------------------------------------------------------
// Stage 4: learn the policy menu on the training side.

pub fn stage_policy(bundle: &Bundle) -> Result<()> {
    let tag = "policy";
    let cfg = load_config(bundle)?;
    let d = read_dataset(bundle)?;
    let plan = load_split(bundle)?;
    let est = load_estimate(bundle)?;
    let train = d.select_rows(&plan.train);
    let (_, scores) = load_side(bundle, &train, &est, true, tag)?;
    let curves: Vec<CateCurve> = read_json(&bundle.require(bundle.cate_curves(), "cate")?)?;

    let source = curves
        .iter()
        .find(|c| c.column == cfg.policy.threshold_column)
        .ok_or_else(|| {
            CliError::Config(format!(
                "threshold column `{}` has no fitted effect curve; add it to cate.columns",
                cfg.policy.threshold_column
            ))
        })?;

    let mut named = Vec::new();
    for &gamma in &cfg.policy.gammas {
        named.push(NamedPolicy {
            name: format!("threshold_{gamma}"),
            policy: threshold_policy(source.fit.clone(), gamma).map_err(in_stage(tag))?,
        });
        named.push(NamedPolicy {
            name: format!("conservative_{gamma}"),
            policy: conservative_policy(source.band.clone(), gamma).map_err(in_stage(tag))?,
        });
    }

    let (zt, names) = column_matrix(&train, &cfg.policy.tree_features).map_err(in_stage(tag))?;
    let feats: Vec<&str> = names.iter().map(String::as_str).collect();
    for &depth in &cfg.policy.greedy_depths {
        let tree = fit_policy_tree(
            zt.view(),
            scores.psi_b.view(),
            0.0,
            depth,
            SearchMode::Greedy,
            &feats,
        )
        .map_err(in_stage(tag))?;
        named.push(NamedPolicy {
            name: format!("greedy_depth{depth}"),
            policy: Policy::Tree(tree),
        });
    }
    let exact = fit_policy_tree(
        zt.view(),
        scores.psi_b.view(),
        0.0,
        cfg.policy.exact_depth,
        SearchMode::Exact,
        &feats,
    )
    .map_err(in_stage(tag))?;
    named.push(NamedPolicy {
        name: format!("exact_depth{}", cfg.policy.exact_depth),
        policy: Policy::Tree(exact),
    });
    named.push(NamedPolicy {
        name: "observed".into(),
        policy: Policy::Observed { column: "treatment".into() },
    });
    named.push(NamedPolicy { name: "always".into(), policy: Policy::AlwaysTreat });
    named.push(NamedPolicy { name: "never".into(), policy: Policy::NeverTreat });

    write_json(&bundle.policies(), &named)
}

// ---------------------------------------------------------------------------
// Stage 5: price every policy on the held-out side.

pub fn stage_evaluate(bundle: &Bundle) -> Result<()> {
    let tag = "evaluate";
    let cfg = load_config(bundle)?;
    let d = read_dataset(bundle)?;
    let plan = load_split(bundle)?;
    let est = load_estimate(bundle)?;
    let policies: Vec<NamedPolicy> = read_json(&bundle.require(bundle.policies(), "policy")?)?;
    let eval_ds = d.select_rows(&plan.eval);
    let (_, scores) = load_side(bundle, &eval_ds, &est, false, tag)?;

    let (frame, names) = dataset_decision_frame(&eval_ds);
    let cols: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut rows = Vec::with_capacity(policies.len());
    for np in &policies {
        let report = evaluate_policy(&np.policy, &scores, frame.view(), &cols, &cfg.policy.costs)
            .map_err(in_stage(tag))?;
        rows.push(EvalRow { name: np.name.clone(), report });
    }
    write_json(&bundle.evaluation(), &rows)?;
    write_evaluation_csv(&bundle.evaluation_csv(), &rows)?;

    // True regret needs counterfactuals, so it exists only for simulated
    // inputs, and only for policy classes the enumerator covers.
    if bundle.oracle().is_file() {
        let oracle = read_oracle_csv(&bundle.oracle())?;
        let delta_all = oracle.delta();
        let delta: Array1<f64> = plan.eval.iter().map(|&i| delta_all[i]).collect();
        let mut regrets = Vec::new();
        for np in &policies {
            let enumerable = match &np.policy {
                Policy::Tree(t) => t.depth <= EXACT_DEPTH_LIMIT,
                _ => true,
            };
            if !enumerable {
                continue;
            }
            let report = regret_vs_oracle(&np.policy, frame.view(), &cols, delta.view())
                .map_err(in_stage(tag))?;
            regrets.push(RegretRow { name: np.name.clone(), report });
        }
        write_json(&bundle.regret(), &regrets)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Stage 6: robustness of the headline effect.

pub fn stage_sensitivity(bundle: &Bundle) -> Result<()> {
    let tag = "sensitivity";
    let cfg = load_config(bundle)?;
    let d = read_dataset(bundle)?;
    let plan = load_split(bundle)?;
    let est = load_estimate(bundle)?;
    let tuned: TuneArtifact = read_json(&bundle.require(bundle.tune(), "estimate")?)?;
    let train = d.select_rows(&plan.train);
    let (nuis, scores) = load_side(bundle, &train, &est, true, tag)?;

    let scenario = ConfoundingScenario::new(
        cfg.sensitivity.zeta_y,
        cfg.sensitivity.zeta_d,
        cfg.sensitivity.rho,
    )
    .map_err(in_stage(tag))?;
    let mut report = ate_sensitivity(&scores, &nuis, &train, &scenario, Some(cfg.sensitivity.alpha))
        .map_err(in_stage(tag))?;

    for group in &cfg.sensitivity.benchmarks {
        let omit: Vec<&str> = group.iter().map(String::as_str).collect();
        let row = benchmark_confounder(
            &train,
            &nuis,
            &omit,
            &tuned.outcome,
            &tuned.propensity,
            est.k,
            est.fold_seed_train,
        )
        .map_err(in_stage(tag))?;
        report.benchmarks.push(row);
    }

    let contour = contour_grid(
        &scores,
        &nuis,
        &train,
        &cfg.sensitivity.contour_axis,
        &cfg.sensitivity.contour_axis,
    )
    .map_err(in_stage(tag))?;
    write_contour_csv(&bundle.contour_csv(), &contour)?;
    report.contour = Some(contour);
    write_json(&bundle.sensitivity(), &report)
}

// ---------------------------------------------------------------------------
// Stage 7: balance and overlap diagnostics.

pub fn stage_diagnose(bundle: &Bundle) -> Result<()> {
    let tag = "diagnose";
    let cfg = load_config(bundle)?;
    let d = read_dataset(bundle)?;
    let plan = load_split(bundle)?;
    let est = load_estimate(bundle)?;
    let train = d.select_rows(&plan.train);
    let (nuis, _) = load_side(bundle, &train, &est, true, tag)?;

    let balance =
        psb(&train, nuis.m_hat.view(), cfg.diagnostics.weighting).map_err(in_stage(tag))?;
    write_json(&bundle.balance(), &balance)?;
    write_balance_csv(&bundle.balance_csv(), &balance)?;

    let mut hists = Vec::with_capacity(cfg.diagnostics.histogram_columns.len() + 1);
    for col in &cfg.diagnostics.histogram_columns {
        hists.push(overlap_histogram(&d, col, cfg.diagnostics.bins).map_err(in_stage(tag))?);
    }
    hists.push(
        overlap_histogram_on(
            "propensity",
            &nuis.m_hat.to_vec(),
            &train.treatments(),
            cfg.diagnostics.bins,
        )
        .map_err(in_stage(tag))?,
    );
    write_json(&bundle.overlap(), &hists)
}

// ---------------------------------------------------------------------------
// Stage 8: plots and the markdown report.

pub fn stage_report(bundle: &Bundle) -> Result<()> {
    let cfg = load_config(bundle)?;
    let pre: PreprocessArtifact = read_json(&bundle.require(bundle.preprocess(), "simulate")?)?;
    let est = load_estimate(bundle)?;
    let curves: Vec<CateCurve> = read_json(&bundle.require(bundle.cate_curves(), "cate")?)?;
    let surface: CateSurface = read_json(&bundle.require(bundle.cate_surface(), "cate")?)?;
    let evaluation: Vec<EvalRow> = read_json(&bundle.require(bundle.evaluation(), "evaluate")?)?;
    let sens: reworkd_core::sensitivity::SensitivityReport<f64> =
        read_json(&bundle.require(bundle.sensitivity(), "sensitivity")?)?;
    let balance: reworkd_core::diagnostics::BalanceReport<f64> =
        read_json(&bundle.require(bundle.balance(), "diagnose")?)?;
    let hists: Vec<OverlapHistogram<f64>> =
        read_json(&bundle.require(bundle.overlap(), "diagnose")?)?;
    let regrets: Option<Vec<RegretRow>> = if bundle.regret().is_file() {
        Some(read_json(&bundle.regret())?)
    } else {
        None
    };

    let plots_dir = bundle.plots_dir();
    fs::create_dir_all(&plots_dir)
        .map_err(CliError::io(format!("creating `{}`", plots_dir.display())))?;
    let mut plot_files: Vec<(String, String)> = Vec::new();
    let mut save = |name: String, svg: String| -> Result<()> {
        if !plots::well_formed(&svg) {
            return Err(CliError::Config(format!("plot `{name}` rendered malformed markup")));
        }
        fs::write(plots_dir.join(&name), &svg)
            .map_err(CliError::io(format!("writing plot `{name}`")))?;
        plot_files.push((name.clone(), name));
        Ok(())
    };

    for c in &curves {
        let x: Vec<f64> = c.band.grid.column(0).to_vec();
        save(
            format!("cate_{}.svg", c.column),
            plots::line_band(
                &format!("Rework effect by {}", c.column),
                &c.column,
                &x,
                c.band.estimate.as_slice().expect("contiguous"),
                c.band.lower.as_slice().expect("contiguous"),
                c.band.upper.as_slice().expect("contiguous"),
            ),
        )?;
    }

    // The surface grid is row-major with the first axis slowest; the cell
    // renderer wants rows over the second axis, so transpose.
    let p = surface.points_per_axis;
    if p >= 1 && surface.grid.len() == p * p && surface.theta.len() == p * p {
        let xs: Vec<f64> = (0..p).map(|i| surface.grid[i * p].0).collect();
        let ys: Vec<f64> = (0..p).map(|j| surface.grid[j].1).collect();
        let mut vals = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..p {
                vals[j * p + i] = surface.theta[i * p + j];
            }
        }
        save(
            "cate_surface.svg".into(),
            plots::heatmap(
                &format!("Rework effect over {} and {}", surface.columns.0, surface.columns.1),
                &surface.columns.0,
                &surface.columns.1,
                &xs,
                &ys,
                &vals,
            ),
        )?;
    }

    for h in &hists {
        save(
            format!("overlap_{}.svg", h.covariate),
            plots::grouped_histogram(
                &format!("Arm overlap in {}", h.covariate),
                &h.covariate,
                &h.edges,
                &h.treated,
                &h.control,
            ),
        )?;
    }

    if let Some(contour) = &sens.contour {
        let vals: Vec<f64> = contour.lower.iter().copied().collect();
        save(
            "sensitivity_contour.svg".into(),
            plots::contour(
                "Worst-case effect lower bound by confounding strength",
                "treatment-channel strength",
                "outcome-channel strength",
                &contour.zeta_d,
                &contour.zeta_y,
                &vals,
            ),
        )?;
    }

    save(
        "subsampling.svg".into(),
        plots::annotated_histogram(
            "Trimmed support of cm_mean",
            "cm_mean before trimming",
            &pre.pre_trim_cm,
            cfg.diagnostics.bins,
            pre.interval,
        ),
    )?;

    let md = render_report(&cfg, &pre, &est, &curves, &evaluation, &sens, &balance, regrets.as_deref(), &plot_files);
    fs::write(bundle.report_md(), md)
        .map_err(CliError::io(format!("writing `{}`", bundle.report_md().display())))
}

fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4}")
    } else {
        "n/a".into()
    }
}

#[allow(clippy::too_many_arguments)]
fn render_report(
    cfg: &PipelineConfig,
    pre: &PreprocessArtifact,
    est: &EstimateArtifact,
    curves: &[CateCurve],
    evaluation: &[EvalRow],
    sens: &reworkd_core::sensitivity::SensitivityReport<f64>,
    balance: &reworkd_core::diagnostics::BalanceReport<f64>,
    regrets: Option<&[RegretRow]>,
    plot_files: &[(String, String)],
) -> String {
    let mut md = String::new();
    md.push_str("# Rework policy report\n\n");
    md.push_str(&format!(
        "Input: {} lots, {} trimmed away outside cm_mean in [{}, {}], {} analyzed \
         (master seed {}).\n\n",
        pre.n_raw,
        pre.dropped,
        fmt(pre.interval.0),
        fmt(pre.interval.1),
        pre.n_raw - pre.dropped,
        cfg.seed,
    ));

    md.push_str("## Headline effects (training side)\n\n");
    md.push_str("| estimator | estimate | std err | 95% CI |\n|---|---|---|---|\n");
    for (label, e) in [
        ("difference in means", &est.naive),
        ("debiased ATE", &est.ate),
        ("debiased ATT", &est.att),
        ("held-out ATE", &est.holdout_ate),
    ] {
        md.push_str(&format!(
            "| {label} | {} | {} | [{}, {}] |\n",
            fmt(e.theta_hat),
            fmt(e.std_err),
            fmt(e.ci_low),
            fmt(e.ci_high),
        ));
    }
    if let (Some(oa), Some(ot)) = (est.oracle_ate, est.oracle_att) {
        md.push_str(&format!(
            "| true ATE / ATT (simulated) | {} / {} | | |\n",
            fmt(oa),
            fmt(ot)
        ));
    }

    md.push_str("\n## Nuisance fit quality (RMSE)\n\n");
    md.push_str("| side | propensity | control outcome | treated outcome |\n|---|---|---|---|\n");
    md.push_str(&format!(
        "| train | {} | {} | {} |\n",
        fmt(est.rmse_train.m),
        fmt(est.rmse_train.g0),
        fmt(est.rmse_train.g1)
    ));
    md.push_str(&format!(
        "| eval | {} | {} | {} |\n",
        fmt(est.rmse_eval.m),
        fmt(est.rmse_eval.g0),
        fmt(est.rmse_eval.g1)
    ));
    md.push_str(&format!(
        "\nClipped propensities: {} (train), {} (eval) at bounds [{}, {}].\n",
        est.clipped_train, est.clipped_eval, est.clip.0, est.clip.1
    ));

    md.push_str("\n## Effect curves\n\n");
    for c in curves {
        md.push_str(&format!(
            "- `{}`: {} training rows, {} clamped to the basis boundary\n",
            c.column, c.fit.n, c.fit.clamped_rows
        ));
    }

    md.push_str("\n## Policy values (held-out side)\n\n");
    md.push_str("Value is the mean per-lot gain over never reworking, net of cost.\n\n");
    md.push_str("| policy | cost | value | 95% CI | share treated |\n|---|---|---|---|---|\n");
    for row in evaluation {
        for cv in &row.report.values {
            md.push_str(&format!(
                "| {} | {} | {} | [{}, {}] | {} |\n",
                row.name,
                cv.cost,
                fmt(cv.value.theta_hat),
                fmt(cv.value.ci_low),
                fmt(cv.value.ci_high),
                fmt(row.report.share_treated),
            ));
        }
    }

    if let Some(rows) = regrets {
        md.push_str("\n## Regret against the in-class oracle optimum (simulated truth)\n\n");
        md.push_str("| policy | true value | best in class | regret |\n|---|---|---|---|\n");
        for r in rows {
            md.push_str(&format!(
                "| {} | {} | {} | {} |\n",
                r.name,
                fmt(r.report.policy_value),
                fmt(r.report.best_value),
                fmt(r.report.regret),
            ));
        }
    }

    md.push_str("\n## Robustness to unobserved confounding\n\n");
    md.push_str(&format!(
        "Estimate {} (se {}). Under the reference scenario (zeta_y={}, zeta_d={}, rho={}) \
         the effect stays within [{}, {}]; with sampling noise [{}, {}].\n\n",
        fmt(sens.theta_hat),
        fmt(sens.std_err),
        fmt(sens.scenario.zeta_y),
        fmt(sens.scenario.zeta_d),
        fmt(sens.scenario.rho),
        fmt(sens.bounds.0),
        fmt(sens.bounds.1),
        fmt(sens.ci_bounds.0),
        fmt(sens.ci_bounds.1),
    ));
    md.push_str(&format!(
        "Robustness value: {} (point estimate), {} (CI bound).\n",
        fmt(sens.rv),
        fmt(sens.rva)
    ));
    if !sens.benchmarks.is_empty() {
        md.push_str("\n| omitted columns | zeta_y | zeta_d | rho | effect shift |\n|---|---|---|---|---|\n");
        for b in &sens.benchmarks {
            md.push_str(&format!(
                "| {} | {} | {} | {} | {} |\n",
                b.omitted.join(", "),
                fmt(b.zeta_y),
                fmt(b.zeta_d),
                fmt(b.rho),
                fmt(b.delta_theta),
            ));
        }
    }

    md.push_str("\n## Covariate balance (PSB)\n\n");
    md.push_str(&format!(
        "Threshold {}; all covariates pass: {}.\n\n",
        balance.threshold, balance.all_pass
    ));
    md.push_str("| covariate | reworked arm | untouched arm |\n|---|---|---|\n");
    let fmt_opt = |v: Option<f64>| v.map(fmt).unwrap_or_else(|| "n/a".into());
    for row in &balance.rows {
        md.push_str(&format!(
            "| {} | {} | {} |\n",
            row.covariate,
            fmt_opt(row.treated_psb),
            fmt_opt(row.control_psb),
        ));
    }

    md.push_str("\n## Plots\n\n");
    for (name, file) in plot_files {
        md.push_str(&format!("![{name}](plots/{file})\n"));
    }
    md.push('\n');
    md
}

// ---------------------------------------------------------------------------
// Monolithic run.

/// Executes every stage in order, optionally stopping after `last_stage`.
/// Later stages read exactly what earlier stages wrote, so this produces
/// the same bytes as running the subcommands one by one.
pub fn run_pipeline(bundle: &Bundle, cfg: &PipelineConfig, last_stage: Option<&str>) -> Result<()> {
    if let Some(name) = last_stage {
        if !STAGES.contains(&name) {
            return Err(CliError::Config(format!(
                "unknown stage `{name}`; expected one of {}",
                STAGES.join(", ")
            )));
        }
    }
    let stop = |name: &str| last_stage == Some(name);

    stage_simulate(bundle, cfg)?;
    if stop("simulate") {
        return Ok(());
    }
    stage_estimate(bundle)?;
    if stop("estimate") {
        return Ok(());
    }
    stage_cate(bundle)?;
    if stop("cate") {
        return Ok(());
    }
    stage_policy(bundle)?;
    if stop("policy") {
        return Ok(());
    }
    stage_evaluate(bundle)?;
    if stop("evaluate") {
        return Ok(());
    }
    stage_sensitivity(bundle)?;
    if stop("sensitivity") {
        return Ok(());
    }
    stage_diagnose(bundle)?;
    if stop("diagnose") {
        return Ok(());
    }
    stage_report(bundle)
}
