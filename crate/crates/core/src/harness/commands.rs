//! The four harness commands. Each loads a validated config, runs the
//! requested computation, writes deterministic reports into the output
//! directory, and returns the process exit code.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::dps::DpsSpec;
use crate::sim::{simulate_dps, simulate_workload, SimConfig, SimEstimates};
use crate::stats::{
    decorrelate, estimate_scaled_law, independence_diagnostic, ks_exponential, pearson,
    Estimate, IndependenceDiagnostic, MIN_LAW_SAMPLES, MIN_PER_STATE_SAMPLES,
};
use crate::workload::HtModelSpec;

use super::config::{BuiltModel, ExperimentConfig, DEFAULT_SWEEP_SNAPSHOTS};
use super::report::{estimate_rows, render_csv, write_json, write_text, CsvRow};
use super::HarnessError;

/// Decorrelation target used before distributional tests.
const DECORRELATION_TARGET: f64 = 0.1;

#[derive(Serialize)]
struct AnalyzeReport {
    model_kind: &'static str,
    dim: usize,
    stationary: Vec<f64>,
    mean_capacity: f64,
    traffic_intensity: f64,
    offset_vector: Vec<f64>,
    /// Heavy-traffic mean of the scaled workload; absent for the empty model.
    ht_mean_workload: Option<f64>,
    mean_workload: Option<f64>,
    mean_workload_note: Option<&'static str>,
    class_loads: Option<crate::dps::ClassLoads>,
    ht_class_loads: Option<crate::dps::ClassLoads>,
    collapse: Option<crate::dps::CollapsePrediction>,
    ht_workload_from_collapse: Option<f64>,
}

pub fn cmd_analyze(cfg: &ExperimentConfig, out: &Path) -> Result<i32, HarnessError> {
    let built = cfg.model.build().map_err(HarnessError::model)?;
    let model = built.model();
    let rho = model.traffic_intensity();

    let offset_vector = model.offset_vector().map_err(HarnessError::model)?;
    let ht_mean_workload = if rho > 0.0 {
        Some(
            HtModelSpec::from_model(model)
                .and_then(|h| h.mean_workload())
                .map_err(HarnessError::model)?,
        )
    } else {
        None
    };

    let (mean_workload, mean_workload_note) = match &cfg.p0 {
        Some(p0) => {
            let ew = model
                .mean_workload(p0, cfg.p0_tolerance_or_default())
                .map_err(HarnessError::model)?;
            (Some(ew), None)
        }
        None => (None, Some("requires p0")),
    };

    let mut report = AnalyzeReport {
        model_kind: built.kind(),
        dim: model.dim(),
        stationary: model.pi().as_slice().to_vec(),
        mean_capacity: model.mean_capacity(),
        traffic_intensity: rho,
        offset_vector,
        ht_mean_workload,
        mean_workload,
        mean_workload_note,
        class_loads: None,
        ht_class_loads: None,
        collapse: None,
        ht_workload_from_collapse: None,
    };

    if let BuiltModel::Dps(spec) = &built {
        report.class_loads =
            Some(spec.class_loads(false).map_err(HarnessError::model)?);
        if rho > 0.0 {
            let ht = spec.ht().map_err(HarnessError::model)?;
            report.ht_class_loads =
                Some(spec.class_loads(true).map_err(HarnessError::model)?);
            let pred = ht.collapse_prediction().map_err(HarnessError::model)?;
            let chained =
                ht.ht_workload_from_collapse(&pred).map_err(HarnessError::model)?;
            report.ht_workload_from_collapse = Some(chained.mean);
            report.collapse = Some(pred);
        }
    }

    let path = write_json(out, "analyze.json", &report)?;
    println!(
        "analyze: rho_inf = {}, c_inf = {}{}",
        report.traffic_intensity,
        report.mean_capacity,
        report
            .collapse
            .as_ref()
            .map(|c| format!(", ex_mean = {}", c.x_law.mean))
            .unwrap_or_default()
    );
    println!("wrote {}", path.display());
    Ok(0)
}

/// Builds the per-run simulation parameters from the config.
fn sim_config(
    cfg: &ExperimentConfig,
    seed: u64,
    horizon: f64,
    snapshots_default: usize,
) -> SimConfig {
    let mut sc = SimConfig::new(horizon);
    sc.warmup = cfg.warmup.unwrap_or(0.1 * horizon);
    if let Some(b) = cfg.batches {
        sc.batches = b;
    }
    sc.seed = seed;
    sc.snapshot_target = cfg.snapshots.unwrap_or(snapshots_default);
    sc
}

/// Runs `replications` independent streams and merges them in index order.
fn run_replicated<F>(replications: usize, run: F) -> Result<SimEstimates, HarnessError>
where
    F: Fn(u64) -> Result<SimEstimates, crate::sim::SimError> + Sync + Send,
{
    let results: Result<Vec<_>, _> =
        (0..replications as u64).into_par_iter().map(run).collect();
    let mut iter = results.map_err(HarnessError::sim)?.into_iter();
    let first = iter.next().expect("replications >= 1");
    Ok(iter.fold(first, |acc, e| acc.merge(e)))
}

fn simulate_built(
    built: &BuiltModel,
    base: &SimConfig,
    replications: usize,
    stream_offset: u64,
) -> Result<SimEstimates, HarnessError> {
    run_replicated(replications, |stream| {
        let mut sc = base.clone();
        sc.stream = stream_offset + stream;
        match built {
            BuiltModel::Workload(m) => simulate_workload(m, &sc),
            BuiltModel::Dps(s) => simulate_dps(s, &sc),
        }
    })
}

#[derive(Serialize)]
struct SimulateReport {
    model_kind: &'static str,
    seed: u64,
    replications: usize,
    horizon: f64,
    warmup: f64,
    batches: usize,
    events: u64,
    mean_workload: Estimate,
    p0: Vec<Estimate>,
    busy: Vec<Estimate>,
    /// Simulated `sum_d p0_d c_d` and its identity target `(1-rho) c_inf`.
    empty_weighted_sum: Estimate,
    empty_identity_target: f64,
    mean_m: Option<Vec<Vec<Estimate>>>,
    share: Option<Vec<Vec<Estimate>>>,
    snapshots_recorded: usize,
}

pub fn cmd_simulate(
    cfg: &ExperimentConfig,
    out: &Path,
    seed: u64,
) -> Result<i32, HarnessError> {
    let built = cfg.model.build().map_err(HarnessError::model)?;
    let horizon = cfg.horizon_required()?;
    let replications = cfg.replications_or_default();
    let sc = sim_config(cfg, seed, horizon, 0);
    let est = simulate_built(&built, &sc, replications, 0)?;

    let model = built.model();
    let report = SimulateReport {
        model_kind: built.kind(),
        seed,
        replications,
        horizon,
        warmup: sc.warmup,
        batches: sc.batches,
        events: est.events,
        mean_workload: est.ew.estimate(),
        p0: est.p0.iter().map(|s| s.estimate()).collect(),
        busy: est.busy.iter().map(|s| s.estimate()).collect(),
        empty_weighted_sum: est.empty_aggregate(model.capacities()),
        empty_identity_target: (1.0 - model.traffic_intensity()) * model.mean_capacity(),
        mean_m: est.m_kd.as_ref().map(|m| {
            m.iter().map(|r| r.iter().map(|s| s.estimate()).collect()).collect()
        }),
        share: est.share_kd.as_ref().map(|m| {
            m.iter().map(|r| r.iter().map(|s| s.estimate()).collect()).collect()
        }),
        snapshots_recorded: est.snapshots.len(),
    };

    let run_id = seed.to_string();
    let csv = render_csv(&estimate_rows(&run_id, &est, model.capacities()));
    let json_path = write_json(out, "simulate.json", &report)?;
    let csv_path = write_text(out, "simulate.csv", &csv)?;
    println!(
        "simulate: mean workload = {} +- {} over {} events",
        report.mean_workload.value, report.mean_workload.half_width, report.events
    );
    println!("wrote {}", json_path.display());
    println!("wrote {}", csv_path.display());
    Ok(0)
}

#[derive(Serialize)]
struct HtRow {
    n: u64,
    horizon: f64,
    scaled_mean: Option<Estimate>,
    ratio: Option<f64>,
    ks_to_predicted: Option<f64>,
    samples_used: Option<usize>,
    independence: Option<IndependenceDiagnostic>,
    class_scaled_means: Option<Vec<Estimate>>,
    collapse_min_correlation: Option<f64>,
    error: Option<String>,
}

#[derive(Serialize)]
struct HtReport {
    model_kind: &'static str,
    seed: u64,
    replications: usize,
    n_values: Vec<u64>,
    /// Heavy-traffic prediction for the scaled workload mean; constant in N.
    predicted_mean: f64,
    /// Predicted scaled class means (DPS only); constant in N.
    class_predicted_means: Option<Vec<f64>>,
    partial: bool,
    rows: Vec<HtRow>,
}

pub fn cmd_ht_sweep(
    cfg: &ExperimentConfig,
    out: &Path,
    seed: u64,
) -> Result<i32, HarnessError> {
    let built = cfg.model.build().map_err(HarnessError::model)?;
    let n_values = cfg.n_values_or_default();
    let base_horizon = cfg.horizon_required()?;
    let replications = cfg.replications_or_default();

    // Predictions depend only on the critical model, not on N.
    let (predicted_mean, class_predicted, mu, loads) = match &built {
        BuiltModel::Workload(m) => {
            let ht = HtModelSpec::from_model(m).map_err(HarnessError::model)?;
            (ht.mean_workload().map_err(HarnessError::model)?, None, None, None)
        }
        BuiltModel::Dps(s) => {
            let ht = s.ht().map_err(HarnessError::model)?;
            let pred = ht.collapse_prediction().map_err(HarnessError::model)?;
            let chained = ht
                .ht_workload_from_collapse(&pred)
                .map_err(HarnessError::model)?;
            let loads = ht.class_loads(false).map_err(HarnessError::model)?;
            (
                chained.mean,
                Some(pred.class_means()),
                Some(s.mu().to_vec()),
                Some(loads),
            )
        }
    };
    let _ = loads;

    let mut rows = Vec::new();
    let mut csv_rows = Vec::new();
    let mut partial = false;
    for (i, &n) in n_values.iter().enumerate() {
        let horizon = cfg
            .horizon_per_n
            .as_ref()
            .map(|hs| hs[i])
            .unwrap_or(base_horizon);
        let run_id = format!("N{n}");
        match sweep_point(cfg, &built, n, horizon, seed, replications, predicted_mean, &mu)
        {
            Ok(mut row) => {
                push_sweep_csv(&mut csv_rows, &run_id, &row, predicted_mean, &class_predicted);
                row.horizon = horizon;
                rows.push(row);
            }
            Err(e) => {
                partial = true;
                csv_rows.push(CsvRow {
                    run_id: run_id.clone(),
                    quantity: "failed",
                    class: None,
                    state: None,
                    value: 1.0,
                    half_width: 0.0,
                });
                rows.push(HtRow {
                    n,
                    horizon,
                    scaled_mean: None,
                    ratio: None,
                    ks_to_predicted: None,
                    samples_used: None,
                    independence: None,
                    class_scaled_means: None,
                    collapse_min_correlation: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }

    let report = HtReport {
        model_kind: built.kind(),
        seed,
        replications,
        n_values: n_values.clone(),
        predicted_mean,
        class_predicted_means: class_predicted,
        partial,
        rows,
    };
    let json_path = write_json(out, "ht_report.json", &report)?;
    let csv_path = write_text(out, "ht_report.csv", &render_csv(&csv_rows))?;
    for row in &report.rows {
        match (&row.error, &row.ratio) {
            (Some(e), _) => println!("ht-sweep N={}: failed: {e}", row.n),
            (None, Some(r)) => println!(
                "ht-sweep N={}: ratio = {r}{}",
                row.n,
                row.ks_to_predicted
                    .map(|k| format!(", ks = {k}"))
                    .unwrap_or_default()
            ),
            _ => {}
        }
    }
    println!("wrote {}", json_path.display());
    println!("wrote {}", csv_path.display());
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn sweep_point(
    cfg: &ExperimentConfig,
    built: &BuiltModel,
    n: u64,
    horizon: f64,
    seed: u64,
    replications: usize,
    predicted_mean: f64,
    mu: &Option<Vec<f64>>,
) -> Result<HtRow, HarnessError> {
    let scaled_model = match built {
        BuiltModel::Workload(m) => {
            BuiltModel::Workload(m.ht_parametrize(n).map_err(HarnessError::model)?)
        }
        BuiltModel::Dps(s) => {
            BuiltModel::Dps(s.ht_parametrize(n).map_err(HarnessError::model)?)
        }
    };
    let mut sc = sim_config(cfg, seed, horizon, DEFAULT_SWEEP_SNAPSHOTS);
    if cfg.horizon_per_n.is_some() {
        // Per-N horizons imply per-N warmup.
        sc.warmup = 0.1 * horizon;
    }
    let est = simulate_built(&scaled_model, &sc, replications, 0)?;

    let scale = 1.0 / n as f64;
    let ew = est.ew.estimate();
    let scaled_mean =
        Estimate { value: ew.value * scale, half_width: ew.half_width * scale };
    let ratio = scaled_mean.value / predicted_mean;

    // Distributional diagnostics from the stationary snapshots.
    let (workload_samples, states): (Vec<f64>, Vec<usize>) = match built {
        BuiltModel::Workload(_) => {
            (est.snapshots.column(0), est.snapshots.states.clone())
        }
        BuiltModel::Dps(_) => {
            let mu = mu.as_ref().expect("dps sweep carries mu");
            let vals = (0..est.snapshots.len())
                .map(|i| {
                    (0..mu.len())
                        .map(|k| est.snapshots.value(i, k) / mu[k])
                        .sum::<f64>()
                })
                .collect();
            (vals, est.snapshots.states.clone())
        }
    };
    let decorrelated = decorrelate(&workload_samples, DECORRELATION_TARGET, MIN_LAW_SAMPLES);
    let (ks, samples_used) = if decorrelated.len() >= MIN_LAW_SAMPLES {
        let scaled: Vec<f64> = decorrelated.iter().map(|x| x * scale).collect();
        // The law fit (against the sample mean) is recorded in JSON via the
        // KS against the predicted mean; both are available from the CSV.
        let _ = estimate_scaled_law(&scaled, 1.0);
        (Some(ks_exponential(&scaled, predicted_mean)), Some(decorrelated.len()))
    } else {
        (None, Some(decorrelated.len()))
    };

    let independence = independence_diagnostic(
        &workload_samples,
        &states,
        built.model().dim(),
        MIN_PER_STATE_SAMPLES,
    )
    .ok();

    let (class_scaled_means, collapse_min_correlation) = match built {
        BuiltModel::Workload(_) => (None, None),
        BuiltModel::Dps(_) => {
            let m_kd = est.m_kd.as_ref().expect("dps estimates");
            let means: Vec<Estimate> = m_kd
                .iter()
                .map(|row| {
                    let mut v = 0.0;
                    let mut hw = 0.0;
                    for s in row {
                        v += s.mean();
                        hw += s.half_width();
                    }
                    Estimate { value: v * scale, half_width: hw * scale }
                })
                .collect();
            let kn = m_kd.len();
            let min_corr = if kn >= 2 && est.snapshots.len() >= 2 {
                let cols: Vec<Vec<f64>> =
                    (0..kn).map(|k| est.snapshots.column(k)).collect();
                let mut min_c = f64::INFINITY;
                for a in 0..kn {
                    for b in (a + 1)..kn {
                        min_c = min_c.min(pearson(&cols[a], &cols[b]));
                    }
                }
                Some(min_c)
            } else {
                None
            };
            (Some(means), min_corr)
        }
    };

    Ok(HtRow {
        n,
        horizon,
        scaled_mean: Some(scaled_mean),
        ratio: Some(ratio),
        ks_to_predicted: ks,
        samples_used,
        independence,
        class_scaled_means,
        collapse_min_correlation,
        error: None,
    })
}

fn push_sweep_csv(
    rows: &mut Vec<CsvRow>,
    run_id: &str,
    row: &HtRow,
    predicted_mean: f64,
    class_predicted: &Option<Vec<f64>>,
) {
    if let Some(sm) = row.scaled_mean {
        rows.push(CsvRow::scalar(run_id, "scaled_mean", sm));
    }
    rows.push(CsvRow::scalar(run_id, "predicted_mean", Estimate::exact(predicted_mean)));
    if let Some(r) = row.ratio {
        rows.push(CsvRow::scalar(run_id, "ratio", Estimate::exact(r)));
    }
    if let Some(k) = row.ks_to_predicted {
        rows.push(CsvRow::scalar(run_id, "ks", Estimate::exact(k)));
    }
    if let Some(ind) = &row.independence {
        rows.push(CsvRow {
            run_id: run_id.to_string(),
            quantity: "independence",
            class: None,
            state: Some(ind.worst_state),
            value: ind.max_rel_gap,
            half_width: ind.half_width,
        });
    }
    if let Some(means) = &row.class_scaled_means {
        for (k, e) in means.iter().enumerate() {
            rows.push(CsvRow {
                run_id: run_id.to_string(),
                quantity: "class_scaled_mean",
                class: Some(k),
                state: None,
                value: e.value,
                half_width: e.half_width,
            });
        }
    }
    if let Some(preds) = class_predicted {
        for (k, &p) in preds.iter().enumerate() {
            rows.push(CsvRow {
                run_id: run_id.to_string(),
                quantity: "class_predicted_mean",
                class: Some(k),
                state: None,
                value: p,
                half_width: 0.0,
            });
        }
    }
    if let Some(c) = row.collapse_min_correlation {
        rows.push(CsvRow::scalar(run_id, "collapse_min_correlation", Estimate::exact(c)));
    }
}

#[derive(Serialize)]
struct CheckResult {
    name: &'static str,
    passed: bool,
    /// Absolute deviation observed.
    value: f64,
    /// Largest deviation the check accepts (3x the propagated half-width,
    /// floored at a tiny absolute slack).
    limit: f64,
    detail: String,
}

impl CheckResult {
    fn new(name: &'static str, value: f64, limit: f64, detail: String) -> Self {
        CheckResult { name, passed: value <= limit, value, limit, detail }
    }
}

#[derive(Serialize)]
struct ValidateReport {
    model_kind: &'static str,
    seed: u64,
    replications: usize,
    passed: bool,
    checks: Vec<CheckResult>,
}

/// Absolute slack for checks whose half-width could collapse to zero.
const CHECK_SLACK: f64 = 1e-9;

pub fn cmd_validate(
    cfg: &ExperimentConfig,
    out: &Path,
    seed: u64,
) -> Result<i32, HarnessError> {
    let built = cfg.model.build().map_err(HarnessError::model)?;
    let horizon = cfg.horizon_required()?;
    let replications = cfg.replications_or_default();
    let sc = sim_config(cfg, seed, horizon, 0);

    let mut checks = Vec::new();
    match &built {
        BuiltModel::Dps(spec) => {
            // Optionally simulate a system whose true class rates differ
            // from the spec (negative control for the identity checks).
            let sim_spec = match &cfg.validate_sim_mu {
                None => spec.clone(),
                Some(mu) => DpsSpec::new(
                    spec.model().env().clone(),
                    spec.model().lambda().to_vec(),
                    spec.model().capacities().to_vec(),
                    spec.alpha().to_vec(),
                    mu.clone(),
                    spec.g().to_vec(),
                )
                .map_err(HarnessError::model)?,
            };
            let sim_built = BuiltModel::Dps(sim_spec.clone());
            let est = simulate_built(&sim_built, &sc, replications, 0)?;

            let dps_est = est.dps_estimates();
            let rate = spec
                .rate_conservation_residual(&dps_est)
                .map_err(HarnessError::model)?;
            for (k, r) in rate.iter().enumerate() {
                checks.push(CheckResult::new(
                    "rate_conservation",
                    r.value.abs(),
                    (3.0 * r.half_width).max(CHECK_SLACK),
                    format!("class {k}"),
                ));
            }
            let weighted = spec
                .weighted_moment_residual(&dps_est)
                .map_err(HarnessError::model)?;
            for (k, r) in weighted.iter().enumerate() {
                checks.push(CheckResult::new(
                    "weighted_moments",
                    r.value.abs(),
                    (3.0 * r.half_width).max(CHECK_SLACK),
                    format!("class {k}"),
                ));
            }
            checks.push(empty_identity_check(&est, spec.model()));

            // Work conservation against the single-class mixture model,
            // using fresh streams.
            let wl = run_replicated(replications, |stream| {
                let mut c = sc.clone();
                c.stream = replications as u64 + stream;
                simulate_workload(sim_spec.model(), &c)
            })?;
            let gap = (est.ew.mean() - wl.ew.mean()).abs();
            let joint = (est.ew.half_width().powi(2) + wl.ew.half_width().powi(2))
                .sqrt();
            checks.push(CheckResult::new(
                "work_conservation",
                gap,
                (3.0 * joint).max(CHECK_SLACK),
                format!("dps {} vs workload {}", est.ew.mean(), wl.ew.mean()),
            ));
        }
        BuiltModel::Workload(model) => {
            let est = simulate_built(&built, &sc, replications, 0)?;
            checks.push(empty_identity_check(&est, model));
            // The exact mean-workload formula fed with the simulated p0 must
            // reproduce the simulated mean.
            let p0: Vec<f64> = est.p0.iter().map(|s| s.mean()).collect();
            match model.mean_workload(&p0, cfg.p0_tolerance_or_default()) {
                Ok(formula) => {
                    let sim = est.ew.estimate();
                    checks.push(CheckResult::new(
                        "mean_workload_formula",
                        (formula - sim.value).abs(),
                        (3.0 * sim.half_width).max(CHECK_SLACK),
                        format!("formula {formula} vs simulated {}", sim.value),
                    ));
                }
                Err(e) => checks.push(CheckResult {
                    name: "mean_workload_formula",
                    passed: false,
                    value: f64::NAN,
                    limit: 0.0,
                    detail: format!("formula rejected simulated p0: {e}"),
                }),
            }
        }
    }

    let passed = checks.iter().all(|c| c.passed);
    let report = ValidateReport {
        model_kind: built.kind(),
        seed,
        replications,
        passed,
        checks,
    };
    let path = write_json(out, "validate.json", &report)?;
    for c in &report.checks {
        println!(
            "validate: {} [{}] |dev| = {} (limit {}) {}",
            c.name,
            if c.passed { "pass" } else { "FAIL" },
            c.value,
            c.limit,
            c.detail
        );
    }
    println!("wrote {}", path.display());
    Ok(if passed { 0 } else { 4 })
}

fn empty_identity_check(est: &SimEstimates, model: &crate::workload::ModelSpec) -> CheckResult {
    let agg = est.empty_aggregate(model.capacities());
    let target = (1.0 - model.traffic_intensity()) * model.mean_capacity();
    CheckResult::new(
        "empty_probability_identity",
        (agg.value - target).abs(),
        (3.0 * agg.half_width).max(CHECK_SLACK),
        format!("sum p0_d c_d = {} vs (1-rho) c_inf = {target}", agg.value),
    )
}
