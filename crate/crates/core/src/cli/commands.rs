use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::io::{
    fmt_f64, fmt_opt, read_json, read_table, response_column, rows_to_mat, split_response, write_json, CsvOut,
    Standardization, INTERCEPT_NAME,
};
use super::{CliError, CviArgs, DataArgs, FitArgs, PredictArgs, ScenarioArg, SimulateArgs, TuneArgs, TuneGridArgs};
use crate::cavi::{fit_with_gram, CaviConfig, ConvergenceRule};
use crate::evaluation::metrics::{predict_plugin_rows, selected_set, DEFAULT_THRESHOLD};
use crate::evaluation::replicate::{run_scenario, summarize, MeanSd, Method, ReplicateConfig};
use crate::evaluation::{tune_rho, CvConfig, SimulationScenario, TuneResult};
use crate::gibbs::{posterior_summaries, predict_rows, run_chain_with_gram, GibbsConfig, GibbsDraws};
use crate::model::{validate_and_cache, Dataset, Hyperparameters};

/// Bumped whenever a field of `report.json`, `best.json` or `model.json` changes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperRecord {
    pub rho: f64,
    pub nu2: f64,
    pub nu0_2: f64,
    /// `explicit` or `cross-validation`.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub inputs: Vec<String>,
    pub seed: u64,
    /// Every flag that affects the output.
    pub settings: serde_json::Value,
    pub hyperparameters: Option<HyperRecord>,
    pub standardization: Option<Standardization>,
    pub intercept: bool,
    /// Wall-clock seconds; the only run-dependent field.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    fn new(command: &str, inputs: Vec<String>, seed: u64, settings: serde_json::Value) -> Self {
        RunManifest {
            command: command.to_owned(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            inputs,
            seed,
            settings,
            hyperparameters: None,
            standardization: None,
            intercept: false,
            timings: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsRecord {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    pub kept_draws: usize,
    pub flip_counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub manifest: RunManifest,
    pub method: Method,
    pub n: usize,
    pub p: usize,
    pub feature_names: Vec<String>,
    pub threshold: f64,
    pub selected: Vec<String>,
    pub selected_indices: Vec<usize>,
    pub converged: Option<bool>,
    pub iterations: Option<usize>,
    pub final_elbo: Option<f64>,
    pub gibbs: Option<GibbsRecord>,
    /// Companion file next to the report: `model.json` or `draws.csv`.
    pub state_file: String,
}

/// Persisted variational state for prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VbModel {
    pub schema_version: u32,
    pub feature_names: Vec<String>,
    pub mu: Vec<f64>,
    pub w: Vec<f64>,
}

struct Prepared {
    dataset: Dataset,
    names: Vec<String>,
    standardization: Option<Standardization>,
}

fn prepare(a: &DataArgs) -> Result<Prepared, CliError> {
    let table = read_table(&a.data)?;
    let col = response_column(&table, &a.response)?;
    let (mut rows, y, mut names) = split_response(&table, col)?;
    if rows.first().map_or(0, Vec::len) == 0 && !a.intercept {
        return Err(CliError::Validation("no feature columns besides the response".into()));
    }
    let standardization = a.standardize.then(|| {
        let s = Standardization::from_rows(&rows);
        s.apply(&mut rows);
        s
    });
    if a.intercept {
        rows.iter_mut().for_each(|r| r.push(1.0));
        names.push(INTERCEPT_NAME.to_owned());
    }
    let p = names.len();
    let dataset = Dataset::new(rows_to_mat(&rows, p), y, Some(names.clone()))?;
    Ok(Prepared {
        dataset,
        names,
        standardization,
    })
}

fn out_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn cavi_config(a: &CviArgs) -> CaviConfig {
    CaviConfig {
        max_iter: a.max_iter,
        tol_elbo: a.tol,
        tol_param: a.tol,
        convergence_rule: ConvergenceRule::Either,
    }
}

fn cv_config(g: &TuneGridArgs, nu0_2: f64, seed: u64) -> CvConfig {
    CvConfig {
        k: g.folds,
        rho_grid: g.rho_grid.0.clone(),
        nu0_2,
        seed,
    }
}

fn path_text(p: &Path) -> String {
    p.display().to_string()
}

fn write_curve(dir: &Path, tuning: &TuneResult) -> Result<(), CliError> {
    let mut out = CsvOut::create(&dir.join("cv_curve.csv"), &["rho", "nu2", "dev_cv", "nonconverged_folds"])?;
    for pt in &tuning.curve {
        out.row([fmt_f64(pt.rho), fmt_f64(pt.nu2), fmt_f64(pt.dev_cv), pt.nonconverged_folds.to_string()])?;
    }
    out.finish()
}

pub(super) fn fit(a: &FitArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let prep = prepare(&a.data)?;
    let ds = &prep.dataset;
    let cavi = cavi_config(&a.cavi);
    cavi.validate()?;
    let method: Method = a.method.into();
    let gcfg = GibbsConfig {
        iterations: a.iters,
        burn_in: a.burnin,
        seed: a.seed,
        thin: a.thin,
        chains: a.chains,
    };
    if method == Method::Gibbs {
        gcfg.validate()?;
    }
    out_dir(&a.out)?;

    let mut manifest = RunManifest::new(
        "fit",
        vec![path_text(&a.data.data)],
        a.seed,
        json!({
            "response": a.data.response,
            "method": method,
            "rho": a.rho,
            "nu0sq": a.nu0sq,
            "standardize": a.data.standardize,
            "intercept": a.data.intercept,
            "tol": a.cavi.tol,
            "max_iter": a.cavi.max_iter,
            "folds": a.grid.folds,
            "rho_grid": a.grid.rho_grid.0,
            "iters": a.iters,
            "burnin": a.burnin,
            "thin": a.thin,
            "chains": a.chains,
        }),
    );
    manifest.standardization = prep.standardization.clone();
    manifest.intercept = a.data.intercept;

    let hyper = match a.rho {
        Some(rho) => {
            let h = Hyperparameters::from_rho(rho, ds.p(), a.nu0sq)?;
            manifest.hyperparameters = Some(HyperRecord {
                rho,
                nu2: h.nu2,
                nu0_2: a.nu0sq,
                source: "explicit".into(),
            });
            h
        }
        None => {
            let t0 = Instant::now();
            let tuning = tune_rho(ds, &cv_config(&a.grid, a.nu0sq, a.seed), &cavi)?;
            manifest.timings.insert("tune_seconds".into(), t0.elapsed().as_secs_f64());
            write_curve(&a.out, &tuning)?;
            manifest.hyperparameters = Some(HyperRecord {
                rho: tuning.rho,
                nu2: tuning.nu2,
                nu0_2: a.nu0sq,
                source: "cross-validation".into(),
            });
            Hyperparameters::new(tuning.nu2, tuning.rho, a.nu0sq)?
        }
    };
    let gram = validate_and_cache(ds)?;

    let t0 = Instant::now();
    let (pips, masked, converged, iterations, final_elbo, gibbs, state_file) = match method {
        Method::Vb => {
            let fit = fit_with_gram(ds, &gram, &hyper, &cavi)?;
            let mut out = CsvOut::create(
                &a.out.join("elbo_trace.csv"),
                &[
                    "iteration",
                    "elbo",
                    "likelihood",
                    "prior_beta",
                    "prior_gamma",
                    "entropy_beta",
                    "entropy_z",
                    "entropy_gamma",
                ],
            )?;
            for (i, (v, t)) in fit.trace.values.iter().zip(&fit.trace.terms).enumerate() {
                out.row([
                    (i + 1).to_string(),
                    fmt_f64(*v),
                    fmt_f64(t.likelihood),
                    fmt_f64(t.prior_beta),
                    fmt_f64(t.prior_gamma),
                    fmt_f64(t.entropy_beta),
                    fmt_f64(t.entropy_z),
                    fmt_f64(t.entropy_gamma),
                ])?;
            }
            out.finish()?;
            write_json(
                &a.out.join("model.json"),
                &VbModel {
                    schema_version: SCHEMA_VERSION,
                    feature_names: prep.names.clone(),
                    mu: fit.state.mu.clone(),
                    w: fit.state.w.clone(),
                },
            )?;
            (
                fit.state.w.clone(),
                fit.state.masked_coefficients(),
                Some(fit.converged),
                Some(fit.state.iteration),
                fit.trace.values.last().copied(),
                None,
                "model.json",
            )
        }
        Method::Gibbs => {
            let draws = run_chain_with_gram(ds, &gram, &hyper, &gcfg)?;
            write_draws(&a.out.join("draws.csv"), &draws)?;
            let summary = posterior_summaries(&draws)?;
            let record = GibbsRecord {
                iterations: gcfg.iterations,
                burn_in: gcfg.burn_in,
                thin: gcfg.thin,
                chains: gcfg.chains,
                kept_draws: draws.rows(),
                flip_counts: draws.flip_counts.clone(),
            };
            (summary.pip, summary.mean_masked_coef, None, None, None, Some(record), "draws.csv")
        }
    };
    manifest.timings.insert("fit_seconds".into(), t0.elapsed().as_secs_f64());

    let mut order: Vec<usize> = (0..pips.len()).collect();
    order.sort_by(|&i, &j| pips[j].total_cmp(&pips[i]).then(i.cmp(&j)));
    let mut out = CsvOut::create(&a.out.join("pips.csv"), &["feature", "pip", "masked_coefficient"])?;
    for &j in &order {
        out.row([prep.names[j].clone(), fmt_f64(pips[j]), fmt_f64(masked[j])])?;
    }
    out.finish()?;

    let selected_indices = selected_set(&pips, DEFAULT_THRESHOLD);
    manifest.timings.insert("total_seconds".into(), started.elapsed().as_secs_f64());
    let report = FitReport {
        schema_version: SCHEMA_VERSION,
        manifest,
        method,
        n: ds.n(),
        p: ds.p(),
        feature_names: prep.names.clone(),
        threshold: DEFAULT_THRESHOLD,
        selected: selected_indices.iter().map(|&j| prep.names[j].clone()).collect(),
        selected_indices,
        converged,
        iterations,
        final_elbo,
        gibbs,
        state_file: state_file.to_owned(),
    };
    write_json(&a.out.join("report.json"), &report)
}

fn write_draws(path: &Path, draws: &GibbsDraws) -> Result<(), CliError> {
    let header: Vec<String> = (1..=draws.p)
        .map(|j| format!("gamma_{j}"))
        .chain((1..=draws.p).map(|j| format!("beta_{j}")))
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut out = CsvOut::create(path, &header)?;
    for r in 0..draws.rows() {
        out.row(
            draws
                .gamma_row(r)
                .iter()
                .map(|g| g.to_string())
                .chain(draws.beta_row(r).iter().map(|&b| fmt_f64(b))),
        )?;
    }
    out.finish()
}

/// Reads a draw matrix written by `fit --method gibbs`.
pub fn read_draws(path: &Path) -> Result<GibbsDraws, CliError> {
    let table = read_table(path)?;
    let width = table.header.as_ref().map_or(0, Vec::len);
    if width == 0 || width % 2 != 0 {
        return Err(CliError::Validation(format!("{}: malformed draw header", path.display())));
    }
    let p = width / 2;
    let mut gamma = Vec::with_capacity(table.rows.len());
    let mut beta = Vec::with_capacity(table.rows.len());
    for r in &table.rows {
        gamma.push(r[..p].iter().map(|&g| (g != 0.0) as u8).collect());
        beta.push(r[p..].to_vec());
    }
    Ok(GibbsDraws::from_rows(gamma, beta)?)
}

pub(super) fn tune(a: &TuneArgs) -> Result<(), CliError> {
    let prep = prepare(&a.data)?;
    let cavi = cavi_config(&a.cavi);
    out_dir(&a.out)?;
    let t0 = Instant::now();
    let tuning = tune_rho(&prep.dataset, &cv_config(&a.grid, a.nu0sq, a.seed), &cavi)?;
    let mut manifest = RunManifest::new(
        "tune",
        vec![path_text(&a.data.data)],
        a.seed,
        json!({
            "response": a.data.response,
            "nu0sq": a.nu0sq,
            "standardize": a.data.standardize,
            "intercept": a.data.intercept,
            "tol": a.cavi.tol,
            "max_iter": a.cavi.max_iter,
            "folds": a.grid.folds,
            "rho_grid": a.grid.rho_grid.0,
        }),
    );
    manifest.timings.insert("tune_seconds".into(), t0.elapsed().as_secs_f64());
    manifest.standardization = prep.standardization;
    manifest.intercept = a.data.intercept;
    manifest.hyperparameters = Some(HyperRecord {
        rho: tuning.rho,
        nu2: tuning.nu2,
        nu0_2: a.nu0sq,
        source: "cross-validation".into(),
    });

    write_curve(&a.out, &tuning)?;
    let mut out = CsvOut::create(&a.out.join("folds.csv"), &["row", "fold"])?;
    let mut fold_of = vec![0usize; prep.dataset.n()];
    for (k, fold) in tuning.folds.iter().enumerate() {
        for &i in fold {
            fold_of[i] = k;
        }
    }
    for (i, k) in fold_of.iter().enumerate() {
        out.row([i.to_string(), k.to_string()])?;
    }
    out.finish()?;
    write_json(
        &a.out.join("best.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "rho": tuning.rho,
            "nu2": tuning.nu2,
            "manifest": manifest,
        }),
    )
}

fn scenario_from(a: &SimulateArgs) -> Result<SimulationScenario, CliError> {
    let mut sc = match a.scenario {
        ScenarioArg::S1 => SimulationScenario::s1(a.seed),
        ScenarioArg::S2 => SimulationScenario::s2(a.seed),
        ScenarioArg::Custom => {
            let (Some(n), Some(p)) = (a.n, a.p) else {
                return Err(CliError::Usage("--scenario custom needs --n and --p".into()));
            };
            SimulationScenario::custom(n, p, 1, a.seed)
        }
    };
    if let Some(n) = a.n {
        sc.n = n;
    }
    if let Some(p) = a.p {
        sc.p = p;
    }
    if let Some(r) = a.replicates {
        sc.replicates = r;
    }
    sc.validate()?;
    Ok(sc)
}

pub(super) fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let scenario = scenario_from(a)?;
    let mut methods: Vec<Method> = Vec::new();
    for m in &a.methods {
        let m = Method::from(*m);
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    let config = ReplicateConfig {
        methods: methods.clone(),
        cv: cv_config(&a.grid, a.nu0sq, a.seed),
        cavi: cavi_config(&a.cavi),
        gibbs: GibbsConfig {
            iterations: a.iters,
            burn_in: a.burnin,
            ..GibbsConfig::default()
        },
    };
    config.cavi.validate()?;
    if methods.contains(&Method::Gibbs) {
        config.gibbs.validate()?;
    }
    out_dir(&a.out)?;
    let t0 = Instant::now();
    let outcomes = run_scenario(&scenario, &config)?;
    let table = summarize(&outcomes, &methods);

    let mut header = vec!["metric".to_owned()];
    for m in &methods {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_sd"));
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut out = CsvOut::create(&a.out.join("table1.csv"), &header)?;
    type Pick = fn(&crate::evaluation::MethodSummary) -> Option<MeanSd>;
    let metrics: [(&str, Pick); 4] = [
        ("tpr", |s| s.tpr),
        ("tnr", |s| s.tnr),
        ("deviance", |s| s.deviance),
        ("seconds", |s| s.seconds),
    ];
    for (name, pick) in metrics {
        let mut row = vec![name.to_owned()];
        for s in &table {
            let v = pick(s);
            row.push(fmt_opt(v.map(|v| v.mean)));
            row.push(fmt_opt(v.map(|v| v.sd)));
        }
        out.row(row)?;
    }
    out.finish()?;

    let mut reps = CsvOut::create(
        &a.out.join("replicates.csv"),
        &["replicate", "method", "rho", "nu2", "tpr", "tnr", "deviance", "seconds", "converged"],
    )?;
    let mut pvt = CsvOut::create(&a.out.join("pip_vs_truth.csv"), &["replicate", "j", "truth", "method", "pip"])?;
    for o in &outcomes {
        let truth = o.truth.effective();
        for m in &o.methods {
            reps.row([
                o.replicate.to_string(),
                m.method.to_string(),
                fmt_f64(o.tuning.rho),
                fmt_f64(o.tuning.nu2),
                fmt_opt(m.tpr),
                fmt_opt(m.tnr),
                fmt_f64(m.deviance),
                fmt_f64(m.seconds),
                m.converged.map(|c| c.to_string()).unwrap_or_default(),
            ])?;
            for (j, &pip) in m.pips.iter().enumerate() {
                pvt.row([
                    o.replicate.to_string(),
                    j.to_string(),
                    fmt_f64(truth[j]),
                    m.method.to_string(),
                    fmt_f64(pip),
                ])?;
            }
        }
    }
    reps.finish()?;
    pvt.finish()?;

    let mut manifest = RunManifest::new(
        "simulate",
        vec![],
        a.seed,
        json!({
            "scenario": scenario,
            "methods": methods,
            "iters": a.iters,
            "burnin": a.burnin,
            "nu0sq": a.nu0sq,
            "folds": a.grid.folds,
            "rho_grid": a.grid.rho_grid.0,
            "tol": a.cavi.tol,
            "max_iter": a.cavi.max_iter,
        }),
    );
    manifest.timings.insert("total_seconds".into(), t0.elapsed().as_secs_f64());
    write_json(
        &a.out.join("report.json"),
        &json!({ "schema_version": SCHEMA_VERSION, "manifest": manifest }),
    )
}

pub(super) fn predict(a: &PredictArgs) -> Result<(), CliError> {
    let report: FitReport = read_json(&a.model)?;
    if report.schema_version != SCHEMA_VERSION {
        return Err(CliError::Validation(format!(
            "report schema {} but this build reads {SCHEMA_VERSION}",
            report.schema_version
        )));
    }
    let base: PathBuf = a.model.parent().map(Path::to_path_buf).unwrap_or_default();
    let table = read_table(&a.data)?;
    let mut rows = table.rows.clone();
    if let Some(spec) = &a.response {
        let col = response_column(&table, spec)?;
        rows.iter_mut().for_each(|r| {
            r.remove(col);
        });
    }
    let intercept = report.manifest.intercept;
    let expected = report.p - intercept as usize;
    if let Some(bad) = rows.iter().position(|r| r.len() != expected) {
        return Err(CliError::Validation(format!(
            "row {bad} has {} columns but the model was trained on {expected}",
            rows[bad].len()
        )));
    }
    if let Some(s) = &report.manifest.standardization {
        s.apply(&mut rows);
    }
    if intercept {
        rows.iter_mut().for_each(|r| r.push(1.0));
    }
    let x = rows_to_mat(&rows, report.p);
    let probs = match report.method {
        Method::Vb => {
            let model: VbModel = read_json(&base.join(&report.state_file))?;
            if model.mu.len() != report.p || model.w.len() != report.p {
                return Err(CliError::Validation("model state does not match the report".into()));
            }
            let masked: Vec<f64> = model.w.iter().zip(&model.mu).map(|(w, m)| w * m).collect();
            predict_plugin_rows(&masked, x.as_ref())?
        }
        Method::Gibbs => {
            let draws = read_draws(&base.join(&report.state_file))?;
            if draws.p != report.p {
                return Err(CliError::Validation("draw file does not match the report".into()));
            }
            predict_rows(&draws, x.as_ref())?
        }
    };
    out_dir(&a.out)?;
    let mut out = CsvOut::create(&a.out.join("predictions.csv"), &["row", "probability"])?;
    for (i, p) in probs.iter().enumerate() {
        out.row([i.to_string(), fmt_f64(*p)])?;
    }
    out.finish()
}
