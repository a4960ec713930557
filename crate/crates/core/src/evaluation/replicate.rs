//! Simulation replicates: generate, tune, fit each method, score.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cv::{tune_rho, CvConfig, TuneResult};
use super::metrics::{predict_plugin_rows, selection_metrics, test_deviance, DEFAULT_THRESHOLD};
use super::simulation::{derived_seed, generate_dataset, substream, SimulationScenario};
use crate::cavi::{fit_with_gram, CaviConfig, ElboTrace};
use crate::error::{Error, Result};
use crate::gibbs::{posterior_summaries, predict_rows, run_chain_with_gram, GibbsConfig};
use crate::model::{validate_and_cache, Hyperparameters, TruthParams};

const DATA_STREAM: u64 = 0;
const CV_STREAM: u64 = 1;
const GIBBS_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Vb,
    Gibbs,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Vb => "vb",
            Method::Gibbs => "gibbs",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vb" => Ok(Method::Vb),
            "gibbs" => Ok(Method::Gibbs),
            other => Err(Error::domain(format!("unknown method {other:?}; expected vb or gibbs"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateConfig {
    pub methods: Vec<Method>,
    pub cv: CvConfig,
    pub cavi: CaviConfig,
    /// The seed is replaced per replicate.
    pub gibbs: GibbsConfig,
}

impl Default for ReplicateConfig {
    fn default() -> Self {
        ReplicateConfig {
            methods: vec![Method::Vb, Method::Gibbs],
            cv: CvConfig::default(),
            cavi: CaviConfig::default(),
            gibbs: GibbsConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub method: Method,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub deviance: f64,
    /// Wall-clock seconds of the final fit (tuning excluded).
    pub seconds: f64,
    pub pips: Vec<f64>,
    pub masked_coefficients: Vec<f64>,
    /// CAVI only.
    pub converged: Option<bool>,
    pub elbo_trace: Option<ElboTrace>,
}

#[derive(Debug, Clone)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub tuning: TuneResult,
    pub truth: TruthParams,
    pub methods: Vec<MethodOutcome>,
}

impl ReplicateOutcome {
    pub fn method(&self, m: Method) -> Option<&MethodOutcome> {
        self.methods.iter().find(|o| o.method == m)
    }
}

/// Replicate `r` of `scenario`. The inclusion prior is tuned by CV on the
/// training set and shared by every method.
pub fn run_replicate(scenario: &SimulationScenario, r: usize, config: &ReplicateConfig) -> Result<ReplicateOutcome> {
    let (train, test, truth) = generate_dataset(scenario, &mut substream(scenario.seed, r as u64, DATA_STREAM))?;
    let cv = CvConfig {
        seed: derived_seed(scenario.seed, r as u64, CV_STREAM),
        ..config.cv.clone()
    };
    let tuning = tune_rho(&train, &cv, &config.cavi)?;
    let hyper = Hyperparameters::new(tuning.nu2, tuning.rho, cv.nu0_2)?;
    let gram = validate_and_cache(&train)?;

    let mut methods = Vec::with_capacity(config.methods.len());
    for &method in &config.methods {
        let outcome = match method {
            Method::Vb => {
                let start = Instant::now();
                let fit = fit_with_gram(&train, &gram, &hyper, &config.cavi)?;
                let seconds = start.elapsed().as_secs_f64();
                let masked = fit.state.masked_coefficients();
                let probs = predict_plugin_rows(&masked, test.x())?;
                let sel = selection_metrics(&fit.state.w, &truth, DEFAULT_THRESHOLD)?;
                MethodOutcome {
                    method,
                    tpr: sel.tpr,
                    tnr: sel.tnr,
                    deviance: test_deviance(&probs, test.y())?,
                    seconds,
                    pips: fit.state.w.clone(),
                    masked_coefficients: masked,
                    converged: Some(fit.converged),
                    elbo_trace: Some(fit.trace),
                }
            }
            Method::Gibbs => {
                let gcfg = GibbsConfig {
                    seed: derived_seed(scenario.seed, r as u64, GIBBS_STREAM),
                    ..config.gibbs
                };
                let start = Instant::now();
                let draws = run_chain_with_gram(&train, &gram, &hyper, &gcfg)?;
                let seconds = start.elapsed().as_secs_f64();
                let summary = posterior_summaries(&draws)?;
                let probs = predict_rows(&draws, test.x())?;
                let sel = selection_metrics(&summary.pip, &truth, DEFAULT_THRESHOLD)?;
                MethodOutcome {
                    method,
                    tpr: sel.tpr,
                    tnr: sel.tnr,
                    deviance: test_deviance(&probs, test.y())?,
                    seconds,
                    pips: summary.pip,
                    masked_coefficients: summary.mean_masked_coef,
                    converged: None,
                    elbo_trace: None,
                }
            }
        };
        methods.push(outcome);
    }
    Ok(ReplicateOutcome {
        replicate: r,
        tuning,
        truth,
        methods,
    })
}

/// All replicates, scheduled in parallel and returned in replicate order.
pub fn run_scenario(scenario: &SimulationScenario, config: &ReplicateConfig) -> Result<Vec<ReplicateOutcome>> {
    scenario.validate()?;
    (0..scenario.replicates)
        .into_par_iter()
        .map(|r| run_replicate(scenario, r, config))
        .collect()
}

/// Mean and sample standard deviation (zero for a single value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(MeanSd { mean, sd })
    }
}

/// One column of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub tpr: Option<MeanSd>,
    pub tnr: Option<MeanSd>,
    pub deviance: Option<MeanSd>,
    pub seconds: Option<MeanSd>,
}

pub fn summarize(outcomes: &[ReplicateOutcome], methods: &[Method]) -> Vec<MethodSummary> {
    methods
        .iter()
        .map(|&m| {
            let rows: Vec<&MethodOutcome> = outcomes.iter().filter_map(|o| o.method(m)).collect();
            let collect = |f: &dyn Fn(&MethodOutcome) -> Option<f64>| -> Vec<f64> {
                rows.iter().filter_map(|o| f(o)).collect()
            };
            MethodSummary {
                method: m,
                tpr: MeanSd::of(&collect(&|o| o.tpr)),
                tnr: MeanSd::of(&collect(&|o| o.tnr)),
                deviance: MeanSd::of(&collect(&|o| Some(o.deviance))),
                seconds: MeanSd::of(&collect(&|o| Some(o.seconds))),
            }
        })
        .collect()
}
