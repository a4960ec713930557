//! Selection rates, plug-in prediction and Bernoulli deviance.

use faer::MatRef;
use serde::{Deserialize, Serialize};

use crate::cavi::VariationalState;
use crate::error::{Error, Result};
use crate::kernels::std_normal_cdf;
use crate::linalg;
use crate::model::TruthParams;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-12;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    /// Percent of truly active coordinates selected; `None` without any.
    pub tpr: Option<f64>,
    /// Percent of truly inactive coordinates excluded; `None` without any.
    pub tnr: Option<f64>,
    pub selected: Vec<usize>,
    pub threshold: f64,
}

/// Coordinates with `pip > threshold`; a tie is excluded.
pub fn selected_set(pips: &[f64], threshold: f64) -> Vec<usize> {
    (0..pips.len()).filter(|&j| pips[j] > threshold).collect()
}

pub fn selection_metrics(pips: &[f64], truth: &TruthParams, threshold: f64) -> Result<SelectionMetrics> {
    if pips.len() != truth.p() {
        return Err(Error::domain(format!(
            "{} inclusion probabilities for {} coordinates",
            pips.len(),
            truth.p()
        )));
    }
    let selected = selected_set(pips, threshold);
    let (mut tp, mut tn, mut active, mut inactive) = (0usize, 0usize, 0usize, 0usize);
    for (j, &g) in truth.gamma0.iter().enumerate() {
        let inc = pips[j] > threshold;
        if g {
            active += 1;
            tp += inc as usize;
        } else {
            inactive += 1;
            tn += !inc as usize;
        }
    }
    let rate = |hit: usize, total: usize| (total > 0).then(|| 100.0 * hit as f64 / total as f64);
    Ok(SelectionMetrics {
        tpr: rate(tp, active),
        tnr: rate(tn, inactive),
        selected,
        threshold,
    })
}

/// Plug-in `Phi(x_new^T (w ⊙ mu))`.
pub fn predict_vb(state: &VariationalState, x_new: &[f64]) -> Result<f64> {
    if x_new.len() != state.mu.len() {
        return Err(Error::domain(format!(
            "covariate vector has length {} but the model has {} features",
            x_new.len(),
            state.mu.len()
        )));
    }
    Ok(std_normal_cdf(linalg::dot(x_new, &state.masked_coefficients())))
}

/// Plug-in probabilities for every row of `x` from masked coefficients `w ⊙ mu`.
pub fn predict_plugin_rows(masked: &[f64], x: MatRef<'_, f64>) -> Result<Vec<f64>> {
    if x.ncols() != masked.len() {
        return Err(Error::domain(format!(
            "design has {} columns but the model has {} features",
            x.ncols(),
            masked.len()
        )));
    }
    Ok(linalg::mat_vec(x, masked).into_iter().map(std_normal_cdf).collect())
}

/// `-2 sum [y log p + (1 - y) log(1 - p)]` with clamped `p`.
pub fn test_deviance(probs: &[f64], y: &[u8]) -> Result<f64> {
    if probs.len() != y.len() {
        return Err(Error::domain("probability and response lengths differ"));
    }
    let mut acc = 0.0;
    for (&p, &yi) in probs.iter().zip(y) {
        if p.is_nan() {
            return Err(Error::domain("NaN predicted probability"));
        }
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        acc += if yi == 1 { p.ln() } else { (-p).ln_1p() };
    }
    Ok(-2.0 * acc)
}
