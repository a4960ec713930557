//! Mean-field coordinate ascent for sparse probit regression.
//!
//! The approximation is `q(beta) q(z) prod_j q(gamma_j)` with a Gaussian
//! `q(beta) = N(mu, Sigma)`, independent truncated normals `q(z_i)` located at
//! `m_i = x_i^T W mu`, and Bernoulli `q(gamma_j)` with mean `w_j`. Each sweep
//! refreshes `Omega`, then `(Sigma, mu)`, then `(m, z_bar)`, then every `w_j`
//! in ascending order using the already-updated entries (Gauss-Seidel), and
//! finally re-centres `(m, z_bar)` on the new `w` before the ELBO is recorded.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{self, expit, logit};
use crate::linalg::{self, SpdFactor};
use crate::model::{validate_and_cache, Dataset, GramCache, Hyperparameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvergenceRule {
    /// Relative ELBO change below `tol_elbo`.
    Elbo,
    /// Max relative change in `(mu, w)` below `tol_param`.
    Param,
    /// Whichever of the two fires first.
    Either,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaviConfig {
    pub max_iter: usize,
    pub tol_elbo: f64,
    pub tol_param: f64,
    pub convergence_rule: ConvergenceRule,
}

impl Default for CaviConfig {
    fn default() -> Self {
        CaviConfig {
            max_iter: 500,
            tol_elbo: 1e-6,
            tol_param: 1e-6,
            convergence_rule: ConvergenceRule::Either,
        }
    }
}

impl CaviConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::domain("max_iter must be at least 1"));
        }
        if !(self.tol_elbo > 0.0 && self.tol_param > 0.0) {
            return Err(Error::domain("tolerances must be positive"));
        }
        Ok(())
    }
}

/// The CAVI iterate.
#[derive(Debug, Clone)]
pub struct VariationalState {
    pub mu: Vec<f64>,
    pub sigma: Mat<f64>,
    /// `log det Sigma`, kept from the factorization that produced `sigma`.
    pub log_det_sigma: f64,
    pub w: Vec<f64>,
    pub z_bar: Vec<f64>,
    pub m: Vec<f64>,
    pub iteration: usize,
}

impl VariationalState {
    /// `w ⊙ mu`, the plug-in coefficient vector.
    pub fn masked_coefficients(&self) -> Vec<f64> {
        self.w.iter().zip(&self.mu).map(|(w, m)| w * m).collect()
    }
}

/// The six ELBO contributions; the entropies are `-E_q[log q]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ElboTerms {
    pub likelihood: f64,
    pub prior_beta: f64,
    pub prior_gamma: f64,
    pub entropy_beta: f64,
    pub entropy_z: f64,
    pub entropy_gamma: f64,
}

impl ElboTerms {
    pub fn total(&self) -> f64 {
        self.likelihood
            + self.prior_beta
            + self.prior_gamma
            + self.entropy_beta
            + self.entropy_z
            + self.entropy_gamma
    }
}

#[derive(Debug, Clone, Default)]
pub struct ElboTrace {
    pub values: Vec<f64>,
    pub terms: Vec<ElboTerms>,
}

impl ElboTrace {
    /// Largest relative decrease between consecutive sweeps, measured as
    /// `(prev - next) / (1 + |prev|)`; zero or negative when monotone.
    pub fn max_relative_decrease(&self) -> f64 {
        self.values
            .windows(2)
            .map(|w| (w[0] - w[1]) / (1.0 + w[0].abs()))
            .fold(f64::NEG_INFINITY, f64::max)
            .max(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct CaviFit {
    pub state: VariationalState,
    pub trace: ElboTrace,
    pub converged: bool,
}

/// `Omega = E[gamma gamma^T] = W (I - W) + w w^T`.
pub fn compute_omega(w: &[f64]) -> Result<Mat<f64>> {
    check_unit_interval(w)?;
    let p = w.len();
    Ok(Mat::from_fn(p, p, |j, k| if j == k { w[j] } else { w[j] * w[k] }))
}

fn check_unit_interval(w: &[f64]) -> Result<()> {
    match w.iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(j) => Err(Error::domain(format!("w[{j}] = {} outside [0, 1]", w[j]))),
        None => Ok(()),
    }
}

/// Optimal Gaussian factor `q(beta) = N(mu, Sigma)`.
#[derive(Debug, Clone)]
pub struct BetaFactor {
    pub mu: Vec<f64>,
    pub sigma: Mat<f64>,
    pub log_det_sigma: f64,
}

/// `Sigma = (I / nu2 + G ⊙ Omega)^{-1}`, `mu = Sigma W X^T z_bar`.
pub fn update_beta_factor(
    dataset: &Dataset,
    gram: &GramCache,
    omega: &Mat<f64>,
    w: &[f64],
    z_bar: &[f64],
    nu2: f64,
) -> Result<BetaFactor> {
    let xt_zbar = linalg::mat_t_vec(dataset.x(), z_bar);
    beta_factor_from(gram, omega, w, &xt_zbar, nu2)
}

fn beta_factor_from(
    gram: &GramCache,
    omega: &Mat<f64>,
    w: &[f64],
    xt_zbar: &[f64],
    nu2: f64,
) -> Result<BetaFactor> {
    if !(nu2 > 0.0) {
        return Err(Error::domain(format!("nu2 must be positive, got {nu2}")));
    }
    let p = gram.p();
    if omega.nrows() != p || w.len() != p || xt_zbar.len() != p {
        return Err(Error::domain("dimension mismatch in q(beta) update"));
    }
    let inv_nu2 = 1.0 / nu2;
    let g = &gram.g;
    let precision = Mat::from_fn(p, p, |j, k| {
        g[(j, k)] * omega[(j, k)] + if j == k { inv_nu2 } else { 0.0 }
    });
    let factor = SpdFactor::new(precision.as_ref(), "q(beta) precision")?;
    let sigma = factor.inverse();
    let rhs: Vec<f64> = w.iter().zip(xt_zbar).map(|(w, v)| w * v).collect();
    let mu = linalg::mat_vec(sigma.as_ref(), &rhs);
    Ok(BetaFactor {
        mu,
        sigma,
        log_det_sigma: -factor.log_det(),
    })
}

/// `m = X (w ⊙ mu)` and `z_bar_i = E[z_i]` under N(m_i, 1) truncated by y_i.
pub fn update_latent_means(dataset: &Dataset, w: &[f64], mu: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if w.len() != dataset.p() || mu.len() != dataset.p() {
        return Err(Error::domain("dimension mismatch in q(z) update"));
    }
    let coef: Vec<f64> = w.iter().zip(mu).map(|(w, m)| w * m).collect();
    let m = linalg::mat_vec(dataset.x(), &coef);
    let z_bar = m
        .iter()
        .enumerate()
        .map(|(i, &mi)| kernels::trunc_norm_mean(mi, dataset.side(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok((m, z_bar))
}

/// `H = (Sigma + mu mu^T) ⊙ G`.
fn second_moment_gram(gram: &GramCache, sigma: &Mat<f64>, mu: &[f64]) -> Mat<f64> {
    let p = mu.len();
    let g = &gram.g;
    Mat::from_fn(p, p, |j, k| (sigma[(j, k)] + mu[j] * mu[k]) * g[(j, k)])
}

/// Result of one Gauss-Seidel pass over the inclusion probabilities.
#[derive(Debug, Clone)]
pub struct InclusionUpdate {
    pub w: Vec<f64>,
    /// `eta_j` as evaluated when coordinate j was visited.
    pub eta: Vec<f64>,
}

/// Gauss-Seidel pass `w_j <- expit(eta_j)`, j ascending, where
/// `eta_j = logit(rho) + mu_j X_j^T z_bar - (Sigma_jj + mu_j^2) G_jj / 2
///          - sum_{k != j} (Sigma_jk + mu_j mu_k) w_k G_jk`
/// is evaluated with the current (partly updated) `w`.
pub fn update_inclusion_logits(
    gram: &GramCache,
    dataset: &Dataset,
    state: &VariationalState,
    rho: f64,
) -> Result<InclusionUpdate> {
    let xt_zbar = linalg::mat_t_vec(dataset.x(), &state.z_bar);
    let h = second_moment_gram(gram, &state.sigma, &state.mu);
    inclusion_pass(&h, &xt_zbar, state, rho)
}

pub fn update_inclusion(
    gram: &GramCache,
    dataset: &Dataset,
    state: &VariationalState,
    rho: f64,
) -> Result<Vec<f64>> {
    Ok(update_inclusion_logits(gram, dataset, state, rho)?.w)
}

fn inclusion_pass(h: &Mat<f64>, xt_zbar: &[f64], state: &VariationalState, rho: f64) -> Result<InclusionUpdate> {
    let prior_logit = logit(rho)?;
    let mut w = state.w.clone();
    let mut eta = vec![0.0; w.len()];
    for j in 0..w.len() {
        let hj = linalg::col(h.as_ref(), j);
        let cross = linalg::dot(hj, &w) - hj[j] * w[j];
        eta[j] = prior_logit + state.mu[j] * xt_zbar[j] - 0.5 * hj[j] - cross;
        w[j] = expit(eta[j]);
    }
    Ok(InclusionUpdate { w, eta })
}

/// `x log x` with `0 log 0 = 0`.
fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Closed-form ELBO of `state`, term by term.
pub fn elbo_terms(
    dataset: &Dataset,
    gram: &GramCache,
    state: &VariationalState,
    hyper: &Hyperparameters,
) -> Result<ElboTerms> {
    let xt_zbar = linalg::mat_t_vec(dataset.x(), &state.z_bar);
    let h = second_moment_gram(gram, &state.sigma, &state.mu);
    elbo_terms_from(dataset, &h, &xt_zbar, state, hyper)
}

pub fn compute_elbo(
    dataset: &Dataset,
    gram: &GramCache,
    state: &VariationalState,
    hyper: &Hyperparameters,
) -> Result<f64> {
    Ok(elbo_terms(dataset, gram, state, hyper)?.total())
}

fn elbo_terms_from(
    dataset: &Dataset,
    h: &Mat<f64>,
    xt_zbar: &[f64],
    state: &VariationalState,
    hyper: &Hyperparameters,
) -> Result<ElboTerms> {
    let n = dataset.n();
    let p = state.w.len();
    let w = &state.w;
    let mu = &state.mu;

    let s_zz: f64 = state
        .m
        .iter()
        .zip(&state.z_bar)
        .map(|(m, z)| 1.0 + m * z)
        .sum();
    let cross: f64 = (0..p).map(|j| mu[j] * w[j] * xt_zbar[j]).sum();
    // tr[(G ⊙ Omega) C] = w^T H w - sum_j H_jj w_j^2 + sum_j H_jj w_j
    let mut trace = 0.0;
    for j in 0..p {
        let hj = linalg::col(h.as_ref(), j);
        trace += w[j] * linalg::dot(hj, w) + hj[j] * (w[j] - w[j] * w[j]);
    }
    let likelihood = -kernels::half_log_2pi(n) - 0.5 * (s_zz - 2.0 * cross + trace);

    let sigma_trace: f64 = (0..p).map(|j| state.sigma[(j, j)]).sum();
    let mu_sq: f64 = mu.iter().map(|v| v * v).sum();
    let prior_beta =
        -kernels::half_log_2pi(p) - 0.5 * p as f64 * hyper.nu2.ln() - (sigma_trace + mu_sq) / (2.0 * hyper.nu2);

    let (log_rho, log_1m_rho) = (hyper.rho.ln(), (-hyper.rho).ln_1p());
    let prior_gamma: f64 = w.iter().map(|&wj| wj * log_rho + (1.0 - wj) * log_1m_rho).sum();

    let entropy_beta = kernels::half_log_2pi(p) + 0.5 * state.log_det_sigma + 0.5 * p as f64;

    let mut entropy_z = kernels::half_log_2pi(n);
    for (i, &mi) in state.m.iter().enumerate() {
        let side = dataset.side(i);
        entropy_z += 0.5 * kernels::trunc_norm_residual_var(mi, side)?;
        entropy_z += kernels::log_std_normal_cdf(side.sign() * mi)?;
    }

    let entropy_gamma: f64 = -w.iter().map(|&wj| xlogx(wj) + xlogx(1.0 - wj)).sum::<f64>();

    Ok(ElboTerms {
        likelihood,
        prior_beta,
        prior_gamma,
        entropy_beta,
        entropy_z,
        entropy_gamma,
    })
}

fn max_relative_change(old: &[f64], new: &[f64]) -> f64 {
    old.iter()
        .zip(new)
        .map(|(a, b)| (b - a).abs() / (1.0 + a.abs()))
        .fold(0.0, f64::max)
}

/// Runs CAVI from `w = rho`, `mu = 0`.
pub fn fit(dataset: &Dataset, hyper: &Hyperparameters, config: &CaviConfig) -> Result<CaviFit> {
    let gram = validate_and_cache(dataset)?;
    fit_with_gram(dataset, &gram, hyper, config)
}

/// [`fit`] with a precomputed Gram matrix.
pub fn fit_with_gram(
    dataset: &Dataset,
    gram: &GramCache,
    hyper: &Hyperparameters,
    config: &CaviConfig,
) -> Result<CaviFit> {
    config.validate()?;
    let p = dataset.p();
    if gram.p() != p {
        return Err(Error::domain("Gram matrix does not match the design"));
    }
    let w0 = vec![hyper.rho; p];
    let mu0 = vec![0.0; p];
    let (m0, z_bar0) = update_latent_means(dataset, &w0, &mu0)?;
    let mut state = VariationalState {
        mu: mu0,
        sigma: Mat::zeros(p, p),
        log_det_sigma: 0.0,
        w: w0,
        z_bar: z_bar0,
        m: m0,
        iteration: 0,
    };
    let mut trace = ElboTrace::default();
    let mut converged = false;

    for it in 1..=config.max_iter {
        let prev_mu = state.mu.clone();
        let prev_w = state.w.clone();

        let omega = compute_omega(&state.w)?;
        let xt_zbar = linalg::mat_t_vec(dataset.x(), &state.z_bar);
        let beta = beta_factor_from(gram, &omega, &state.w, &xt_zbar, hyper.nu2)?;
        state.mu = beta.mu;
        state.sigma = beta.sigma;
        state.log_det_sigma = beta.log_det_sigma;

        let (m, z_bar) = update_latent_means(dataset, &state.w, &state.mu)?;
        state.m = m;
        state.z_bar = z_bar;

        let h = second_moment_gram(gram, &state.sigma, &state.mu);
        let xt_zbar = linalg::mat_t_vec(dataset.x(), &state.z_bar);
        state.w = inclusion_pass(&h, &xt_zbar, &state, hyper.rho)?.w;

        let (m, z_bar) = update_latent_means(dataset, &state.w, &state.mu)?;
        state.m = m;
        state.z_bar = z_bar;
        state.iteration = it;

        let xt_zbar = linalg::mat_t_vec(dataset.x(), &state.z_bar);
        let terms = elbo_terms_from(dataset, &h, &xt_zbar, &state, hyper)?;
        let value = terms.total();

        let elbo_done = trace
            .values
            .last()
            .is_some_and(|&prev| (value - prev).abs() <= config.tol_elbo * (1.0 + prev.abs()));
        let param_done = max_relative_change(&prev_mu, &state.mu)
            .max(max_relative_change(&prev_w, &state.w))
            <= config.tol_param;
        trace.values.push(value);
        trace.terms.push(terms);

        converged = match config.convergence_rule {
            ConvergenceRule::Elbo => elbo_done,
            ConvergenceRule::Param => param_done,
            ConvergenceRule::Either => elbo_done || param_done,
        };
        if converged {
            break;
        }
    }
    if !converged {
        log::warn!("CAVI stopped after {} sweeps without converging", config.max_iter);
    }
    Ok(CaviFit {
        state,
        trace,
        converged,
    })
}
