//! Blocked, collapsed Gibbs sampler used as the MCMC reference.
//!
//! Each iteration updates every `gamma_j` from its conditional with `beta`
//! integrated out, draws `beta_S` for the active set `S` from its Gaussian
//! conditional (inactive coefficients are set to zero), and redraws the
//! latent utilities `z` from their truncated normal conditionals.
//!
//! The collapsed log marginal `log N_n(z; 0, I + nu2 X_S X_S^T)` is evaluated
//! through `B_S = I / nu2 + G_S` with the determinant lemma and Woodbury's
//! identity, so no n x n matrix is ever formed. Within a sweep the current
//! state's marginal is cached and only the alternative (add or drop `j`) is
//! evaluated, by bordering or deflating `B_S^{-1}` in O(|S|^2).

use faer::{Mat, MatRef};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{self, expit, sample_trunc_norm, std_normal_cdf};
use crate::linalg::{self, SpdFactor};
use crate::model::{validate_and_cache, Dataset, GramCache, Hyperparameters};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    /// Total iterations, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub thin: usize,
    pub chains: usize,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            iterations: 11_000,
            burn_in: 1_000,
            seed: 0,
            thin: 1,
            chains: 1,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::domain(format!(
                "burn-in {} must be below the iteration count {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 || self.chains == 0 {
            return Err(Error::domain("thin and chains must be at least 1"));
        }
        Ok(())
    }

    /// Stored draws per chain.
    pub fn kept_per_chain(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

#[derive(Debug, Clone)]
pub struct GibbsState {
    pub gamma: Vec<bool>,
    /// `{j : gamma_j = 1}` in ascending order.
    pub active: Vec<usize>,
    pub beta: Vec<f64>,
    pub z: Vec<f64>,
    /// `X^T z`.
    pub zeta: Vec<f64>,
    /// `log p(z | gamma)` for the current `z` and active set.
    pub log_marginal: f64,
}

impl GibbsState {
    /// State with the given mask, zero coefficients and latents `z`.
    pub fn new(dataset: &Dataset, gram: &GramCache, gamma: Vec<bool>, z: Vec<f64>, nu2: f64) -> Result<Self> {
        if gamma.len() != dataset.p() || z.len() != dataset.n() {
            return Err(Error::domain("state dimensions do not match the data"));
        }
        let active = active_set(&gamma);
        let zeta = linalg::mat_t_vec(dataset.x(), &z);
        let log_marginal = gaussian_constant(&z) + collapsed_part(&zeta, &active, gram, nu2)?;
        Ok(GibbsState {
            beta: vec![0.0; gamma.len()],
            gamma,
            active,
            z,
            zeta,
            log_marginal,
        })
    }
}

fn active_set(gamma: &[bool]) -> Vec<usize> {
    (0..gamma.len()).filter(|&j| gamma[j]).collect()
}

/// `-(n/2) log 2 pi - z^T z / 2`.
fn gaussian_constant(z: &[f64]) -> f64 {
    -kernels::half_log_2pi(z.len()) - 0.5 * linalg::dot(z, z)
}

fn b_matrix(active: &[usize], gram: &GramCache, nu2: f64) -> Mat<f64> {
    let s = active.len();
    Mat::from_fn(s, s, |a, b| {
        gram.g[(active[a], active[b])] + if a == b { 1.0 / nu2 } else { 0.0 }
    })
}

/// `-(|S| log nu2 + log det B_S) / 2 + zeta_S^T B_S^{-1} zeta_S / 2`.
fn collapsed_part(zeta: &[f64], active: &[usize], gram: &GramCache, nu2: f64) -> Result<f64> {
    if active.is_empty() {
        return Ok(0.0);
    }
    let factor = SpdFactor::new(b_matrix(active, gram, nu2).as_ref(), "B_S")?;
    let zeta_s: Vec<f64> = active.iter().map(|&j| zeta[j]).collect();
    let half = factor.solve_lower(&zeta_s);
    Ok(-0.5 * (active.len() as f64 * nu2.ln() + factor.log_det()) + 0.5 * linalg::dot(&half, &half))
}

/// Full `log N_n(z; 0, I + nu2 X_S X_S^T)` for active set `active`.
pub fn log_marginal_z(z: &[f64], active: &[usize], gram: &GramCache, dataset: &Dataset, nu2: f64) -> Result<f64> {
    if z.len() != dataset.n() {
        return Err(Error::domain("latent vector length differs from n"));
    }
    if let Some(&bad) = active.iter().find(|&&j| j >= dataset.p()) {
        return Err(Error::domain(format!("active index {bad} out of range")));
    }
    if !(nu2 > 0.0) {
        return Err(Error::domain(format!("nu2 must be positive, got {nu2}")));
    }
    let mut zeta = vec![0.0; dataset.p()];
    for &j in active {
        zeta[j] = linalg::dot(dataset.column(j), z);
    }
    Ok(gaussian_constant(z) + collapsed_part(&zeta, active, gram, nu2)?)
}

/// `B_S^{-1}` and derived quantities for the current active set, updated in
/// place as coordinates enter or leave.
struct ActiveBlock {
    idx: Vec<usize>,
    /// Row-major `|S| x |S|` inverse of `B_S`.
    inv: Vec<f64>,
    /// `B_S^{-1} zeta_S`.
    beta_hat: Vec<f64>,
    log_det: f64,
    quad: f64,
}

enum Alternative {
    Add {
        j: usize,
        inv_b: Vec<f64>,
        schur: f64,
        resid: f64,
        log_det: f64,
        quad: f64,
    },
    Drop {
        pos: usize,
        log_det: f64,
        quad: f64,
    },
}

impl Alternative {
    fn value(&self, size: usize, ln_nu2: f64) -> f64 {
        let (size, log_det, quad) = match self {
            Alternative::Add { log_det, quad, .. } => (size + 1, *log_det, *quad),
            Alternative::Drop { log_det, quad, .. } => (size - 1, *log_det, *quad),
        };
        -0.5 * (size as f64 * ln_nu2 + log_det) + 0.5 * quad
    }
}

impl ActiveBlock {
    fn new(active: &[usize], zeta: &[f64], gram: &GramCache, nu2: f64) -> Result<Self> {
        let s = active.len();
        if s == 0 {
            return Ok(ActiveBlock {
                idx: Vec::new(),
                inv: Vec::new(),
                beta_hat: Vec::new(),
                log_det: 0.0,
                quad: 0.0,
            });
        }
        let factor = SpdFactor::new(b_matrix(active, gram, nu2).as_ref(), "B_S")?;
        let inv_mat = factor.inverse();
        let zeta_s: Vec<f64> = active.iter().map(|&j| zeta[j]).collect();
        let beta_hat = factor.solve(&zeta_s);
        let quad = linalg::dot(&zeta_s, &beta_hat);
        let mut inv = vec![0.0; s * s];
        for a in 0..s {
            for b in 0..s {
                inv[a * s + b] = inv_mat[(a, b)];
            }
        }
        Ok(ActiveBlock {
            idx: active.to_vec(),
            inv,
            beta_hat,
            log_det: factor.log_det(),
            quad,
        })
    }

    fn size(&self) -> usize {
        self.idx.len()
    }

    fn value(&self, ln_nu2: f64) -> f64 {
        -0.5 * (self.size() as f64 * ln_nu2 + self.log_det) + 0.5 * self.quad
    }

    fn propose_add(&self, j: usize, zeta: &[f64], gram: &GramCache, nu2: f64) -> Result<Alternative> {
        let s = self.size();
        let b: Vec<f64> = self.idx.iter().map(|&k| gram.g[(k, j)]).collect();
        let inv_b: Vec<f64> = (0..s).map(|a| linalg::dot(&self.inv[a * s..(a + 1) * s], &b)).collect();
        let schur = 1.0 / nu2 + gram.g[(j, j)] - linalg::dot(&b, &inv_b);
        if !(schur > 0.0) {
            return Err(Error::Numerical {
                message: format!("non-positive Schur complement {schur} adding column {j}"),
                pivot: Some(s),
            });
        }
        let resid = zeta[j] - linalg::dot(&b, &self.beta_hat);
        Ok(Alternative::Add {
            j,
            log_det: self.log_det + schur.ln(),
            quad: self.quad + resid * resid / schur,
            inv_b,
            schur,
            resid,
        })
    }

    fn propose_drop(&self, pos: usize) -> Alternative {
        let s = self.size();
        let d = self.inv[pos * s + pos];
        let bh = self.beta_hat[pos];
        Alternative::Drop {
            pos,
            log_det: self.log_det + d.ln(),
            quad: self.quad - bh * bh / d,
        }
    }

    fn apply(&mut self, alt: Alternative) {
        let s = self.size();
        match alt {
            Alternative::Add {
                j,
                inv_b,
                schur,
                resid,
                log_det,
                quad,
            } => {
                let t = s + 1;
                let mut inv = vec![0.0; t * t];
                for a in 0..s {
                    for b in 0..s {
                        inv[a * t + b] = self.inv[a * s + b] + inv_b[a] * inv_b[b] / schur;
                    }
                    inv[a * t + s] = -inv_b[a] / schur;
                    inv[s * t + a] = -inv_b[a] / schur;
                }
                inv[s * t + s] = 1.0 / schur;
                for (bh, ib) in self.beta_hat.iter_mut().zip(&inv_b) {
                    *bh -= ib * resid / schur;
                }
                self.beta_hat.push(resid / schur);
                self.inv = inv;
                self.idx.push(j);
                self.log_det = log_det;
                self.quad = quad;
            }
            Alternative::Drop { pos, log_det, quad } => {
                let d = self.inv[pos * s + pos];
                let col: Vec<f64> = (0..s).map(|a| self.inv[a * s + pos]).collect();
                let t = s - 1;
                let mut inv = Vec::with_capacity(t * t);
                for a in (0..s).filter(|&a| a != pos) {
                    for b in (0..s).filter(|&b| b != pos) {
                        inv.push(self.inv[a * s + b] - col[a] * col[b] / d);
                    }
                }
                let bh_pos = self.beta_hat[pos];
                let beta_hat = (0..s)
                    .filter(|&a| a != pos)
                    .map(|a| self.beta_hat[a] - col[a] * bh_pos / d)
                    .collect();
                self.inv = inv;
                self.beta_hat = beta_hat;
                self.idx.remove(pos);
                self.log_det = log_det;
                self.quad = quad;
            }
        }
    }
}

/// One pass `j = 1..p` of collapsed updates `gamma_j | gamma_{-j}, z`.
///
/// Requires `state.zeta` to match `state.z`. Returns the coordinates that
/// flipped. On exit `state.log_marginal` holds the marginal of the new mask.
pub fn gamma_sweep<R: Rng + ?Sized>(
    state: &mut GibbsState,
    gram: &GramCache,
    dataset: &Dataset,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let nu2 = hyper.nu2;
    let ln_nu2 = nu2.ln();
    let (ln_rho, ln_1m_rho) = (hyper.rho.ln(), (-hyper.rho).ln_1p());
    let constant = gaussian_constant(&state.z);
    let mut block = ActiveBlock::new(&state.active, &state.zeta, gram, nu2)?;
    let mut current = constant + block.value(ln_nu2);
    let mut flipped = Vec::new();

    for j in 0..dataset.p() {
        let alt = if state.gamma[j] {
            let pos = block.idx.iter().position(|&k| k == j).expect("active index tracked");
            block.propose_drop(pos)
        } else {
            block.propose_add(j, &state.zeta, gram, nu2)?
        };
        let alternative = constant + alt.value(block.size(), ln_nu2);
        let (l1, l0) = if state.gamma[j] {
            (current + ln_rho, alternative + ln_1m_rho)
        } else {
            (alternative + ln_rho, current + ln_1m_rho)
        };
        let include = rng.random::<f64>() < expit(l1 - l0);
        if include != state.gamma[j] {
            state.gamma[j] = include;
            block.apply(alt);
            current = alternative;
            flipped.push(j);
        }
    }
    state.active = active_set(&state.gamma);
    state.log_marginal = current;
    Ok(flipped)
}

/// Draws `beta_S ~ N(B_S^{-1} zeta_S, B_S^{-1})`; inactive entries are zero.
pub fn sample_beta_active<R: Rng + ?Sized>(
    state: &GibbsState,
    gram: &GramCache,
    nu2: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut beta = vec![0.0; state.gamma.len()];
    let active = &state.active;
    if active.is_empty() {
        return Ok(beta);
    }
    let factor = SpdFactor::new(b_matrix(active, gram, nu2).as_ref(), "B_S")?;
    let zeta_s: Vec<f64> = active.iter().map(|&j| state.zeta[j]).collect();
    let mean = factor.solve(&zeta_s);
    let eps: Vec<f64> = (0..active.len()).map(|_| rng.sample(StandardNormal)).collect();
    let noise = factor.solve_upper(&eps);
    for (a, &j) in active.iter().enumerate() {
        beta[j] = mean[a] + noise[a];
    }
    Ok(beta)
}

/// Draws `z_i ~ N(x_i^T (gamma ⊙ beta), 1)` truncated by `y_i`, and
/// refreshes `zeta = X^T z`.
pub fn sample_latents<R: Rng + ?Sized>(state: &mut GibbsState, dataset: &Dataset, rng: &mut R) -> Result<()> {
    let mut eta = vec![0.0; dataset.n()];
    for &j in &state.active {
        let bj = state.beta[j];
        for (e, &x) in eta.iter_mut().zip(dataset.column(j)) {
            *e += x * bj;
        }
    }
    for (i, e) in eta.iter().enumerate() {
        state.z[i] = sample_trunc_norm(rng, *e, dataset.side(i))?;
    }
    state.zeta = linalg::mat_t_vec(dataset.x(), &state.z);
    Ok(())
}

/// Stored post-burn-in draws, one row per kept iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsDraws {
    pub p: usize,
    /// Row-major `rows x p`, entries 0/1.
    pub gamma: Vec<u8>,
    /// Row-major `rows x p`.
    pub beta: Vec<f64>,
    /// Number of times each coordinate flipped, over all iterations.
    pub flip_counts: Vec<u64>,
    pub config: GibbsConfig,
}

impl GibbsDraws {
    pub fn rows(&self) -> usize {
        if self.p == 0 {
            0
        } else {
            self.gamma.len() / self.p
        }
    }

    pub fn gamma_row(&self, r: usize) -> &[u8] {
        &self.gamma[r * self.p..(r + 1) * self.p]
    }

    pub fn beta_row(&self, r: usize) -> &[f64] {
        &self.beta[r * self.p..(r + 1) * self.p]
    }

    /// Builds a draw set from explicit rows (e.g. read back from CSV).
    pub fn from_rows(gamma_rows: Vec<Vec<u8>>, beta_rows: Vec<Vec<f64>>) -> Result<Self> {
        let p = gamma_rows.first().map_or(0, Vec::len);
        if gamma_rows.len() != beta_rows.len()
            || gamma_rows.iter().any(|r| r.len() != p)
            || beta_rows.iter().any(|r| r.len() != p)
        {
            return Err(Error::validation("draw rows have inconsistent shapes", vec![]));
        }
        let rows = gamma_rows.len();
        Ok(GibbsDraws {
            p,
            gamma: gamma_rows.concat(),
            beta: beta_rows.concat(),
            flip_counts: vec![0; p],
            config: GibbsConfig {
                iterations: rows,
                burn_in: 0,
                seed: 0,
                thin: 1,
                chains: 1,
            },
        })
    }
}

/// Random stream for chain `chain` under `seed`.
pub fn chain_rng(seed: u64, chain: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain);
    rng
}

/// Runs `config.chains` independent chains and concatenates their draws in
/// chain order.
pub fn run_chain(dataset: &Dataset, hyper: &Hyperparameters, config: &GibbsConfig) -> Result<GibbsDraws> {
    let gram = validate_and_cache(dataset)?;
    run_chain_with_gram(dataset, &gram, hyper, config)
}

pub fn run_chain_with_gram(
    dataset: &Dataset,
    gram: &GramCache,
    hyper: &Hyperparameters,
    config: &GibbsConfig,
) -> Result<GibbsDraws> {
    config.validate()?;
    let chains: Vec<GibbsDraws> = (0..config.chains as u64)
        .into_par_iter()
        .map(|c| {
            let mut rng = chain_rng(config.seed, c);
            single_chain(dataset, gram, hyper, config, &mut rng)
        })
        .collect::<Result<_>>()?;
    let p = dataset.p();
    let mut merged = GibbsDraws {
        p,
        gamma: Vec::new(),
        beta: Vec::new(),
        flip_counts: vec![0; p],
        config: *config,
    };
    for chain in chains {
        merged.gamma.extend(chain.gamma);
        merged.beta.extend(chain.beta);
        for (total, c) in merged.flip_counts.iter_mut().zip(chain.flip_counts) {
            *total += c;
        }
    }
    Ok(merged)
}

fn single_chain<R: Rng + ?Sized>(
    dataset: &Dataset,
    gram: &GramCache,
    hyper: &Hyperparameters,
    config: &GibbsConfig,
    rng: &mut R,
) -> Result<GibbsDraws> {
    let p = dataset.p();
    let gamma: Vec<bool> = (0..p).map(|_| rng.random::<f64>() < hyper.rho).collect();
    let z = (0..dataset.n())
        .map(|i| sample_trunc_norm(rng, 0.0, dataset.side(i)))
        .collect::<Result<Vec<_>>>()?;
    let mut state = GibbsState::new(dataset, gram, gamma, z, hyper.nu2)?;

    let kept = config.kept_per_chain();
    let mut draws = GibbsDraws {
        p,
        gamma: Vec::with_capacity(kept * p),
        beta: Vec::with_capacity(kept * p),
        flip_counts: vec![0; p],
        config: *config,
    };
    for t in 1..=config.iterations {
        for j in gamma_sweep(&mut state, gram, dataset, hyper, rng)? {
            draws.flip_counts[j] += 1;
        }
        if cfg!(debug_assertions) && t % 100 == 0 {
            let fresh = log_marginal_z(&state.z, &state.active, gram, dataset, hyper.nu2)?;
            debug_assert!(
                (fresh - state.log_marginal).abs() < 1e-9 * (1.0 + fresh.abs()),
                "log-marginal cache drifted: cached {} vs {}",
                state.log_marginal,
                fresh
            );
        }
        state.beta = sample_beta_active(&state, gram, hyper.nu2, rng)?;
        sample_latents(&mut state, dataset, rng)?;
        if t > config.burn_in && (t - config.burn_in) % config.thin == 0 && draws.rows() < kept {
            draws.gamma.extend(state.gamma.iter().map(|&g| g as u8));
            draws.beta.extend_from_slice(&state.beta);
        }
    }
    Ok(draws)
}

/// Posterior inclusion probabilities and posterior means of `gamma_j beta_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub pip: Vec<f64>,
    pub mean_masked_coef: Vec<f64>,
}

pub fn posterior_summaries(draws: &GibbsDraws) -> Result<PosteriorSummary> {
    let rows = draws.rows();
    if rows == 0 {
        return Err(Error::domain("no stored draws"));
    }
    let p = draws.p;
    let mut pip = vec![0.0; p];
    let mut coef = vec![0.0; p];
    for r in 0..rows {
        let g = draws.gamma_row(r);
        let b = draws.beta_row(r);
        for j in 0..p {
            pip[j] += g[j] as f64;
            coef[j] += g[j] as f64 * b[j];
        }
    }
    let scale = 1.0 / rows as f64;
    pip.iter_mut().for_each(|v| *v *= scale);
    coef.iter_mut().for_each(|v| *v *= scale);
    Ok(PosteriorSummary {
        pip,
        mean_masked_coef: coef,
    })
}

/// Draw-averaged `Phi(x_new^T (gamma ⊙ beta))`.
pub fn predictive_probability(draws: &GibbsDraws, x_new: &[f64]) -> Result<f64> {
    let rows = draws.rows();
    if rows == 0 {
        return Err(Error::domain("no stored draws"));
    }
    if x_new.len() != draws.p {
        return Err(Error::domain(format!(
            "covariate vector has length {} but the model has {} features",
            x_new.len(),
            draws.p
        )));
    }
    let total: f64 = (0..rows)
        .map(|r| {
            let g = draws.gamma_row(r);
            let b = draws.beta_row(r);
            let eta: f64 = (0..draws.p).map(|j| x_new[j] * g[j] as f64 * b[j]).sum();
            std_normal_cdf(eta)
        })
        .sum();
    Ok(total / rows as f64)
}

/// [`predictive_probability`] for every row of `x`, skipping inactive
/// coordinates of each draw.
pub fn predict_rows(draws: &GibbsDraws, x: MatRef<'_, f64>) -> Result<Vec<f64>> {
    let rows = draws.rows();
    if rows == 0 {
        return Err(Error::domain("no stored draws"));
    }
    if x.ncols() != draws.p {
        return Err(Error::domain(format!(
            "design has {} columns but the model has {} features",
            x.ncols(),
            draws.p
        )));
    }
    let mut total = vec![0.0; x.nrows()];
    let mut eta = vec![0.0; x.nrows()];
    for r in 0..rows {
        eta.iter_mut().for_each(|e| *e = 0.0);
        let g = draws.gamma_row(r);
        let b = draws.beta_row(r);
        for j in (0..draws.p).filter(|&j| g[j] != 0) {
            for (e, &xij) in eta.iter_mut().zip(linalg::col(x, j)) {
                *e += xij * b[j];
            }
        }
        for (t, &e) in total.iter_mut().zip(&eta) {
            *t += std_normal_cdf(e);
        }
    }
    Ok(total.into_iter().map(|t| t / rows as f64).collect())
}
