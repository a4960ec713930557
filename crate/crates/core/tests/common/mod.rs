//! Reference implementations used as test oracles. Everything here is
//! written from the definitions with plain loops and shares no code with the
//! library beyond the data containers.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sparse_probit::cavi::VariationalState;
use sparse_probit::model::Dataset;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gaussian design and probit responses from a random sparse truth.
pub fn random_dataset<R: Rng>(rng: &mut R, n: usize, p: usize) -> Dataset {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let beta: Vec<f64> = (0..p)
        .map(|_| if rng.random::<f64>() < 0.3 { rng.random_range(-2.0..2.0) } else { 0.0 })
        .collect();
    let y = rows
        .iter()
        .map(|r| {
            let eta: f64 = r.iter().zip(&beta).map(|(a, b)| a * b).sum();
            (eta + rng.sample::<f64, _>(StandardNormal) > 0.0) as u8
        })
        .collect();
    Dataset::from_rows(&rows, y).unwrap()
}

// ---- quadrature -----------------------------------------------------------

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// 15-point Kronrod estimate and its difference from the embedded 7-point
/// Gauss rule.
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for i in 0..7 {
        let x = h * XGK[i];
        let s = f(c - x) + f(c + x);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, (k - g).abs() * h)
}

/// Adaptive Gauss-Kronrod quadrature with interval bisection. A panel is
/// accepted once its error estimate is below its share of `tol` or at the
/// rounding level of its own value.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (v, err) = gk15(f, a, b);
        if err <= tol.max(1e-15 * v.abs()) || depth == 0 {
            return v;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, 0.5 * tol, depth - 1) + rec(f, m, b, 0.5 * tol, depth - 1)
    }
    rec(f, a, b, tol, 30)
}

/// First and second moments of N(m, 1) truncated to z > 0 (`positive`) or
/// z <= 0, by quadrature of the unnormalized density.
pub fn truncated_moments_quadrature(m: f64, positive: bool) -> (f64, f64) {
    // reflect so the support is the positive half-line
    let mu = if positive { m } else { -m };
    let gap = (-mu).max(0.0);
    let dens = |z: f64| (-0.5 * ((z - mu) * (z - mu) - gap * gap)).exp();
    let hi = mu.max(0.0) + 40.0;
    // split at the mode so the peak is resolved
    let knots = [0.0, mu.max(0.0), hi];
    let q = |g: &dyn Fn(f64) -> f64| integrate(&g, knots[0], knots[1], 1e-15) + integrate(&g, knots[1], knots[2], 1e-15);
    let z0 = q(&|z| dens(z));
    let z1 = q(&|z| z * dens(z));
    let z2 = q(&|z| z * z * dens(z));
    let mean = z1 / z0;
    let second = z2 / z0;
    if positive {
        (mean, second)
    } else {
        (-mean, second)
    }
}

// ---- dense Gaussian -------------------------------------------------------

/// Lower Cholesky factor by the textbook triple loop.
pub fn naive_cholesky(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut d = a[j][j];
        for k in 0..j {
            d -= l[j][k] * l[j][k];
        }
        assert!(d > 0.0, "matrix not positive definite");
        l[j][j] = d.sqrt();
        for i in j + 1..n {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            l[i][j] = s / l[j][j];
        }
    }
    l
}

/// `log N_n(z; 0, A)` via a dense Cholesky of `A`.
pub fn dense_gaussian_log_density(z: &[f64], a: &[Vec<f64>]) -> f64 {
    let n = z.len();
    let l = naive_cholesky(a);
    let mut u = z.to_vec();
    for i in 0..n {
        let mut s = u[i];
        for k in 0..i {
            s -= l[i][k] * u[k];
        }
        u[i] = s / l[i][i];
    }
    let logdet: f64 = 2.0 * (0..n).map(|i| l[i][i].ln()).sum::<f64>();
    let quad: f64 = u.iter().map(|v| v * v).sum();
    -0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * logdet - 0.5 * quad
}

/// `log p(z | S)` from the n x n covariance `I + nu2 X_S X_S^T`.
pub fn dense_log_marginal(ds: &Dataset, z: &[f64], active: &[usize], nu2: f64) -> f64 {
    let n = ds.n();
    let x = ds.x();
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            let mut s = 0.0;
            for &j in active {
                s += x[(i, j)] * x[(k, j)];
            }
            a[i][k] = nu2 * s + if i == k { 1.0 } else { 0.0 };
        }
    }
    dense_gaussian_log_density(z, &a)
}

/// Marginal inclusion probabilities of `p(gamma | z)` by summing over all
/// `2^p` masks.
pub fn enumerate_inclusion(ds: &Dataset, z: &[f64], nu2: f64, rho: f64) -> Vec<f64> {
    let p = ds.p();
    let mut logs = Vec::with_capacity(1 << p);
    for mask in 0..(1usize << p) {
        let active: Vec<usize> = (0..p).filter(|&j| mask >> j & 1 == 1).collect();
        let s = active.len() as f64;
        logs.push(dense_log_marginal(ds, z, &active, nu2) + s * rho.ln() + (p as f64 - s) * (1.0 - rho).ln());
    }
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    (0..p)
        .map(|j| {
            weights
                .iter()
                .enumerate()
                .filter(|(mask, _)| mask >> j & 1 == 1)
                .map(|(_, w)| w)
                .sum::<f64>()
                / total
        })
        .collect()
}

// ---- CAVI pieces ----------------------------------------------------------

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Inclusion logits written as the literal sums over `i` and `k != j`,
/// visiting j in ascending order and replacing `w_j` by its logistic
/// transform before moving on.
pub fn eta_double_loop(ds: &Dataset, st: &VariationalState, rho: f64) -> (Vec<f64>, Vec<f64>) {
    let (n, p) = (ds.n(), ds.p());
    let x = ds.x();
    let g = |j: usize, k: usize| (0..n).map(|i| x[(i, j)] * x[(i, k)]).sum::<f64>();
    let mut w = st.w.clone();
    let mut etas = vec![0.0; p];
    for j in 0..p {
        let xz: f64 = (0..n).map(|i| x[(i, j)] * st.z_bar[i]).sum();
        let mut eta = logit(rho) + st.mu[j] * xz - 0.5 * (st.sigma[(j, j)] + st.mu[j] * st.mu[j]) * g(j, j);
        for k in 0..p {
            if k != j {
                eta -= (st.sigma[(j, k)] + st.mu[j] * st.mu[k]) * w[k] * g(j, k);
            }
        }
        etas[j] = eta;
        w[j] = 1.0 / (1.0 + (-eta).exp());
    }
    (etas, w)
}

/// Random symmetric positive-definite `p x p` matrix.
pub fn random_spd<R: Rng>(rng: &mut R, p: usize) -> faer::Mat<f64> {
    let a = faer::Mat::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    faer::Mat::from_fn(p, p, |i, j| {
        let s: f64 = (0..p).map(|k| a[(i, k)] * a[(j, k)]).sum();
        s / p as f64 + if i == j { 0.5 } else { 0.0 }
    })
}
