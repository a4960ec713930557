//! Scalar Gaussian primitives used by both inference engines: normal CDF in
//! log space, the inverse Mills ratio, moments of the unit-variance normal
//! truncated to a half-line, and an exact sampler for it.

use std::f64::consts::{PI, SQRT_2};

use rand::distr::Open01;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};

/// ln(sqrt(2 pi))
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this argument the inverse Mills ratio and log CDF switch to the
/// continued-fraction representation of the Mills ratio.
const TAIL_SWITCH: f64 = -10.0;

/// Inverse-CDF sampling is used while |m| stays within this bound.
const INVERSE_CDF_LIMIT: f64 = 5.0;

/// Half-line a latent utility is restricted to: `(0, inf)` when the observed
/// response is 1 and `(-inf, 0]` when it is 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TruncationSide {
    Positive,
    NonPositive,
}

impl TruncationSide {
    pub fn from_response(y: u8) -> Result<Self> {
        match y {
            1 => Ok(TruncationSide::Positive),
            0 => Ok(TruncationSide::NonPositive),
            other => Err(Error::domain(format!("response {other} is not binary"))),
        }
    }

    /// The sign indicator `k = 2y - 1`.
    pub fn sign(self) -> f64 {
        match self {
            TruncationSide::Positive => 1.0,
            TruncationSide::NonPositive => -1.0,
        }
    }

    pub fn from_sign(k: f64) -> Result<Self> {
        if k == 1.0 {
            Ok(TruncationSide::Positive)
        } else if k == -1.0 {
            Ok(TruncationSide::NonPositive)
        } else {
            Err(Error::domain(format!("sign indicator {k} is not +1 or -1")))
        }
    }

    pub fn contains(self, z: f64) -> bool {
        match self {
            TruncationSide::Positive => z > 0.0,
            TruncationSide::NonPositive => z <= 0.0,
        }
    }
}

fn ensure_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be finite, got {v}")))
    }
}

/// Standard normal density.
pub fn std_normal_pdf(t: f64) -> f64 {
    (-0.5 * t * t - LN_SQRT_2PI).exp()
}

/// Standard normal CDF. Accurate in relative terms in the lower tail.
pub fn std_normal_cdf(t: f64) -> f64 {
    0.5 * erfc(-t / SQRT_2)
}

/// Continued-fraction tail `h(x) = 1/(x + 2/(x + 3/(x + ...)))`, x > 0.
///
/// The Mills ratio is `R(x) = 1/(x + h(x))`, so `lambda(-x) = x + h(x)` and
/// `h(x)` itself is the mean of N(-x, 1) truncated to the positive half-line.
fn mills_tail(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = TINY;
    let mut c = f;
    let mut d = 0.0;
    for k in 1..=5000 {
        let a = k as f64;
        d = x + a * d;
        if d == 0.0 {
            d = TINY;
        }
        d = 1.0 / d;
        c = x + a / c;
        if c == 0.0 {
            c = TINY;
        }
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 2.0 * f64::EPSILON {
            break;
        }
    }
    f
}

/// `log Phi(t)`.
pub fn log_std_normal_cdf(t: f64) -> Result<f64> {
    if t.is_nan() || t == f64::NEG_INFINITY {
        return Err(Error::domain(format!("log_std_normal_cdf argument {t}")));
    }
    if t == f64::INFINITY {
        return Ok(0.0);
    }
    Ok(if t >= 0.0 {
        (-0.5 * erfc(t / SQRT_2)).ln_1p()
    } else if t >= TAIL_SWITCH {
        (0.5 * erfc(-t / SQRT_2)).ln()
    } else {
        let x = -t;
        -0.5 * x * x - LN_SQRT_2PI - (x + mills_tail(x)).ln()
    })
}

/// Inverse Mills ratio `lambda(t) = phi(t) / Phi(t)`.
pub fn inverse_mills(t: f64) -> Result<f64> {
    ensure_finite("inverse_mills argument", t)?;
    if t < TAIL_SWITCH {
        let x = -t;
        return Ok(x + mills_tail(x));
    }
    let v = std_normal_pdf(t) / std_normal_cdf(t);
    // phi(t) underflows past t ~ 38.5 while the true value stays positive.
    Ok(v.max(f64::from_bits(1)))
}

/// Mean of N(m, 1) truncated to `side`: `m + k lambda(k m)`.
pub fn trunc_norm_mean(m: f64, side: TruncationSide) -> Result<f64> {
    ensure_finite("truncated normal location", m)?;
    let k = side.sign();
    let t = k * m;
    if t < TAIL_SWITCH {
        // m + k (x + h(x)) with x = -k m collapses to k h(x).
        Ok(k * mills_tail(-t))
    } else {
        Ok(m + k * inverse_mills(t)?)
    }
}

/// Second moment `1 + m z_bar` of the truncated normal whose mean is `z_bar`.
pub fn trunc_norm_second_moment(m: f64, z_bar: f64) -> Result<f64> {
    ensure_finite("truncated normal location", m)?;
    ensure_finite("truncated normal mean", z_bar)?;
    Ok(1.0 + m * z_bar)
}

/// `E[(z - m)^2] = 1 - k m lambda(k m)` under N(m, 1) truncated to `side`.
pub fn trunc_norm_residual_var(m: f64, side: TruncationSide) -> Result<f64> {
    ensure_finite("truncated normal location", m)?;
    let t = side.sign() * m;
    Ok(1.0 - t * inverse_mills(t)?)
}

/// Draws from N(m, 1) restricted to `side`.
///
/// Inverse-CDF sampling is used for |m| <= 5. Deeper in the tail the
/// positive-side case uses exponential-proposal rejection (Robert 1995) and
/// the bulk case plain rejection from the untruncated normal.
pub fn sample_trunc_norm<R: Rng + ?Sized>(rng: &mut R, m: f64, side: TruncationSide) -> Result<f64> {
    ensure_finite("truncated normal location", m)?;
    Ok(match side {
        TruncationSide::Positive => sample_positive(rng, m),
        TruncationSide::NonPositive => -sample_positive(rng, -m),
    })
}

fn sample_positive<R: Rng + ?Sized>(rng: &mut R, m: f64) -> f64 {
    if m < -INVERSE_CDF_LIMIT {
        // z = m + e with e >= a = -m; proposing e = a + xi leaves z = xi.
        let a = -m;
        let rate = 0.5 * (a + (a * a + 4.0).sqrt());
        loop {
            let xi: f64 = rng.sample::<f64, _>(Exp1) / rate;
            let u: f64 = rng.sample(Open01);
            let e = a + xi;
            if u.ln() <= -0.5 * (e - rate) * (e - rate) && xi > 0.0 {
                return xi;
            }
        }
    } else if m > INVERSE_CDF_LIMIT {
        loop {
            let z = m + rng.sample::<f64, _>(StandardNormal);
            if z > 0.0 {
                return z;
            }
        }
    } else {
        // Upper-tail inversion: P(E > e) = u P(E > a) with E = z - m.
        let upper_mass = erfc(-m / SQRT_2);
        loop {
            let u: f64 = rng.sample(Open01);
            let z = m + SQRT_2 * erfc_inv(u * upper_mass);
            if z > 0.0 && z.is_finite() {
                return z;
            }
        }
    }
}

/// `log(p / (1 - p))`.
pub fn logit(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("logit requires p in (0, 1), got {p}")));
    }
    Ok(p.ln() - (-p).ln_1p())
}

/// Logistic function, evaluated without overflow for either sign.
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `(n/2) log(2 pi)`, the Gaussian normalizing constant for n coordinates.
pub(crate) fn half_log_2pi(n: usize) -> f64 {
    0.5 * n as f64 * (2.0 * PI).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn log_cdf_trivial_points() {
        assert_eq!(log_std_normal_cdf(0.0).unwrap(), 0.5f64.ln());
        assert!(log_std_normal_cdf(40.0).unwrap().abs() < 1e-15);
        assert!(log_std_normal_cdf(-38.0).unwrap().is_finite());
        assert!(log_std_normal_cdf(f64::NAN).is_err());
    }

    #[test]
    fn log_cdf_continuous_across_tail_switch() {
        let below = log_std_normal_cdf(TAIL_SWITCH - 1e-12).unwrap();
        let above = log_std_normal_cdf(TAIL_SWITCH).unwrap();
        assert!((below - above).abs() < 1e-10);
        let lam_below = inverse_mills(TAIL_SWITCH - 1e-12).unwrap();
        let lam_above = inverse_mills(TAIL_SWITCH).unwrap();
        assert!(((lam_below - lam_above) / lam_above).abs() < 1e-12);
    }

    #[test]
    fn inverse_mills_trivial_points() {
        let at_zero = inverse_mills(0.0).unwrap();
        assert!((at_zero - (2.0 / PI).sqrt()).abs() < 1e-15);
        let at_30 = inverse_mills(30.0).unwrap();
        assert!(((at_30 - std_normal_pdf(30.0)) / at_30).abs() < 1e-12);
        assert!(inverse_mills(f64::INFINITY).is_err());
        // asymptotically lambda(t) ~ -t
        let far = inverse_mills(-1e6).unwrap();
        assert!((far - 1e6).abs() / 1e6 < 1e-11);
    }

    #[test]
    fn truncated_mean_symmetry_and_sign() {
        let root = (2.0 / PI).sqrt();
        assert!((trunc_norm_mean(0.0, TruncationSide::Positive).unwrap() - root).abs() < 1e-15);
        assert!((trunc_norm_mean(0.0, TruncationSide::NonPositive).unwrap() + root).abs() < 1e-15);
        for &m in &[-1e8, -50.0, -12.0, -3.0, 0.5, 7.0, 45.0, 1e8] {
            assert!(trunc_norm_mean(m, TruncationSide::Positive).unwrap() > 0.0, "m={m}");
            assert!(trunc_norm_mean(m, TruncationSide::NonPositive).unwrap() < 0.0, "m={m}");
        }
    }

    #[test]
    fn second_moment_and_residual_trivial_points() {
        let zb = trunc_norm_mean(0.0, TruncationSide::Positive).unwrap();
        assert_eq!(trunc_norm_second_moment(0.0, zb).unwrap(), 1.0);
        let zb2 = trunc_norm_mean(2.0, TruncationSide::Positive).unwrap();
        assert_eq!(trunc_norm_second_moment(2.0, zb2).unwrap(), 1.0 + 2.0 * zb2);
        assert_eq!(trunc_norm_residual_var(0.0, TruncationSide::Positive).unwrap(), 1.0);
        let expected = 1.0 - 3.0 * inverse_mills(3.0).unwrap();
        assert_eq!(trunc_norm_residual_var(3.0, TruncationSide::Positive).unwrap(), expected);
    }

    #[test]
    fn logit_expit() {
        assert_eq!(expit(0.0), 0.5);
        assert_eq!(logit(0.5).unwrap(), 0.0);
        assert!((expit(logit(0.2).unwrap()) - 0.2).abs() < 1e-14);
        assert!((expit(40.0) - 1.0).abs() < 1e-15);
        assert!(expit(-40.0) < 1e-17 && expit(-40.0) >= 0.0);
        assert!(logit(0.0).is_err());
        assert!(logit(1.0).is_err());
    }

    #[test]
    fn sampler_respects_half_lines_and_seed() {
        let mut a = ChaCha8Rng::seed_from_u64(11);
        let mut b = ChaCha8Rng::seed_from_u64(11);
        for &m in &[-30.0, -8.0, -5.0, -1.0, 0.0, 2.0, 5.0, 6.0, 30.0] {
            for _ in 0..200 {
                let p = sample_trunc_norm(&mut a, m, TruncationSide::Positive).unwrap();
                let q = sample_trunc_norm(&mut b, m, TruncationSide::Positive).unwrap();
                assert_eq!(p.to_bits(), q.to_bits());
                assert!(p > 0.0 && p.is_finite());
                let r = sample_trunc_norm(&mut a, m, TruncationSide::NonPositive).unwrap();
                let _ = sample_trunc_norm(&mut b, m, TruncationSide::NonPositive).unwrap();
                assert!(r <= 0.0 && r.is_finite());
            }
        }
        assert!(sample_trunc_norm(&mut a, f64::NAN, TruncationSide::Positive).is_err());
    }

    #[test]
    fn side_sign_bijection() {
        for side in [TruncationSide::Positive, TruncationSide::NonPositive] {
            assert_eq!(TruncationSide::from_sign(side.sign()).unwrap(), side);
        }
        assert_eq!(TruncationSide::from_response(1).unwrap(), TruncationSide::Positive);
        assert!(TruncationSide::from_response(2).is_err());
    }
}
