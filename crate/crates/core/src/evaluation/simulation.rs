//! Synthetic probit data with a known sparse truth.

use faer::Mat;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, TruthParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationScenario {
    pub n: usize,
    pub p: usize,
    pub active_fraction: f64,
    /// Negative then positive coefficient interval.
    pub coefficient_ranges: [(f64, f64); 2],
    pub replicates: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl SimulationScenario {
    pub fn custom(n: usize, p: usize, replicates: usize, seed: u64) -> Self {
        SimulationScenario {
            n,
            p,
            active_fraction: 0.02,
            coefficient_ranges: [(-3.0, -1.0), (1.0, 3.0)],
            replicates,
            test_size: 500,
            seed,
        }
    }

    pub fn s1(seed: u64) -> Self {
        Self::custom(1000, 200, 50, seed)
    }

    pub fn s2(seed: u64) -> Self {
        Self::custom(500, 1000, 20, seed)
    }

    /// `floor(active_fraction * p)`, tolerant of products like `0.02 * 350`
    /// landing a hair below an integer.
    pub fn active_count(&self) -> usize {
        (self.active_fraction * self.p as f64 * (1.0 + 1e-12)).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.active_count();
        if k < 2 || k % 2 != 0 {
            return Err(Error::domain(format!(
                "active count floor({} * {}) = {k} must be even and at least 2",
                self.active_fraction, self.p
            )));
        }
        if k > self.p {
            return Err(Error::domain("active count exceeds p"));
        }
        if self.n == 0 || self.test_size == 0 || self.replicates == 0 {
            return Err(Error::domain("n, test size and replicate count must be positive"));
        }
        for &(lo, hi) in &self.coefficient_ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::domain(format!("bad coefficient interval [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Active coefficients: equally spaced points spanning each interval,
    /// endpoints included, half per interval.
    pub fn active_coefficients(&self) -> Vec<f64> {
        let q = self.active_count() / 2;
        let mut out = Vec::with_capacity(2 * q);
        for &(lo, hi) in &self.coefficient_ranges {
            if q == 1 {
                out.push(0.5 * (lo + hi));
                continue;
            }
            let step = (hi - lo) / (q - 1) as f64;
            for i in 0..q {
                out.push(if i + 1 == q { hi } else { lo + i as f64 * step });
            }
        }
        out
    }

    pub fn truth(&self) -> Result<TruthParams> {
        self.validate()?;
        let coefs = self.active_coefficients();
        let mut gamma0 = vec![false; self.p];
        let mut beta0 = vec![0.0; self.p];
        for (j, &b) in coefs.iter().enumerate() {
            gamma0[j] = true;
            beta0[j] = b;
        }
        TruthParams::new(gamma0, beta0)
    }
}

/// Independent random stream `purpose` of replicate `replicate`.
pub fn substream(seed: u64, replicate: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((replicate << 8) | purpose);
    rng
}

/// A 64-bit seed drawn from [`substream`].
pub fn derived_seed(seed: u64, replicate: u64, purpose: u64) -> u64 {
    substream(seed, replicate, purpose).next_u64()
}

fn draw_split<R: Rng + ?Sized>(rows: usize, truth: &TruthParams, rng: &mut R) -> Result<Dataset> {
    let p = truth.p();
    let coef = truth.effective();
    let active = truth.active();
    let mut x = Mat::<f64>::zeros(rows, p);
    for i in 0..rows {
        for j in 0..p {
            x[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let y = (0..rows)
        .map(|i| {
            let eta: f64 = active.iter().map(|&j| x[(i, j)] * coef[j]).sum();
            let z = eta + rng.sample::<f64, _>(StandardNormal);
            (z > 0.0) as u8
        })
        .collect();
    Dataset::new(x, y, None)
}

/// Train (`n` rows) and test (`test_size` rows) sets drawn independently
/// under the scenario's truth. Design entries are drawn row by row.
pub fn generate_dataset<R: Rng + ?Sized>(
    scenario: &SimulationScenario,
    rng: &mut R,
) -> Result<(Dataset, Dataset, TruthParams)> {
    let truth = scenario.truth()?;
    let train = draw_split(scenario.n, &truth, rng)?;
    let test = draw_split(scenario.test_size, &truth, rng)?;
    Ok((train, test, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_place_endpoints() {
        assert_eq!(SimulationScenario::s1(0).active_coefficients(), vec![-3.0, -1.0, 1.0, 3.0]);
        let c = SimulationScenario::s2(0).active_coefficients();
        assert_eq!(c.len(), 20);
        assert_eq!((c[0], c[9], c[10], c[19]), (-3.0, -1.0, 1.0, 3.0));
        for half in c.chunks(10) {
            for w in half.windows(3) {
                assert!(((w[1] - w[0]) - (w[2] - w[1])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn odd_or_tiny_active_count_rejected() {
        assert!(SimulationScenario::custom(500, 50, 1, 0).validate().is_err());
        assert!(SimulationScenario::custom(500, 150, 1, 0).validate().is_err());
        assert!(SimulationScenario::custom(500, 100, 1, 0).validate().is_ok());
        assert_eq!(SimulationScenario::custom(500, 350, 1, 0).active_count(), 7);
    }

    #[test]
    fn two_active_use_interval_midpoints() {
        assert_eq!(SimulationScenario::custom(10, 100, 1, 0).active_coefficients(), vec![-2.0, 2.0]);
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let sc = SimulationScenario::custom(30, 100, 1, 7);
        let (a, ta, _) = generate_dataset(&sc, &mut substream(7, 0, 0)).unwrap();
        let (b, tb, truth) = generate_dataset(&sc, &mut substream(7, 0, 0)).unwrap();
        assert_eq!(a.y(), b.y());
        assert_eq!(a.column(5), b.column(5));
        assert_eq!(ta.y(), tb.y());
        assert_eq!(tb.n(), 500);
        assert_eq!(truth.active(), vec![0, 1]);
    }
}
