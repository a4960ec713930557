//! Stratified K-fold cross-validation of the inclusion prior `rho`.

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{predict_plugin_rows, test_deviance};
use super::simulation::substream;
use crate::cavi::{fit_with_gram, CaviConfig};
use crate::error::{Error, Result};
use crate::model::{validate_and_cache, Dataset, GramCache, Hyperparameters, DEFAULT_NU0_2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub k: usize,
    /// Ascending values in (0, 1).
    pub rho_grid: Vec<f64>,
    pub nu0_2: f64,
    pub seed: u64,
}

/// `0.05, 0.10, ..., 0.50`.
pub fn default_rho_grid() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 20.0).collect()
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            k: 5,
            rho_grid: default_rho_grid(),
            nu0_2: DEFAULT_NU0_2,
            seed: 0,
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::domain(format!("need at least 2 folds, got {}", self.k)));
        }
        if self.rho_grid.is_empty() {
            return Err(Error::domain("empty rho grid"));
        }
        if let Some(bad) = self.rho_grid.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
            return Err(Error::domain(format!("grid value {bad} outside (0, 1)")));
        }
        if self.rho_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("rho grid must be strictly ascending"));
        }
        if !(self.nu0_2 > 0.0 && self.nu0_2.is_finite()) {
            return Err(Error::domain(format!("nu0^2 must be positive, got {}", self.nu0_2)));
        }
        Ok(())
    }
}

/// Shuffles each class and deals its members round-robin into `k` folds.
/// Dealing continues across classes so total fold sizes also differ by at
/// most one. Each fold is returned in ascending index order.
pub fn stratified_folds<R: Rng + ?Sized>(y: &[u8], k: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::domain(format!("need at least 2 folds, got {k}")));
    }
    if k > y.len() {
        return Err(Error::domain(format!("{k} folds for {} observations", y.len())));
    }
    let mut classes: Vec<Vec<usize>> = vec![
        (0..y.len()).filter(|&i| y[i] == 0).collect(),
        (0..y.len()).filter(|&i| y[i] == 1).collect(),
    ];
    if classes.iter().any(Vec::is_empty) {
        warn!("a response class is empty; folds are not stratified");
        classes = vec![(0..y.len()).collect()];
    } else if classes.iter().any(|c| c.len() < k) {
        warn!("a response class has fewer than {k} members; some folds will miss it");
    }
    let mut folds = vec![Vec::new(); k];
    let mut slot = 0;
    for class in &mut classes {
        class.shuffle(rng);
        for &i in class.iter() {
            folds[slot].push(i);
            slot = (slot + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// One grid point of the CV curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub rho: f64,
    pub nu2: f64,
    /// Mean of `fold_deviances`.
    pub dev_cv: f64,
    pub fold_deviances: Vec<f64>,
    pub nonconverged_folds: usize,
    /// Largest relative ELBO decrease seen over the fold fits.
    pub max_elbo_decrease: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub rho: f64,
    pub nu2: f64,
    pub curve: Vec<CvPoint>,
    pub folds: Vec<Vec<usize>>,
}

struct FoldData {
    train: Dataset,
    gram: GramCache,
    test: Dataset,
}

/// Complement of `fold` in `0..n`.
pub fn complement(n: usize, fold: &[usize]) -> Vec<usize> {
    let mut held = vec![false; n];
    for &i in fold {
        held[i] = true;
    }
    (0..n).filter(|&i| !held[i]).collect()
}

/// Held-out deviance of a CAVI fit on the complement of `fold`, plus
/// whether it converged and its largest relative ELBO decrease.
pub fn fold_deviance(
    data: &Dataset,
    fold: &[usize],
    hyper: &Hyperparameters,
    cavi: &CaviConfig,
) -> Result<(f64, bool, f64)> {
    let train = data.subset_rows(&complement(data.n(), fold));
    let gram = validate_and_cache(&train)?;
    let fd = FoldData {
        train,
        gram,
        test: data.subset_rows(fold),
    };
    score_fold(&fd, hyper, cavi)
}

fn score_fold(fd: &FoldData, hyper: &Hyperparameters, cavi: &CaviConfig) -> Result<(f64, bool, f64)> {
    let fit = fit_with_gram(&fd.train, &fd.gram, hyper, cavi)?;
    let probs = predict_plugin_rows(&fit.state.masked_coefficients(), fd.test.x())?;
    let dev = test_deviance(&probs, fd.test.y())?;
    Ok((dev, fit.converged, fit.trace.max_relative_decrease()))
}

/// Scores every grid value by mean held-out deviance and returns the
/// minimizer; ties go to the smaller `rho`.
pub fn tune_rho(train: &Dataset, cv: &CvConfig, cavi: &CaviConfig) -> Result<TuneResult> {
    cv.validate()?;
    cavi.validate()?;
    let folds = stratified_folds(train.y(), cv.k, &mut substream(cv.seed, 0, 0))?;
    let fold_data: Vec<FoldData> = folds
        .iter()
        .map(|fold| {
            let tr = train.subset_rows(&complement(train.n(), fold));
            if tr.y().iter().all(|&v| v == tr.y()[0]) {
                warn!("a training complement holds a single response class");
            }
            let gram = validate_and_cache(&tr)?;
            Ok(FoldData {
                train: tr,
                gram,
                test: train.subset_rows(fold),
            })
        })
        .collect::<Result<_>>()?;

    let p = train.p();
    let jobs: Vec<(usize, usize)> = (0..cv.rho_grid.len())
        .flat_map(|g| (0..cv.k).map(move |f| (g, f)))
        .collect();
    let scores: Vec<(f64, bool, f64)> = jobs
        .par_iter()
        .map(|&(g, f)| {
            let hyper = Hyperparameters::from_rho(cv.rho_grid[g], p, cv.nu0_2)?;
            score_fold(&fold_data[f], &hyper, cavi)
        })
        .collect::<Result<_>>()?;

    let mut curve = Vec::with_capacity(cv.rho_grid.len());
    for (g, &rho) in cv.rho_grid.iter().enumerate() {
        let row = &scores[g * cv.k..(g + 1) * cv.k];
        let fold_deviances: Vec<f64> = row.iter().map(|s| s.0).collect();
        let nonconverged_folds = row.iter().filter(|s| !s.1).count();
        if nonconverged_folds > 0 {
            warn!("rho = {rho}: {nonconverged_folds} fold fits did not converge");
        }
        curve.push(CvPoint {
            rho,
            nu2: Hyperparameters::from_rho(rho, p, cv.nu0_2)?.nu2,
            dev_cv: fold_deviances.iter().sum::<f64>() / cv.k as f64,
            fold_deviances,
            nonconverged_folds,
            max_elbo_decrease: row.iter().map(|s| s.2).fold(0.0, f64::max),
        });
    }
    let best = curve
        .iter()
        .enumerate()
        .fold(0, |b, (i, pt)| if pt.dev_cv < curve[b].dev_cv { i } else { b });
    Ok(TuneResult {
        rho: curve[best].rho,
        nu2: curve[best].nu2,
        curve,
        folds,
    })
}
