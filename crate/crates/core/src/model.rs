//! Observed data, hyperparameters and the Gram-matrix precomputation shared
//! by the variational and sampling engines.

use std::collections::HashSet;

use faer::{Mat, MatRef};

use crate::error::{Error, Result};
use crate::kernels::TruncationSide;
use crate::linalg;

/// Default base variance of the linear predictor used by the `nu2` rule.
pub const DEFAULT_NU0_2: f64 = 25.0;

/// Design matrix (row i is x_i) with a binary response.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: Mat<f64>,
    y: Vec<u8>,
    feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(x: Mat<f64>, y: Vec<u8>, feature_names: Option<Vec<String>>) -> Result<Self> {
        check_parts(x.as_ref(), &y, feature_names.as_deref())?;
        Ok(Dataset {
            x,
            y,
            feature_names,
        })
    }

    /// Builds a dataset from row vectors.
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<u8>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != p) {
            return Err(Error::validation("ragged design matrix rows", vec![bad]));
        }
        let x = Mat::from_fn(rows.len(), p, |i, j| rows[i][j]);
        Dataset::new(x, y, None)
    }

    /// No rows; only used to exercise the data-free ELBO identity.
    #[cfg(test)]
    pub(crate) fn empty(p: usize) -> Self {
        Dataset {
            x: Mat::zeros(0, p),
            y: Vec::new(),
            feature_names: None,
        }
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> MatRef<'_, f64> {
        self.x.as_ref()
    }

    pub fn y(&self) -> &[u8] {
        &self.y
    }

    pub fn column(&self, j: usize) -> &[f64] {
        linalg::col(self.x.as_ref(), j)
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.p()).map(|j| self.x[(i, j)]).collect()
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    /// Feature labels, falling back to `x1..xp`.
    pub fn labels(&self) -> Vec<String> {
        match &self.feature_names {
            Some(names) => names.clone(),
            None => (1..=self.p()).map(|j| format!("x{j}")).collect(),
        }
    }

    pub fn side(&self, i: usize) -> TruncationSide {
        if self.y[i] == 1 {
            TruncationSide::Positive
        } else {
            TruncationSide::NonPositive
        }
    }

    pub fn sides(&self) -> Vec<TruncationSide> {
        (0..self.n()).map(|i| self.side(i)).collect()
    }

    /// Rows `idx` in the given order.
    pub fn subset_rows(&self, idx: &[usize]) -> Dataset {
        let x = Mat::from_fn(idx.len(), self.p(), |i, j| self.x[(idx[i], j)]);
        let y = idx.iter().map(|&i| self.y[i]).collect();
        Dataset {
            x,
            y,
            feature_names: self.feature_names.clone(),
        }
    }
}

fn check_parts(x: MatRef<'_, f64>, y: &[u8], names: Option<&[String]>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::validation(
            format!("design has {} rows but response has {} entries", x.nrows(), y.len()),
            vec![],
        ));
    }
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::validation(
            format!("need n >= 1 and p >= 1, got n={} p={}", x.nrows(), x.ncols()),
            vec![],
        ));
    }
    let bad_rows: Vec<usize> = (0..x.nrows())
        .filter(|&i| (0..x.ncols()).any(|j| !x[(i, j)].is_finite()))
        .collect();
    if !bad_rows.is_empty() {
        return Err(Error::validation("non-finite design entries in rows", bad_rows));
    }
    let bad_y: Vec<usize> = y
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 1)
        .map(|(i, _)| i)
        .collect();
    if !bad_y.is_empty() {
        return Err(Error::validation("response values outside {0, 1}", bad_y));
    }
    if let Some(names) = names {
        if names.len() != x.ncols() {
            return Err(Error::validation(
                format!("{} feature names for {} columns", names.len(), x.ncols()),
                vec![],
            ));
        }
        let mut seen = HashSet::new();
        let dups: Vec<usize> = names
            .iter()
            .enumerate()
            .filter(|(_, name)| !seen.insert(name.as_str()))
            .map(|(j, _)| j)
            .collect();
        if !dups.is_empty() {
            return Err(Error::validation("duplicate feature names", dups));
        }
    }
    Ok(())
}

/// Slab variance `nu2`, prior inclusion probability `rho`, and the base
/// variance `nu0_2` the `nu2` rule is anchored to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparameters {
    pub nu2: f64,
    pub rho: f64,
    pub nu0_2: f64,
}

impl Hyperparameters {
    pub fn new(nu2: f64, rho: f64, nu0_2: f64) -> Result<Self> {
        if !(nu2 > 0.0 && nu2.is_finite()) {
            return Err(Error::domain(format!("nu2 must be positive, got {nu2}")));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::domain(format!("rho must lie in (0, 1), got {rho}")));
        }
        if !(nu0_2 > 0.0 && nu0_2.is_finite()) {
            return Err(Error::domain(format!("nu0_2 must be positive, got {nu0_2}")));
        }
        Ok(Hyperparameters { nu2, rho, nu0_2 })
    }

    /// Hyperparameters with `nu2` set by [`derive_nu2`].
    pub fn from_rho(rho: f64, p: usize, nu0_2: f64) -> Result<Self> {
        let nu2 = derive_nu2(rho, p, nu0_2)?;
        Hyperparameters::new(nu2, rho, nu0_2)
    }
}

/// `nu0_2 / (rho p)`: keeps the prior variance of the linear predictor near
/// `nu0_2` for unit-variance covariates.
pub fn derive_nu2(rho: f64, p: usize, nu0_2: f64) -> Result<f64> {
    if !(rho > 0.0) || p == 0 || !(nu0_2 > 0.0) {
        return Err(Error::domain(format!(
            "derive_nu2 needs positive inputs, got rho={rho} p={p} nu0_2={nu0_2}"
        )));
    }
    Ok(nu0_2 / (rho * p as f64))
}

/// `G = X^T X` with its diagonal, plus the columns that are identically zero.
#[derive(Debug, Clone)]
pub struct GramCache {
    pub g: Mat<f64>,
    pub col_sq_norms: Vec<f64>,
    pub zero_columns: Vec<usize>,
}

impl GramCache {
    pub fn p(&self) -> usize {
        self.g.ncols()
    }

    /// Set when some column is identically zero; its inclusion probability
    /// then stays at the prior value.
    pub fn has_zero_columns(&self) -> bool {
        !self.zero_columns.is_empty()
    }
}

pub fn validate_and_cache(dataset: &Dataset) -> Result<GramCache> {
    check_parts(dataset.x(), dataset.y(), dataset.feature_names())?;
    let g = linalg::gram(dataset.x());
    let col_sq_norms: Vec<f64> = (0..g.ncols()).map(|j| g[(j, j)]).collect();
    let zero_columns: Vec<usize> = (0..dataset.p())
        .filter(|&j| dataset.column(j).iter().all(|&v| v == 0.0))
        .collect();
    if !zero_columns.is_empty() {
        log::warn!("design has all-zero columns {zero_columns:?}");
    }
    Ok(GramCache {
        g,
        col_sq_norms,
        zero_columns,
    })
}

/// Ground-truth mask and coefficients of a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthParams {
    pub gamma0: Vec<bool>,
    pub beta0: Vec<f64>,
}

impl TruthParams {
    pub fn new(gamma0: Vec<bool>, beta0: Vec<f64>) -> Result<Self> {
        if gamma0.len() != beta0.len() {
            return Err(Error::validation("gamma0 and beta0 lengths differ", vec![]));
        }
        Ok(TruthParams { gamma0, beta0 })
    }

    pub fn p(&self) -> usize {
        self.gamma0.len()
    }

    /// The effective coefficients `gamma0_j beta0_j`.
    pub fn effective(&self) -> Vec<f64> {
        self.gamma0
            .iter()
            .zip(&self.beta0)
            .map(|(&g, &b)| if g { b } else { 0.0 })
            .collect()
    }

    pub fn active(&self) -> Vec<usize> {
        (0..self.p()).filter(|&j| self.gamma0[j]).collect()
    }
}
