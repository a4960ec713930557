//! Dense helpers over `faer` matrices: column-oriented products and a
//! Cholesky wrapper that reports the failing pivot.

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // four accumulators so the reduction vectorizes
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn col(m: MatRef<'_, f64>, j: usize) -> &[f64] {
    m.col(j)
        .try_as_col_major()
        .expect("owned matrices are column-major")
        .as_slice()
}

/// `x v`.
pub fn mat_vec(x: MatRef<'_, f64>, v: &[f64]) -> Vec<f64> {
    debug_assert_eq!(x.ncols(), v.len());
    let mut out = vec![0.0; x.nrows()];
    for (j, &vj) in v.iter().enumerate() {
        if vj == 0.0 {
            continue;
        }
        for (o, &xij) in out.iter_mut().zip(col(x, j)) {
            *o += xij * vj;
        }
    }
    out
}

/// `x^T v`.
pub fn mat_t_vec(x: MatRef<'_, f64>, v: &[f64]) -> Vec<f64> {
    debug_assert_eq!(x.nrows(), v.len());
    (0..x.ncols()).map(|j| dot(col(x, j), v)).collect()
}

/// `x^T x`, mirrored so the result is exactly symmetric.
pub fn gram(x: MatRef<'_, f64>) -> Mat<f64> {
    let mut g = x.transpose() * x;
    let p = g.ncols();
    for j in 0..p {
        for i in j + 1..p {
            g[(i, j)] = g[(j, i)];
        }
    }
    g
}

/// Cholesky factor `a = L L^T` of a symmetric positive-definite matrix.
pub struct SpdFactor {
    llt: faer::linalg::solvers::Llt<f64>,
}

impl SpdFactor {
    pub fn new(a: MatRef<'_, f64>, what: &str) -> Result<Self> {
        match a.llt(Side::Lower) {
            Ok(llt) => Ok(SpdFactor { llt }),
            Err(faer::linalg::solvers::LltError::NonPositivePivot { index }) => {
                Err(Error::Numerical {
                    message: format!("{what} is not positive definite (pivot {index})"),
                    pivot: Some(index),
                })
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.llt.L().nrows()
    }

    pub fn lower(&self) -> MatRef<'_, f64> {
        self.llt.L()
    }

    pub fn log_det(&self) -> f64 {
        let l = self.llt.L();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    pub fn inverse(&self) -> Mat<f64> {
        let mut inv = self.llt.inverse();
        let p = inv.ncols();
        for j in 0..p {
            for i in j + 1..p {
                let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
                inv[(i, j)] = v;
                inv[(j, i)] = v;
            }
        }
        inv
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        let sol = self.llt.solve(&rhs);
        (0..b.len()).map(|i| sol[(i, 0)]).collect()
    }

    /// `L^{-1} b` by forward substitution.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let l = self.llt.L();
        let n = b.len();
        let mut out = b.to_vec();
        for j in 0..n {
            out[j] /= l[(j, j)];
            let v = out[j];
            for i in j + 1..n {
                out[i] -= l[(i, j)] * v;
            }
        }
        out
    }

    /// `L^{-T} b` by back substitution.
    pub fn solve_upper(&self, b: &[f64]) -> Vec<f64> {
        let l = self.llt.L();
        let n = b.len();
        let mut out = b.to_vec();
        for i in (0..n).rev() {
            let mut s = out[i];
            for k in i + 1..n {
                s -= l[(k, i)] * out[k];
            }
            out[i] = s / l[(i, i)];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_match_loops() {
        let x = Mat::from_fn(5, 3, |i, j| (i as f64 + 1.0) * 0.3 - j as f64 * 1.7 + (i * j) as f64);
        let v = [0.5, -1.0, 2.0];
        let xv = mat_vec(x.as_ref(), &v);
        for i in 0..5 {
            let naive: f64 = (0..3).map(|j| x[(i, j)] * v[j]).sum();
            assert!((xv[i] - naive).abs() < 1e-12);
        }
        let u = [1.0, 2.0, 3.0, 4.0, 5.0];
        let xtu = mat_t_vec(x.as_ref(), &u);
        for j in 0..3 {
            let naive: f64 = (0..5).map(|i| x[(i, j)] * u[i]).sum();
            assert!((xtu[j] - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn factor_reports_pivot() {
        let mut a = Mat::<f64>::identity(3, 3);
        a[(2, 2)] = -1.0;
        match SpdFactor::new(a.as_ref(), "test matrix") {
            Err(Error::Numerical { pivot, .. }) => assert_eq!(pivot, Some(2)),
            other => panic!("expected pivot failure, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn triangular_solves_invert_factor() {
        let a = Mat::from_fn(4, 4, |i, j| if i == j { 4.0 } else { 1.0 / (1.0 + (i + j) as f64) });
        let f = SpdFactor::new(a.as_ref(), "a").unwrap();
        let b = [1.0, -2.0, 0.5, 3.0];
        let y = f.solve_upper(&f.solve_lower(&b));
        let x = f.solve(&b);
        for i in 0..4 {
            assert!((x[i] - y[i]).abs() < 1e-13);
        }
        let inv = f.inverse();
        for i in 0..4 {
            for j in 0..4 {
                let s: f64 = (0..4).map(|k| inv[(i, k)] * a[(k, j)]).sum();
                assert!((s - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }
}
