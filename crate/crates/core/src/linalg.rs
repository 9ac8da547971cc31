//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{BettaError, Result};

/// Condition number above which a solve is reported as ill-conditioned.
pub const CONDITION_WARN: f64 = 1e10;

/// Cholesky factorization of a symmetric positive-definite matrix together
/// with its log-determinant.
pub struct SpdFactor {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    pub log_det: f64,
}

impl SpdFactor {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        let chol = nalgebra::Cholesky::new(m.clone())
            .ok_or_else(|| BettaError::Numerical("matrix is not positive definite".into()))?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Self { chol, log_det })
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let mut inv = self.chol.inverse();
        symmetrize(&mut inv);
        inv
    }
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// 2-norm condition number of a symmetric positive semi-definite matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// First column of `x` (in order) that lies in the span of the columns before
/// it, together with the earlier columns it depends on.
pub fn first_collinear_column(x: &DMatrix<f64>) -> Option<(usize, Vec<usize>)> {
    const REL_TOL: f64 = 1e-9;
    let mut basis: Vec<usize> = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let norm = col.norm();
        if norm == 0.0 {
            return Some((j, Vec::new()));
        }
        if basis.is_empty() {
            basis.push(j);
            continue;
        }
        let sub = x.select_columns(basis.iter());
        let svd = sub.clone().svd(true, true);
        let coef = svd
            .solve(&col, 1e-12)
            .unwrap_or_else(|_| DVector::zeros(basis.len()));
        let resid = &col - &sub * &coef;
        if resid.norm() <= REL_TOL * norm {
            let others = basis
                .iter()
                .zip(coef.iter())
                .filter(|(&k, &c)| (c * x.column(k).norm()).abs() > 1e-8 * norm)
                .map(|(&k, _)| k)
                .collect();
            return Some((j, others));
        }
        basis.push(j);
    }
    None
}

/// Sum with Neumaier compensation.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_duplicate_column() {
        let x = DMatrix::from_row_slice(4, 3, &[1.0, 1.0, 2.0, 1.0, 2.0, 4.0, 1.0, 3.0, 6.0, 1.0, 4.0, 8.0]);
        assert_eq!(first_collinear_column(&x), Some((2, vec![1])));
    }

    #[test]
    fn full_rank_passes() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 2.0, 1.0, 4.0]);
        assert_eq!(first_collinear_column(&x), None);
    }

    #[test]
    fn log_det_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]));
        let f = SpdFactor::new(&m).unwrap();
        assert!((f.log_det - 6f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let v = vec![1.0, 1e-16, 1e-16, 1e-16, 1e-16, -1.0];
        assert!((compensated_sum(v) - 4e-16).abs() < 1e-30);
    }
}
