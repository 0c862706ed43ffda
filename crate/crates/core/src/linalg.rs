//! Dense Cholesky factorization and triangular solves shared by the exact
//! likelihood, kriging and the criteria.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Lower Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: DMatrix<f64>,
}

impl Cholesky {
    /// Factors a symmetric matrix, reading only its lower triangle. A pivot
    /// that is not strictly positive yields `NotPositiveDefinite` tagged with
    /// `context`.
    pub fn new(mut a: DMatrix<f64>, context: &str) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: a.ncols(),
            });
        }
        potrf_in_place(&mut a).map_err(|j| Error::not_pd(format!("{context}: pivot {j}")))?;
        Ok(Cholesky { l: a })
    }

    pub fn from_lower(l: DMatrix<f64>) -> Self {
        Cholesky { l }
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn logdet(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `L⁻¹ B`.
    pub fn forward(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        self.l.solve_lower_triangular_mut(&mut x);
        x
    }

    pub fn forward_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.l.solve_lower_triangular_mut(&mut x);
        x
    }

    /// `A⁻¹ b`.
    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = self.forward_vec(b);
        self.l.tr_solve_lower_triangular_mut(&mut x);
        x
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = self.forward(b);
        self.l.tr_solve_lower_triangular_mut(&mut x);
        x
    }

    /// `bᵀ A⁻¹ b`.
    pub fn quad_form(&self, b: &DVector<f64>) -> f64 {
        self.forward_vec(b).norm_squared()
    }
}

/// In-place right-looking Cholesky on the lower triangle; the strict upper
/// triangle is zeroed. Returns the index of the first failing pivot.
pub(crate) fn potrf_in_place(a: &mut DMatrix<f64>) -> std::result::Result<(), usize> {
    let n = a.nrows();
    let data = a.as_mut_slice();
    for j in 0..n {
        let d = data[j * n + j];
        if !(d > 0.0) || !d.is_finite() {
            return Err(j);
        }
        let piv = d.sqrt();
        data[j * n + j] = piv;
        let inv = 1.0 / piv;
        for v in &mut data[j * n + j + 1..(j + 1) * n] {
            *v *= inv;
        }
        let (head, tail) = data.split_at_mut((j + 1) * n);
        let col_j = &head[j * n..];
        for (c, col_k) in tail.chunks_exact_mut(n).enumerate() {
            let k = j + 1 + c;
            let f = col_j[k];
            if f != 0.0 {
                for i in k..n {
                    col_k[i] -= f * col_j[i];
                }
            }
        }
    }
    for j in 1..n {
        for i in 0..j {
            data[j * n + i] = 0.0;
        }
    }
    Ok(())
}
