//! Small dense linear algebra: row-major matrices and Cholesky factors.
//!
//! Problem sizes here are a few hundred rows at most, so plain loops over
//! contiguous rows are fast enough and keep the code generic over [`Real`].

use std::ops::{Index, IndexMut};

use crate::error::{DgpError, Result};
use crate::scalar::Real;

/// Relative jitter levels tried in order by [`jittered_cholesky`].
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row vectors. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn diag(&self) -> Vec<T> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                let src = other.row(k);
                let dst = out.row_mut(i);
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len(), "mul_vec shape mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add_diag(&mut self, v: T) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += v;
        }
    }

    pub fn mean_diag(&self) -> T {
        let d = self.diag();
        if d.is_empty() {
            return T::zero();
        }
        d.iter().copied().sum::<T>() / T::lit(d.len() as f64)
    }

    pub fn max_asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = A`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    l: Matrix<T>,
}

impl<T: Real> Cholesky<T> {
    /// Factors the lower triangle of `a`. Fails on the first non-positive pivot.
    pub fn new(a: &Matrix<T>) -> Result<Self> {
        if !a.is_square() {
            return Err(DgpError::DimensionMismatch(format!(
                "cholesky of {}x{} matrix",
                a.rows(),
                a.cols()
            )));
        }
        Self::factor_shifted(a, T::zero()).ok_or(DgpError::NotPositiveDefinite { eta: 0.0 })
    }

    fn factor_shifted(a: &Matrix<T>, shift: T) -> Option<Self> {
        let n = a.rows();
        let mut l = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let s = dot(&l.row(i)[..j], &l.row(j)[..j]);
                if i == j {
                    let d = a[(i, i)] + shift - s;
                    if !(d > T::zero()) || !d.is_finite() {
                        return None;
                    }
                    l[(i, i)] = d.sqrt();
                } else {
                    l[(i, j)] = (a[(i, j)] - s) / l[(j, j)];
                }
            }
        }
        Some(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    pub fn lower(&self) -> &Matrix<T> {
        &self.l
    }

    /// Solves `L z = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [T]) {
        let n = self.dim();
        debug_assert_eq!(b.len(), n);
        for i in 0..n {
            let s = dot(&self.l.row(i)[..i], &b[..i]);
            b[i] = (b[i] - s) / self.l[(i, i)];
        }
    }

    /// Solves `Lᵀ x = z` in place.
    pub fn solve_upper_in_place(&self, b: &mut [T]) {
        let n = self.dim();
        debug_assert_eq!(b.len(), n);
        for i in (0..n).rev() {
            b[i] /= self.l[(i, i)];
            let bi = b[i];
            let row = self.l.row(i);
            for k in 0..i {
                b[k] -= row[k] * bi;
            }
        }
    }

    pub fn solve_lower(&self, b: &[T]) -> Vec<T> {
        let mut z = b.to_vec();
        self.solve_lower_in_place(&mut z);
        z
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut z = b.to_vec();
        self.solve_lower_in_place(&mut z);
        self.solve_upper_in_place(&mut z);
        z
    }

    /// `L⁻¹ B` for a matrix right-hand side, column by column.
    pub fn solve_lower_matrix(&self, b: &Matrix<T>) -> Matrix<T> {
        assert_eq!(b.rows(), self.dim());
        let bt = b.transpose();
        let mut out = Matrix::zeros(b.cols(), b.rows());
        for c in 0..b.cols() {
            let mut col = bt.row(c).to_vec();
            self.solve_lower_in_place(&mut col);
            out.row_mut(c).copy_from_slice(&col);
        }
        out.transpose()
    }

    pub fn log_det(&self) -> T {
        let two = T::lit(2.0);
        self.l.diag().into_iter().map(|d| two * d.ln()).sum()
    }

    /// `yᵀ A⁻¹ y`.
    pub fn quad_form(&self, y: &[T]) -> T {
        let z = self.solve_lower(y);
        dot(&z, &z)
    }

    /// `L z`, used to colour standard-normal draws.
    pub fn lower_mul(&self, z: &[T]) -> Vec<T> {
        let n = self.dim();
        (0..n).map(|i| dot(&self.l.row(i)[..=i], &z[..=i])).collect()
    }
}

/// Cholesky factor together with the jitter that made it succeed.
#[derive(Debug, Clone)]
pub struct Jittered<T> {
    pub factor: Cholesky<T>,
    /// Relative jitter level from [`JITTER_LADDER`] that was used.
    pub eta: f64,
}

/// Factors `M + η·mean(diag M)·I`, escalating `η` along [`JITTER_LADDER`].
pub fn jittered_cholesky<T: Real>(m: &Matrix<T>) -> Result<Jittered<T>> {
    if !m.is_square() {
        return Err(DgpError::DimensionMismatch(format!(
            "cholesky of {}x{} matrix",
            m.rows(),
            m.cols()
        )));
    }
    if !m.all_finite() {
        return Err(DgpError::NonFinite("matrix passed to cholesky"));
    }
    let scale = m.mean_diag().abs();
    for &eta in &JITTER_LADDER {
        if let Some(factor) = Cholesky::factor_shifted(m, T::lit(eta) * scale) {
            return Ok(Jittered { factor, eta });
        }
    }
    Err(DgpError::NotPositiveDefinite {
        eta: JITTER_LADDER[JITTER_LADDER.len() - 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_factor_needs_no_jitter() {
        let j = jittered_cholesky(&Matrix::<f64>::identity(3)).unwrap();
        assert_eq!(j.eta, 0.0);
        assert_eq!(j.factor.lower(), &Matrix::identity(3));
    }

    #[test]
    fn rank_one_needs_jitter() {
        let v = [1.0, 2.0, 3.0];
        let m = Matrix::from_fn(3, 3, |i, j| v[i] * v[j]);
        let j = jittered_cholesky(&m).unwrap();
        assert!(j.eta > 0.0);
    }

    #[test]
    fn negative_eigenvalue_is_rejected() {
        let m = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, -1.0]]);
        assert_eq!(
            jittered_cholesky(&m).unwrap_err(),
            DgpError::NotPositiveDefinite { eta: 1e-6 }
        );
    }

    #[test]
    fn solve_inverts_product() {
        let a = Matrix::from_rows(&[
            vec![4.0f64, 1.0, 0.5],
            vec![1.0, 3.0, 0.2],
            vec![0.5, 0.2, 2.0],
        ]);
        let c = Cholesky::new(&a).unwrap();
        let x = vec![1.0, -2.0, 0.5];
        let b = a.mul_vec(&x);
        let got = c.solve(&b);
        for (g, e) in got.iter().zip(&x) {
            assert!((g - e).abs() < 1e-12);
        }
        let ll = c.lower().matmul(&c.lower().transpose());
        for i in 0..3 {
            for j in 0..3 {
                assert!((ll[(i, j)] - a[(i, j)]).abs() < 1e-12);
            }
        }
        let det: f64 = 4.0 * (3.0 * 2.0 - 0.04) - 1.0 * (2.0 - 0.1) + 0.5 * (0.2 - 1.5);
        assert!((c.log_det() - det.ln()).abs() < 1e-12);
    }

    #[test]
    fn works_in_single_precision() {
        let a = Matrix::<f32>::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let c = Cholesky::new(&a).unwrap();
        assert!((c.log_det() - 3.0f32.ln()).abs() < 1e-6);
    }

    #[test]
    fn matrix_rhs_solve_matches_columns() {
        let a = Matrix::from_rows(&[vec![2.0f64, 0.3], vec![0.3, 1.0]]);
        let c = Cholesky::new(&a).unwrap();
        let b = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 4.0]]);
        let z = c.solve_lower_matrix(&b);
        for col in 0..3 {
            let direct = c.solve_lower(&[b[(0, col)], b[(1, col)]]);
            assert!((z[(0, col)] - direct[0]).abs() < 1e-14);
            assert!((z[(1, col)] - direct[1]).abs() < 1e-14);
        }
    }
}
