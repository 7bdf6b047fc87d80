//! Small dense matrix type used for covariance posteriors and the harness.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_diagonal(d: &[T]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
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

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged rows"));
        }
        Ok(Self { rows: rows.len(), cols, data: rows.concat() })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        if !self.is_square() {
            return false;
        }
        for i in 0..self.rows {
            for j in 0..i {
                let (a, b) = (self[(i, j)], self[(j, i)]);
                if (a - b).abs() > tol * (T::one() + a.abs().max(b.abs())) {
                    return false;
                }
            }
        }
        true
    }

    /// Symmetric sub-matrix on the given index set (rows and columns).
    pub fn select(&self, idx: &[usize]) -> Self {
        Self::from_fn(idx.len(), idx.len(), |i, j| self[(idx[i], idx[j])])
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch { expected: self.cols, found: other.rows });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == T::zero() {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    /// Lower Cholesky factor `C` with `self = C Cᵀ`.
    pub fn cholesky(&self) -> Result<Self> {
        if !self.is_square() {
            return Err(Error::DimensionMismatch { expected: self.rows, found: self.cols });
        }
        let n = self.rows;
        let floor = T::cast(1e-300);
        let mut c = Self::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)];
            {
                let rj = &c.data[j * n..j * n + j];
                d -= rj.iter().map(|&x| x * x).sum::<T>();
            }
            if !(d > floor) {
                return Err(Error::NotPositiveDefinite { pivot: j });
            }
            let ljj = d.sqrt();
            c[(j, j)] = ljj;
            for i in j + 1..n {
                let (head, tail) = c.data.split_at_mut(i * n);
                let rj = &head[j * n..j * n + j];
                let ri = &tail[..j];
                let dot: T = ri.iter().zip(rj).map(|(&a, &b)| a * b).sum();
                tail[j] = (self[(i, j)] - dot) / ljj;
            }
        }
        Ok(c)
    }

    /// Solves `self · x = b` for lower-triangular `self`.
    pub fn solve_lower(&self, b: &[T]) -> Vec<T> {
        let n = self.rows;
        let mut x = b.to_vec();
        for i in 0..n {
            let row = self.row(i);
            let s: T = row[..i].iter().zip(&x[..i]).map(|(&a, &b)| a * b).sum();
            x[i] = (x[i] - s) / row[i];
        }
        x
    }

    /// Solves `selfᵀ · x = b` for lower-triangular `self`.
    pub fn solve_lower_transpose(&self, b: &[T]) -> Vec<T> {
        let n = self.rows;
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            x[i] /= self[(i, i)];
            let xi = x[i];
            for k in 0..i {
                x[k] -= self[(i, k)] * xi;
            }
        }
        x
    }

    /// Solves `A x = b` given the lower Cholesky factor `self` of `A`.
    pub fn cholesky_solve(&self, b: &[T]) -> Vec<T> {
        self.solve_lower_transpose(&self.solve_lower(b))
    }

    /// Inverse of a lower-triangular matrix (itself lower-triangular).
    pub fn lower_inverse(&self) -> Self {
        let n = self.rows;
        let mut inv = Self::zeros(n, n);
        for i in 0..n {
            inv[(i, i)] = T::one() / self[(i, i)];
            for j in (0..i).rev() {
                // row i of inv: sum_k L[i,k] inv[k,j] = 0 for j < i
                let mut s = T::zero();
                for k in j..i {
                    s += self[(i, k)] * inv[(k, j)];
                }
                inv[(i, j)] = -s / self[(i, i)];
            }
        }
        inv
    }

    /// `log det` of the matrix whose lower Cholesky factor is `self`.
    pub fn cholesky_log_det(&self) -> T {
        T::cast(2.0) * self.diagonal().into_iter().map(|d| d.ln()).sum::<T>()
    }
}

impl<T> Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for DenseMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}
