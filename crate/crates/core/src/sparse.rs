//! Compressed sparse column storage for symmetric matrices and their
//! lower Cholesky factors.

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Symmetric matrix with the full (both triangles) pattern stored in CSC.
///
/// Row indices within a column are sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymmetricMatrix<T> {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> SparseSymmetricMatrix<T> {
    /// Builds the matrix from triplets describing one triangle.
    ///
    /// Each unordered pair `{i, j}` may appear in either orientation;
    /// duplicates are summed. The mirror entry is generated.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, T)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("matrix dimension must be at least 1"));
        }
        // (col, row, value) for both orientations, then merged after sorting.
        let mut all: Vec<(usize, usize, T)> = Vec::with_capacity(2 * triplets.len());
        for &(i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(Error::IndexOutOfBounds { index: i.max(j), dim: n });
            }
            all.push((j, i, v));
            if i != j {
                all.push((i, j, v));
            }
        }
        all.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut col_ptr = vec![0; n + 1];
        let mut row_idx: Vec<usize> = Vec::with_capacity(all.len());
        let mut values: Vec<T> = Vec::with_capacity(all.len());
        let mut last: Option<(usize, usize)> = None;
        for (c, r, v) in all {
            if last == Some((c, r)) {
                *values.last_mut().expect("previous entry") += v;
            } else {
                row_idx.push(r);
                values.push(v);
                col_ptr[c + 1] += 1;
                last = Some((c, r));
            }
        }
        for j in 0..n {
            col_ptr[j + 1] += col_ptr[j];
        }
        Ok(Self { n, col_ptr, row_idx, values })
    }

    /// Full-pattern CSC arrays with sorted rows; symmetry is the caller's
    /// responsibility and is checked only in debug builds.
    pub fn from_csc(n: usize, col_ptr: Vec<usize>, row_idx: Vec<usize>, values: Vec<T>) -> Result<Self> {
        if n == 0 || col_ptr.len() != n + 1 || col_ptr[n] != row_idx.len() || row_idx.len() != values.len() {
            return Err(Error::invalid("inconsistent CSC arrays"));
        }
        for j in 0..n {
            let rows = &row_idx[col_ptr[j]..col_ptr[j + 1]];
            if rows.windows(2).any(|w| w[0] >= w[1]) || rows.last().is_some_and(|&r| r >= n) {
                return Err(Error::invalid(format!("column {j}: rows not strictly increasing or out of range")));
            }
        }
        let m = Self { n, col_ptr, row_idx, values };
        debug_assert!((0..n).all(|j| {
            let (rows, vals) = m.column(j);
            rows.iter().zip(vals).all(|(&i, &v)| m.get(j, i) == v)
        }));
        Ok(m)
    }

    /// Sparse copy of a dense symmetric matrix, dropping exact zeros.
    pub fn from_dense(m: &DenseMatrix<T>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch { expected: m.rows(), found: m.cols() });
        }
        let mut trip = Vec::new();
        for j in 0..m.cols() {
            for i in j..m.rows() {
                if m[(i, j)] != T::zero() {
                    trip.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(m.rows(), &trip)
    }

    pub fn identity(n: usize) -> Self {
        let trip: Vec<_> = (0..n).map(|i| (i, i, T::one())).collect();
        Self::from_triplets(n, &trip).expect("identity is well formed")
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Row indices and values of column `j`.
    #[inline]
    pub fn column(&self, j: usize) -> (&[usize], &[T]) {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        (&self.row_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (rows, vals) = self.column(j);
        rows.binary_search(&i).map_or(T::zero(), |k| vals[k])
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Off-diagonal neighbours of node `i` in the graph of the matrix.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.column(i).0.iter().copied().filter(move |&r| r != i)
    }

    /// Entries in the lower triangle, `(row, col, value)` with `row ≥ col`.
    pub fn lower_triplets(&self) -> Vec<(usize, usize, T)> {
        let mut out = Vec::new();
        for j in 0..self.n {
            let (rows, vals) = self.column(j);
            for (&i, &v) in rows.iter().zip(vals) {
                if i >= j {
                    out.push((i, j, v));
                }
            }
        }
        out
    }

    /// Checks the invariants expected of a precision matrix.
    pub fn validate_precision(&self) -> Result<()> {
        for j in 0..self.n {
            let (rows, vals) = self.column(j);
            for (&i, &v) in rows.iter().zip(vals) {
                if !v.is_finite() {
                    return Err(Error::invalid(format!("non-finite entry at ({i}, {j})")));
                }
                if self.get(j, i) != v {
                    return Err(Error::invalid(format!("asymmetric entry at ({i}, {j})")));
                }
            }
            if !(self.get(j, j) > T::zero()) {
                return Err(Error::invalid(format!("diagonal entry {j} is not positive")));
            }
        }
        Ok(())
    }

    /// `Pᵀ A P` where `forward[k]` is the row/column of `self` placed at `k`.
    pub fn permuted(&self, forward: &[usize], inverse: &[usize]) -> Self {
        let n = self.n;
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::with_capacity(self.nnz());
        let mut values = Vec::with_capacity(self.nnz());
        col_ptr.push(0);
        let mut buf: Vec<(usize, T)> = Vec::new();
        for &old in forward.iter().take(n) {
            buf.clear();
            let (rows, vals) = self.column(old);
            buf.extend(rows.iter().zip(vals).map(|(&r, &v)| (inverse[r], v)));
            buf.sort_unstable_by_key(|e| e.0);
            for &(r, v) in &buf {
                row_idx.push(r);
                values.push(v);
            }
            col_ptr.push(row_idx.len());
        }
        Self { n, col_ptr, row_idx, values }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.n];
        for j in 0..self.n {
            let (rows, vals) = self.column(j);
            for (&i, &v) in rows.iter().zip(vals) {
                y[i] += v * x[j];
            }
        }
        y
    }

    /// `self + diag(d)`, inserting diagonal entries where missing.
    pub fn add_diagonal(&self, d: &[T]) -> Self {
        let n = self.n;
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::with_capacity(self.nnz() + n);
        let mut values = Vec::with_capacity(self.nnz() + n);
        assert_eq!(d.len(), n, "diagonal length");
        col_ptr.push(0);
        for (j, &dj) in d.iter().enumerate() {
            let (rows, vals) = self.column(j);
            let mut placed = dj == T::zero();
            for (&i, &v) in rows.iter().zip(vals) {
                if !placed && i >= j {
                    if i == j {
                        row_idx.push(j);
                        values.push(v + dj);
                        placed = true;
                        continue;
                    }
                    row_idx.push(j);
                    values.push(dj);
                    placed = true;
                }
                row_idx.push(i);
                values.push(v);
            }
            if !placed {
                row_idx.push(j);
                values.push(dj);
            }
            col_ptr.push(row_idx.len());
        }
        Self { n, col_ptr, row_idx, values }
    }

    pub fn scaled(&self, s: T) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut m = DenseMatrix::zeros(self.n, self.n);
        for j in 0..self.n {
            let (rows, vals) = self.column(j);
            for (&i, &v) in rows.iter().zip(vals) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

/// Lower-triangular factor in CSC form; the diagonal leads every column.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerFactor<T> {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> LowerFactor<T> {
    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn diag(&self, j: usize) -> T {
        self.values[self.col_ptr[j]]
    }

    /// Rows and values of column `j` strictly below the diagonal.
    #[inline]
    pub fn below_diagonal(&self, j: usize) -> (&[usize], &[T]) {
        let r = self.col_ptr[j] + 1..self.col_ptr[j + 1];
        (&self.row_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        if i < j {
            return T::zero();
        }
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        self.row_idx[r.clone()]
            .binary_search(&i)
            .map_or(T::zero(), |k| self.values[r.start + k])
    }

    /// Largest `i - j` over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.n)
            .map(|j| self.row_idx[self.col_ptr[j + 1] - 1] - j)
            .max()
            .unwrap_or(0)
    }

    /// Dense lower factor converted to CSC, dropping exact zeros.
    pub fn from_dense(c: &DenseMatrix<T>) -> Self {
        let n = c.rows();
        let mut col_ptr = vec![0];
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        for j in 0..n {
            row_idx.push(j);
            values.push(c[(j, j)]);
            for i in j + 1..n {
                let v = c[(i, j)];
                if v != T::zero() {
                    row_idx.push(i);
                    values.push(v);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Self { n, col_ptr, row_idx, values }
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut m = DenseMatrix::zeros(self.n, self.n);
        for j in 0..self.n {
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                m[(self.row_idx[k], j)] = self.values[k];
            }
        }
        m
    }

    /// Left-looking sparse Cholesky of `a` in its given ordering.
    pub fn factorize(a: &SparseSymmetricMatrix<T>) -> Result<Self> {
        let n = a.dim();
        let patterns = symbolic(a);
        let mut col_ptr = Vec::with_capacity(n + 1);
        col_ptr.push(0);
        for p in &patterns {
            col_ptr.push(col_ptr.last().unwrap() + p.len());
        }
        let row_idx: Vec<usize> = patterns.concat();
        let mut values = vec![T::zero(); row_idx.len()];

        // Columns k < j holding an entry in row j, as CSR lists.
        let mut rc_ptr = vec![0; n + 1];
        for p in &patterns {
            for &r in &p[1..] {
                rc_ptr[r + 1] += 1;
            }
        }
        for j in 0..n {
            rc_ptr[j + 1] += rc_ptr[j];
        }
        let mut rc_fill = rc_ptr.clone();
        let mut rc_cols = vec![0; rc_ptr[n]];
        for (k, p) in patterns.iter().enumerate() {
            for &r in &p[1..] {
                rc_cols[rc_fill[r]] = k;
                rc_fill[r] += 1;
            }
        }

        let floor = T::cast(1e-300);
        let mut work = vec![T::zero(); n];
        // next[k]: position in column k of its first row not yet consumed.
        let mut next: Vec<usize> = (0..n).map(|k| col_ptr[k] + 1).collect();
        for j in 0..n {
            let pat = &row_idx[col_ptr[j]..col_ptr[j + 1]];
            let (arows, avals) = a.column(j);
            for (&r, &v) in arows.iter().zip(avals) {
                if r >= j {
                    work[r] = v;
                }
            }
            for &k in &rc_cols[rc_ptr[j]..rc_ptr[j + 1]] {
                let end = col_ptr[k + 1];
                let pos = next[k];
                debug_assert_eq!(row_idx[pos], j);
                next[k] += 1;
                let ljk = values[pos];
                for (&r, &v) in row_idx[pos..end].iter().zip(&values[pos..end]) {
                    work[r] -= v * ljk;
                }
            }
            let d = work[j];
            if !(d > floor) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: j });
            }
            let ljj = d.sqrt();
            for (q, &r) in (col_ptr[j]..).zip(pat) {
                values[q] = if r == j { ljj } else { work[r] / ljj };
                work[r] = T::zero();
            }
        }
        Ok(Self { n, col_ptr, row_idx, values })
    }

    /// Solves `L x = b`.
    pub fn solve_lower(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        for j in 0..self.n {
            x[j] /= self.diag(j);
            let xj = x[j];
            let (rows, vals) = self.below_diagonal(j);
            for (&i, &v) in rows.iter().zip(vals) {
                x[i] -= v * xj;
            }
        }
        x
    }

    /// Solves `Lᵀ x = b`.
    pub fn solve_upper(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        for j in (0..self.n).rev() {
            let (rows, vals) = self.below_diagonal(j);
            let s: T = rows.iter().zip(vals).map(|(&i, &v)| v * x[i]).sum();
            x[j] = (x[j] - s) / self.diag(j);
        }
        x
    }

    pub fn log_det(&self) -> T {
        T::cast(2.0) * (0..self.n).map(|j| self.diag(j).ln()).sum::<T>()
    }

    /// Diagonal of `(L Lᵀ)⁻¹` by the Takahashi recursion on the factor's
    /// pattern. Only entries of the inverse on that pattern are formed.
    pub fn inverse_diagonal(&self) -> Vec<T> {
        let n = self.n;
        // sigma[q] holds Σ_{row_idx[q], j} for the entry q of column j.
        let mut sigma = vec![T::zero(); self.values.len()];
        let lookup = |sigma: &[T], i: usize, k: usize| -> T {
            let (lo, hi) = if i < k { (i, k) } else { (k, i) };
            let r = self.col_ptr[lo]..self.col_ptr[lo + 1];
            let pos = self.row_idx[r.clone()]
                .binary_search(&hi)
                .expect("pattern closed under elimination");
            sigma[r.start + pos]
        };
        for j in (0..n).rev() {
            let start = self.col_ptr[j];
            let end = self.col_ptr[j + 1];
            let ljj = self.diag(j);
            for q in (start + 1..end).rev() {
                let i = self.row_idx[q];
                let mut s = T::zero();
                for p in start + 1..end {
                    s += self.values[p] * lookup(&sigma, self.row_idx[p], i);
                }
                sigma[q] = -s / ljj;
            }
            let mut s = T::zero();
            for p in start + 1..end {
                s += self.values[p] * sigma[p];
            }
            sigma[start] = (T::one() / ljj - s) / ljj;
        }
        (0..n).map(|j| sigma[self.col_ptr[j]]).collect()
    }
}

/// Column patterns of the Cholesky factor (diagonal first, sorted).
fn symbolic<T: Scalar>(a: &SparseSymmetricMatrix<T>) -> Vec<Vec<usize>> {
    let n = a.dim();
    let parent = elimination_tree(a);
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (c, p) in parent.iter().enumerate() {
        if let Some(p) = *p {
            children[p].push(c);
        }
    }
    let mut patterns: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut mark = vec![usize::MAX; n];
    for j in 0..n {
        let bound = 1 + a.column(j).0.len() + children[j].iter().map(|&c| patterns[c].len()).sum::<usize>();
        let mut pat = Vec::with_capacity(bound);
        pat.push(j);
        mark[j] = j;
        for &r in a.column(j).0 {
            if r > j && mark[r] != j {
                mark[r] = j;
                pat.push(r);
            }
        }
        for &c in &children[j] {
            for &r in &patterns[c] {
                if r > j && mark[r] != j {
                    mark[r] = j;
                    pat.push(r);
                }
            }
        }
        pat[1..].sort_unstable();
        patterns.push(pat);
    }
    patterns
}

fn elimination_tree<T: Scalar>(a: &SparseSymmetricMatrix<T>) -> Vec<Option<usize>> {
    let n = a.dim();
    let mut parent = vec![None; n];
    let mut ancestor: Vec<Option<usize>> = vec![None; n];
    for j in 0..n {
        for &i in a.column(j).0 {
            if i >= j {
                continue;
            }
            let mut k = i;
            loop {
                let next = ancestor[k];
                ancestor[k] = Some(j);
                match next {
                    None => {
                        parent[k] = Some(j);
                        break;
                    }
                    Some(x) if x == j => break,
                    Some(x) => k = x,
                }
            }
        }
    }
    parent
}
