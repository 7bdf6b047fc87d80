//! Gaussian posteriors in precision (GMRF) or covariance form, their
//! ordering-explicit Cholesky factors, and the backward autoregressive
//! decomposition the sequential integrator runs on.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::ordering::minimum_degree;
use crate::scalar::Scalar;
use crate::sparse::{LowerFactor, SparseSymmetricMatrix};

/// Bijection between original node indices and factor positions.
///
/// `forward[k]` is the original node stored at factor position `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    forward: Vec<usize>,
    inverse: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self { forward: (0..n).collect(), inverse: (0..n).collect() }
    }

    pub fn new(forward: Vec<usize>) -> Result<Self> {
        let n = forward.len();
        let mut inverse = vec![usize::MAX; n];
        for (k, &v) in forward.iter().enumerate() {
            if v >= n || inverse[v] != usize::MAX {
                return Err(Error::invalid(format!("not a permutation of 0..{n}")));
            }
            inverse[v] = k;
        }
        Ok(Self { forward, inverse })
    }

    pub fn reversed(n: usize) -> Self {
        Self::new((0..n).rev().collect()).expect("reversal is a bijection")
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.forward.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    #[inline]
    pub fn forward(&self) -> &[usize] {
        &self.forward
    }

    #[inline]
    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }

    /// Original node at factor position `k`.
    #[inline]
    pub fn node(&self, k: usize) -> usize {
        self.forward[k]
    }

    /// Factor position of original node `i`.
    #[inline]
    pub fn position(&self, i: usize) -> usize {
        self.inverse[i]
    }
}

/// Second-order structure of a Gaussian posterior.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape<T> {
    Precision(SparseSymmetricMatrix<T>),
    Covariance(DenseMatrix<T>),
}

/// `π(x | y, θ)`: a mean vector plus a precision or covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior<T> {
    mean: Vec<T>,
    shape: Shape<T>,
}

impl<T: Scalar> GaussianPosterior<T> {
    pub fn with_precision(mean: Vec<T>, q: SparseSymmetricMatrix<T>) -> Result<Self> {
        if mean.len() != q.dim() {
            return Err(Error::DimensionMismatch { expected: q.dim(), found: mean.len() });
        }
        q.validate_precision()?;
        Ok(Self { mean, shape: Shape::Precision(q) })
    }

    pub fn with_covariance(mean: Vec<T>, sigma: DenseMatrix<T>) -> Result<Self> {
        if !sigma.is_square() {
            return Err(Error::invalid("covariance must be square"));
        }
        if mean.len() != sigma.rows() {
            return Err(Error::DimensionMismatch { expected: sigma.rows(), found: mean.len() });
        }
        if mean.is_empty() {
            return Err(Error::invalid("posterior dimension must be at least 1"));
        }
        if !sigma.is_symmetric(T::cast(1e-10)) {
            return Err(Error::invalid("covariance is not symmetric"));
        }
        Ok(Self { mean, shape: Shape::Covariance(sigma) })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    #[inline]
    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    #[inline]
    pub fn shape(&self) -> &Shape<T> {
        &self.shape
    }

    pub fn precision(&self) -> Option<&SparseSymmetricMatrix<T>> {
        match &self.shape {
            Shape::Precision(q) => Some(q),
            Shape::Covariance(_) => None,
        }
    }

    /// The same distribution with a different mean.
    pub fn with_mean(&self, mean: Vec<T>) -> Result<Self> {
        if mean.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: mean.len() });
        }
        Ok(Self { mean, shape: self.shape.clone() })
    }

    /// Marginal distribution of the listed nodes (covariance form only).
    pub fn marginal(&self, nodes: &[usize]) -> Result<Self> {
        match &self.shape {
            Shape::Covariance(s) => Ok(Self {
                mean: nodes.iter().map(|&i| self.mean[i]).collect(),
                shape: Shape::Covariance(s.select(nodes)),
            }),
            Shape::Precision(_) => Err(Error::invalid(
                "precision posteriors are marginalised through the factor ordering",
            )),
        }
    }

    /// Graph adjacency (only meaningful for precision form).
    pub fn adjacency(&self) -> Option<Vec<Vec<usize>>> {
        self.precision()
            .map(|q| (0..q.dim()).map(|i| q.neighbors(i).collect()).collect())
    }
}

/// Lower factor `L` with `L Lᵀ = Pᵀ Q P`, `Q` the posterior precision.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor<T> {
    lower: LowerFactor<T>,
    perm: Permutation,
    fill_in: usize,
}

/// Backward conditional of one factor position given all later ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditional<T> {
    pub variance: T,
    /// `(position j > i, weight)` with
    /// `E[x_i | x_{>i}] = μ_i + Σ weight·(x_j − μ_j)`.
    pub weights: Vec<(usize, T)>,
}

impl<T: Scalar> CholeskyFactor<T> {
    #[inline]
    pub fn dim(&self) -> usize {
        self.lower.dim()
    }

    #[inline]
    pub fn lower(&self) -> &LowerFactor<T> {
        &self.lower
    }

    #[inline]
    pub fn permutation(&self) -> &Permutation {
        &self.perm
    }

    /// Entries of `L` beyond those of the lower triangle of `Pᵀ Q P`.
    #[inline]
    pub fn fill_in(&self) -> usize {
        self.fill_in
    }

    /// Conditional law of position `i` given positions `i+1..n`.
    pub fn conditional_coeffs(&self, i: usize) -> Result<Conditional<T>> {
        if i >= self.dim() {
            return Err(Error::IndexOutOfBounds { index: i, dim: self.dim() });
        }
        let lii = self.lower.diag(i);
        let (rows, vals) = self.lower.below_diagonal(i);
        Ok(Conditional {
            variance: T::one() / (lii * lii),
            weights: rows.iter().zip(vals).map(|(&j, &v)| (j, -v / lii)).collect(),
        })
    }

    /// `log |Q|`.
    pub fn log_det_precision(&self) -> T {
        self.lower.log_det()
    }

    /// Solves `Q x = b` in original node indexing.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let pb: Vec<T> = self.perm.forward().iter().map(|&i| b[i]).collect();
        let y = self.lower.solve_upper(&self.lower.solve_lower(&pb));
        let mut x = vec![T::zero(); b.len()];
        for (k, &i) in self.perm.forward().iter().enumerate() {
            x[i] = y[k];
        }
        x
    }
}

/// Factorises the posterior precision under the given ordering.
///
/// Covariance posteriors are handled through a reverse-order Cholesky of the
/// permuted covariance, `PᵀΣP = U Uᵀ`, so that `L = U⁻ᵀ` without forming the
/// precision explicitly.
pub fn cholesky<T: Scalar>(posterior: &GaussianPosterior<T>, perm: &Permutation) -> Result<CholeskyFactor<T>> {
    let n = posterior.dim();
    if perm.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: perm.len() });
    }
    match &posterior.shape {
        Shape::Precision(q) => {
            let pq = q.permuted(perm.forward(), perm.inverse());
            let lower = LowerFactor::factorize(&pq)?;
            let base = (pq.nnz() + n) / 2;
            let fill_in = lower.nnz() - base;
            Ok(CholeskyFactor { lower, perm: perm.clone(), fill_in })
        }
        Shape::Covariance(s) => {
            let fwd = perm.forward();
            // Reversed permuted covariance: R[a,b] = Σ[fwd[n-1-a], fwd[n-1-b]].
            let r = DenseMatrix::from_fn(n, n, |a, b| s[(fwd[n - 1 - a], fwd[n - 1 - b])]);
            let c = r.cholesky().map_err(|e| match e {
                Error::NotPositiveDefinite { pivot } => Error::NotPositiveDefinite { pivot: n - 1 - pivot },
                other => other,
            })?;
            // U[i,j] = C[n-1-i, n-1-j] is upper triangular; Uᵀ is lower.
            let ut = DenseMatrix::from_fn(n, n, |i, j| c[(n - 1 - j, n - 1 - i)]);
            let l = ut.lower_inverse();
            let lower = LowerFactor::from_dense(&l);
            Ok(CholeskyFactor { lower, perm: perm.clone(), fill_in: 0 })
        }
    }
}

/// Fill-reducing ordering of the posterior's graph (identity for dense).
pub fn fill_reducing_permutation<T: Scalar>(posterior: &GaussianPosterior<T>) -> Permutation {
    match posterior.adjacency() {
        Some(adj) => Permutation::new(minimum_degree(&adj)).expect("ordering is a bijection"),
        None => Permutation::identity(posterior.dim()),
    }
}

/// Posterior marginal variances `Var(x_i)`.
pub fn marginal_variances<T: Scalar>(posterior: &GaussianPosterior<T>) -> Result<Vec<T>> {
    match &posterior.shape {
        Shape::Covariance(s) => Ok(s.diagonal()),
        Shape::Precision(_) => {
            let perm = fill_reducing_permutation(posterior);
            let factor = cholesky(posterior, &perm)?;
            Ok(marginal_variances_from_factor(&factor))
        }
    }
}

/// Marginal variances from an existing factor, in original indexing.
pub fn marginal_variances_from_factor<T: Scalar>(factor: &CholeskyFactor<T>) -> Vec<T> {
    let d = factor.lower.inverse_diagonal();
    let mut out = vec![T::zero(); d.len()];
    for (k, &i) in factor.perm.forward().iter().enumerate() {
        out[i] = d[k];
    }
    out
}

/// One exact draw `x = μ + P L⁻ᵀ z`.
pub fn sample<T: Scalar, R: Rng + ?Sized>(
    posterior: &GaussianPosterior<T>,
    factor: &CholeskyFactor<T>,
    rng: &mut R,
) -> Vec<T> {
    let n = posterior.dim();
    let z: Vec<T> = (0..n).map(|_| T::cast(rng.sample::<f64, _>(StandardNormal))).collect();
    let y = factor.lower.solve_upper(&z);
    let mut x = posterior.mean.clone();
    for (k, &i) in factor.perm.forward().iter().enumerate() {
        x[i] += y[k];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_by_two() -> GaussianPosterior<f64> {
        let q = SparseSymmetricMatrix::from_triplets(2, &[(0, 0, 2.0), (1, 0, -1.0), (1, 1, 2.0)]).unwrap();
        GaussianPosterior::with_precision(vec![0.0, 0.0], q).unwrap()
    }

    #[test]
    fn identity_factor() {
        let p = GaussianPosterior::with_precision(vec![0.0; 3], SparseSymmetricMatrix::identity(3)).unwrap();
        let f = cholesky(&p, &Permutation::identity(3)).unwrap();
        let d = f.lower().to_dense();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(d[(i, j)], if i == j { 1.0 } else { 0.0 });
            }
        }
        let c = f.conditional_coeffs(1).unwrap();
        assert_eq!(c.variance, 1.0);
        assert!(c.weights.is_empty());
    }

    #[test]
    fn hand_factor_and_conditionals() {
        let f = cholesky(&two_by_two(), &Permutation::identity(2)).unwrap();
        let l = f.lower().to_dense();
        assert_relative_eq!(l[(0, 0)], 2f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(l[(1, 0)], -1.0 / 2f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(l[(1, 1)], 1.5f64.sqrt(), epsilon = 1e-15);
        let c0 = f.conditional_coeffs(0).unwrap();
        assert_relative_eq!(c0.variance, 0.5, epsilon = 1e-15);
        assert_eq!(c0.weights.len(), 1);
        assert_relative_eq!(c0.weights[0].1, 0.5, epsilon = 1e-15);
        let c1 = f.conditional_coeffs(1).unwrap();
        assert_relative_eq!(c1.variance, 1.0 / 1.5, epsilon = 1e-15);
        assert!(c1.weights.is_empty());
        assert!(f.conditional_coeffs(2).is_err());
    }

    #[test]
    fn covariance_route_matches_precision_route() {
        let prec = two_by_two();
        let cov = prec.precision().unwrap().to_dense().cholesky().unwrap();
        let sigma = {
            let inv = cov.lower_inverse();
            inv.transpose().matmul(&inv).unwrap()
        };
        let dense = GaussianPosterior::with_covariance(vec![0.0, 0.0], sigma).unwrap();
        for perm in [Permutation::identity(2), Permutation::reversed(2)] {
            let a = cholesky(&prec, &perm).unwrap().lower().to_dense();
            let b = cholesky(&dense, &perm).unwrap().lower().to_dense();
            for i in 0..2 {
                for j in 0..2 {
                    assert_relative_eq!(a[(i, j)], b[(i, j)], epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn dense_marginal_variances_read_diagonal() {
        let p = GaussianPosterior::with_covariance(vec![0.0; 3], DenseMatrix::from_diagonal(&[1.0, 4.0, 9.0]))
            .unwrap();
        assert_eq!(marginal_variances(&p).unwrap(), vec![1.0, 4.0, 9.0]);
    }

    #[test]
    fn sampling_is_reproducible() {
        let p = two_by_two();
        let f = cholesky(&p, &Permutation::identity(2)).unwrap();
        let a = sample(&p, &f, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample(&p, &f, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_permutation() {
        assert!(Permutation::new(vec![0, 0, 1]).is_err());
        let p = Permutation::new(vec![2, 0, 1]).unwrap();
        for i in 0..3 {
            assert_eq!(p.node(p.position(i)), i);
        }
    }
}
