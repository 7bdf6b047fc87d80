//! Lattice GMRF approximation of a ν = 1 Matérn field on a square, and the
//! observation model used by the two-dimensional examples.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gauss_prob::stream_rng;
use crate::gmrf::{cholesky, fill_reducing_permutation, sample, GaussianPosterior, Permutation};
use crate::harness::covariance::matern_cov;
use crate::harness::mcmc::{conditional, HyperModel};
use crate::harness::{SimSpec, Simulation};
use crate::sparse::SparseSymmetricMatrix;

/// `side × side` regular grid over `[0, extent]²`, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    pub side: usize,
    pub extent: f64,
}

impl Lattice {
    pub fn new(side: usize, extent: f64) -> Result<Self> {
        if side < 2 || !(extent > 0.0) {
            return Err(Error::invalid("lattice needs at least 2 nodes per side and a positive extent"));
        }
        Ok(Self { side, extent })
    }

    pub fn len(&self) -> usize {
        self.side * self.side
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.extent / (self.side - 1) as f64
    }

    pub fn coords(&self) -> Vec<Vec<f64>> {
        let h = self.spacing();
        (0..self.len()).map(|k| vec![(k % self.side) as f64 * h, (k / self.side) as f64 * h]).collect()
    }

    pub fn center(&self) -> usize {
        let m = self.side / 2;
        m * self.side + m
    }

    fn neighbors(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        let (r, c, s) = (k / self.side, k % self.side, self.side);
        [
            (c > 0).then(|| k - 1),
            (c + 1 < s).then(|| k + 1),
            (r > 0).then(|| k - s),
            (r + 1 < s).then(|| k + s),
        ]
        .into_iter()
        .flatten()
    }

    /// Lumped mass (cell areas) on the diagonal.
    pub fn mass(&self) -> Vec<f64> {
        let h2 = self.spacing().powi(2);
        let s = self.side;
        (0..self.len())
            .map(|k| {
                let edge = |v: usize| if v == 0 || v + 1 == s { 0.5 } else { 1.0 };
                h2 * edge(k / s) * edge(k % s)
            })
            .collect()
    }

    /// `K = κ²C + G` with `G` the 5-point graph Laplacian.
    pub fn spde_operator(&self, kappa2: f64) -> Result<SparseSymmetricMatrix<f64>> {
        let c = self.mass();
        let mut trip = Vec::new();
        for i in 0..self.len() {
            let mut deg = 0.0;
            for j in self.neighbors(i) {
                deg += 1.0;
                if j < i {
                    trip.push((i, j, -1.0));
                }
            }
            trip.push((i, i, kappa2 * c[i] + deg));
        }
        SparseSymmetricMatrix::from_triplets(self.len(), &trip)
    }

    /// `τ (κ²C + G) C⁻¹ (κ²C + G)` with `G` the 5-point graph Laplacian.
    pub fn spde_precision(&self, kappa2: f64, tau: f64) -> Result<SparseSymmetricMatrix<f64>> {
        let c = self.mass();
        let n = self.len();
        // Rows of K = κ²C + G as (column, value) lists.
        let k_rows: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| {
                let mut row: Vec<(usize, f64)> = self.neighbors(i).map(|j| (j, -1.0)).collect();
                row.push((i, kappa2 * c[i] + row.len() as f64));
                row
            })
            .collect();
        // Lower triangle by rows, then mirrored so both triangles hold identical bits.
        let mut lo_ptr = Vec::with_capacity(n + 1);
        let mut lo_col = Vec::with_capacity(7 * n);
        let mut lo_val = Vec::with_capacity(7 * n);
        lo_ptr.push(0);
        let mut acc = vec![0.0; n];
        let mut touched = Vec::with_capacity(16);
        for i in 0..n {
            for &(k, a) in &k_rows[i] {
                for &(j, b) in &k_rows[k] {
                    if j > i {
                        continue;
                    }
                    if !touched.contains(&j) {
                        touched.push(j);
                    }
                    acc[j] += tau * a * b / c[k];
                }
            }
            touched.sort_unstable();
            for j in touched.drain(..) {
                lo_col.push(j);
                lo_val.push(std::mem::take(&mut acc[j]));
            }
            lo_ptr.push(lo_col.len());
        }
        // Column j: rows ≤ j from lower row j, then rows > j from the lower entries (r, j).
        let mut below: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for r in 0..n {
            for q in lo_ptr[r]..lo_ptr[r + 1] {
                if lo_col[q] < r {
                    below[lo_col[q]].push((r, lo_val[q]));
                }
            }
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::with_capacity(2 * lo_col.len());
        let mut values = Vec::with_capacity(2 * lo_col.len());
        col_ptr.push(0);
        for j in 0..n {
            row_idx.extend_from_slice(&lo_col[lo_ptr[j]..lo_ptr[j + 1]]);
            values.extend_from_slice(&lo_val[lo_ptr[j]..lo_ptr[j + 1]]);
            for &(r, v) in &below[j] {
                row_idx.push(r);
                values.push(v);
            }
            col_ptr.push(row_idx.len());
        }
        SparseSymmetricMatrix::from_csc(n, col_ptr, row_idx, values)
    }
}

/// Matérn-calibrated lattice prior observed at nodes with Gaussian noise.
/// Hyperparameters are `θ = (log σ, log κ, log φ)`.
#[derive(Debug, Clone)]
pub struct LatticeModel {
    lattice: Lattice,
    obs_nodes: Vec<usize>,
    y: Vec<f64>,
    prior_sd: f64,
    ordering: Permutation,
}

impl LatticeModel {
    pub fn new(lattice: Lattice, obs_nodes: Vec<usize>, y: Vec<f64>, prior_sd: f64) -> Result<Self> {
        if obs_nodes.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: obs_nodes.len(), found: y.len() });
        }
        if let Some(&bad) = obs_nodes.iter().find(|&&i| i >= lattice.len()) {
            return Err(Error::IndexOutOfBounds { index: bad, dim: lattice.len() });
        }
        let q = lattice.spde_precision(1.0, 1.0)?;
        let ordering = fill_reducing_permutation(&GaussianPosterior::with_precision(vec![0.0; lattice.len()], q)?);
        Ok(Self { lattice, obs_nodes, y, prior_sd, ordering })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    /// Lattice precision with marginal variance at the centre matched to
    /// the Matérn variance `φ²/(4πκ²)`.
    pub fn matern_precision(&self, kappa2: f64, phi2: f64) -> Result<SparseSymmetricMatrix<f64>> {
        Ok(self.matern_with_log_det(kappa2, phi2)?.0)
    }

    fn matern_with_log_det(&self, kappa2: f64, phi2: f64) -> Result<(SparseSymmetricMatrix<f64>, f64)> {
        // Q₁ = K C⁻¹ K, so |Q₁| = |K|² / |C| and Q₁⁻¹ = K⁻¹ C K⁻¹.
        let n = self.lattice.len();
        let c = self.lattice.mass();
        let k = GaussianPosterior::with_precision(vec![0.0; n], self.lattice.spde_operator(kappa2)?)?;
        let fk = cholesky(&k, &self.ordering)?;
        let mut e = vec![0.0; n];
        e[self.lattice.center()] = 1.0;
        let w = fk.solve(&e);
        let var1: f64 = w.iter().zip(&c).map(|(w, c)| c * w * w).sum();
        let logdet1 = 2.0 * fk.log_det_precision() - c.iter().map(|c| c.ln()).sum::<f64>();
        let scale = var1 / matern_cov(0.0, 1.0, kappa2, phi2, 2);
        let q = self.lattice.spde_precision(kappa2, scale)?;
        Ok((q, n as f64 * scale.ln() + logdet1))
    }

    pub fn theta_of(sigma: f64, kappa2: f64, phi: f64) -> Vec<f64> {
        vec![sigma.ln(), 0.5 * kappa2.ln(), phi.ln()]
    }
}

impl HyperModel for LatticeModel {
    fn dim(&self) -> usize {
        self.lattice.len()
    }

    fn theta_names(&self) -> Vec<String> {
        ["log_sigma", "log_kappa", "log_phi"].iter().map(|s| s.to_string()).collect()
    }

    fn prior_precision(&self, theta: &[f64]) -> Result<SparseSymmetricMatrix<f64>> {
        let kappa2 = (2.0 * theta[1]).exp();
        let phi2 = (2.0 * theta[2]).exp();
        self.matern_precision(kappa2, phi2)
    }

    fn prior_with_log_det(&self, theta: &[f64]) -> Result<(SparseSymmetricMatrix<f64>, f64)> {
        self.matern_with_log_det((2.0 * theta[1]).exp(), (2.0 * theta[2]).exp())
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        let s2 = self.prior_sd * self.prior_sd;
        theta.iter().map(|t| -0.5 * t * t / s2).sum()
    }

    fn obs_nodes(&self) -> &[usize] {
        &self.obs_nodes
    }

    fn obs_values(&self) -> &[f64] {
        &self.y
    }

    fn ordering(&self) -> &Permutation {
        &self.ordering
    }
}

/// Simulates a field from the lattice prior, observes it at random nodes
/// and returns the posterior at the true parameters.
pub fn simulate_example2_3(spec: &SimSpec) -> Result<Simulation> {
    spec.validate()?;
    let lattice = Lattice::new(spec.grid, spec.extent)?;
    let n = lattice.len();
    let mut rng = stream_rng(spec.seed, 0xE23);
    let obs_nodes: Vec<usize> = (0..spec.n_obs).map(|_| rng.random_range(0..n)).collect();
    let empty = LatticeModel::new(lattice, Vec::new(), Vec::new(), spec.prior_sd)?;
    let theta = LatticeModel::theta_of(spec.sigma, spec.kappa2, spec.phi);
    let prior = GaussianPosterior::with_precision(vec![0.0; n], empty.prior_precision(&theta)?)?;
    let truth = sample(&prior, &cholesky(&prior, empty.ordering())?, &mut rng);
    let y: Vec<f64> = obs_nodes
        .iter()
        .map(|&i| truth[i] + spec.sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let coords = lattice.coords();
    let obs_locations = obs_nodes.iter().map(|&i| coords[i].clone()).collect();
    let model = LatticeModel::new(lattice, obs_nodes, y.clone(), spec.prior_sd)?;
    let posterior = conditional(&model, &theta)?.posterior;
    Ok(Simulation { posterior, truth, observations: y, obs_locations, coords, model: Some(model) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmrf::marginal_variances;
    use crate::harness::ExampleId;

    #[test]
    fn mass_and_stencil() {
        let l = Lattice::new(3, 2.0).unwrap();
        assert_eq!(l.mass(), vec![0.25, 0.5, 0.25, 0.5, 1.0, 0.5, 0.25, 0.5, 0.25]);
        let q = l.spde_precision(1.0, 1.0).unwrap();
        // Row sums of K are κ²C, so Q·1 = κ⁴C·1... only for constant vectors: K1 = κ²c.
        let ones = vec![1.0; 9];
        let k1: Vec<f64> = l.mass().iter().map(|c| c * 1.0).collect();
        let q1 = q.mul_vec(&ones);
        for i in 0..9 {
            assert!((q1[i] - k1[i]).abs() < 1e-12, "{i}");
        }
    }

    #[test]
    fn calibrated_centre_variance() {
        let l = Lattice::new(15, 10.0).unwrap();
        let m = LatticeModel::new(l, vec![], vec![], 1.0).unwrap();
        let q = m.matern_precision(0.5, 1.0).unwrap();
        let p = GaussianPosterior::with_precision(vec![0.0; l.len()], q).unwrap();
        let v = marginal_variances(&p).unwrap();
        let target = matern_cov(0.0, 1.0, 0.5, 1.0, 2);
        assert!((v[l.center()] - target).abs() < 1e-10 * target);
        assert!(v.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn no_information_is_prior() {
        let spec = SimSpec { grid: 8, n_obs: 5, sigma: 1e8, ..SimSpec::default_for(ExampleId::Ex2) };
        let sim = simulate_example2_3(&spec).unwrap();
        let model = sim.model.as_ref().unwrap();
        let theta = LatticeModel::theta_of(spec.sigma, spec.kappa2, spec.phi);
        let prior = model.prior_precision(&theta).unwrap();
        let q = sim.posterior.precision().unwrap();
        for i in 0..q.dim() {
            assert!((q.get(i, i) - prior.get(i, i)).abs() < 1e-10);
        }
        assert!(sim.posterior.mean().iter().all(|m| m.abs() < 1e-8));
    }
}
