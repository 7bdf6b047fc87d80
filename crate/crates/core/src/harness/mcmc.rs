//! Hyperparameter inference for latent Gaussian models with Gaussian
//! observations: the marginal posterior of θ, its mode and curvature, a CCD
//! integration design, and posterior samplers for the latent field.

use std::collections::BTreeMap;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::gauss_prob::stream_rng;
use crate::gmrf::{cholesky, sample, CholeskyFactor, GaussianPosterior, Permutation};
use crate::posterior_methods::{ParamConfig, ParamConfigSet};
use crate::sparse::SparseSymmetricMatrix;

/// A latent GMRF observed directly at nodes with noise sd `exp(θ[0])`.
pub trait HyperModel {
    /// Number of latent nodes.
    fn dim(&self) -> usize;
    fn theta_names(&self) -> Vec<String>;
    fn prior_precision(&self, theta: &[f64]) -> Result<SparseSymmetricMatrix<f64>>;
    fn log_prior(&self, theta: &[f64]) -> f64;
    fn obs_nodes(&self) -> &[usize];
    fn obs_values(&self) -> &[f64];
    /// Fill-reducing ordering shared by `Q(θ)` and `Q̂(θ)`.
    fn ordering(&self) -> &Permutation;

    /// `Q(θ)` with `log|Q(θ)|`; override when the determinant comes cheaper.
    fn prior_with_log_det(&self, theta: &[f64]) -> Result<(SparseSymmetricMatrix<f64>, f64)> {
        let q = self.prior_precision(theta)?;
        let prior = GaussianPosterior::with_precision(vec![0.0; self.dim()], q.clone())?;
        Ok((q, cholesky(&prior, self.ordering())?.log_det_precision()))
    }
}

/// `π(x | y, θ)` with its factor and the unnormalised `log π(θ | y)`.
#[derive(Debug, Clone)]
pub struct ConditionalFit {
    pub log_post: f64,
    pub posterior: GaussianPosterior<f64>,
    pub factor: CholeskyFactor<f64>,
}

pub fn conditional<M: HyperModel + ?Sized>(model: &M, theta: &[f64]) -> Result<ConditionalFit> {
    let n = model.dim();
    let sigma = theta[0].exp();
    let s2 = sigma * sigma;
    let (q, logdet_q) = model.prior_with_log_det(theta)?;

    let mut d = vec![0.0; n];
    let mut b = vec![0.0; n];
    let y = model.obs_values();
    for (&i, &v) in model.obs_nodes().iter().zip(y) {
        d[i] += 1.0 / s2;
        b[i] += v / s2;
    }
    let qhat = GaussianPosterior::with_precision(vec![0.0; n], q.add_diagonal(&d))?;
    let factor = cholesky(&qhat, model.ordering())?;
    let mean = factor.solve(&b);
    let quad: f64 = b.iter().zip(&mean).map(|(a, m)| a * m).sum();
    let yy: f64 = y.iter().map(|v| v * v).sum();
    let log_post = 0.5 * logdet_q - 0.5 * factor.log_det_precision() - y.len() as f64 * theta[0]
        + model.log_prior(theta)
        + 0.5 * quad
        - 0.5 * yy / s2;
    let posterior = qhat.with_mean(mean)?;
    Ok(ConditionalFit { log_post, posterior, factor })
}

pub fn log_posterior<M: HyperModel + ?Sized>(model: &M, theta: &[f64]) -> Result<f64> {
    Ok(conditional(model, theta)?.log_post)
}

struct NegLogPost<'a, M: ?Sized>(&'a M);

impl<M: HyperModel + ?Sized> CostFunction for NegLogPost<'_, M> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, theta: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        Ok(match log_posterior(self.0, theta) {
            Ok(v) if v.is_finite() => -v,
            _ => f64::INFINITY,
        })
    }
}

/// Mode of `π(θ | y)` by Nelder-Mead from `start`.
pub fn find_mode<M: HyperModel + ?Sized>(model: &M, start: &[f64]) -> Result<Vec<f64>> {
    let mut simplex = vec![start.to_vec()];
    for j in 0..start.len() {
        let mut v = start.to_vec();
        v[j] += 0.5;
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(1e-9)
        .map_err(|e| Error::invalid(format!("mode search: {e}")))?;
    let res = Executor::new(NegLogPost(model), solver)
        .configure(|s| s.max_iters(2000))
        .run()
        .map_err(|e| Error::invalid(format!("mode search: {e}")))?;
    let best = res.state().get_best_param().cloned().ok_or_else(|| Error::invalid("mode search found no point"))?;
    if !res.state().get_best_cost().is_finite() {
        return Err(Error::invalid("log posterior of θ is not finite anywhere visited"));
    }
    Ok(best)
}

/// Central-difference Hessian of `−log π(θ | y)`.
pub fn neg_hessian<M: HyperModel + ?Sized>(model: &M, theta: &[f64], h: f64) -> Result<DenseMatrix<f64>> {
    let d = theta.len();
    let f = |t: &[f64]| -> Result<f64> { Ok(-log_posterior(model, t)?) };
    let f0 = f(theta)?;
    let shifted = |i: usize, si: f64, j: usize, sj: f64| -> Result<f64> {
        let mut t = theta.to_vec();
        t[i] += si * h;
        t[j] += sj * h;
        f(&t)
    };
    let mut out = DenseMatrix::zeros(d, d);
    for i in 0..d {
        let v = (shifted(i, 1.0, i, 0.0)? - 2.0 * f0 + shifted(i, -1.0, i, 0.0)?) / (h * h);
        out[(i, i)] = v;
        for j in 0..i {
            let v = (shifted(i, 1.0, j, 1.0)? - shifted(i, 1.0, j, -1.0)? - shifted(i, -1.0, j, 1.0)?
                + shifted(i, -1.0, j, -1.0)?)
                / (4.0 * h * h);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// Mode and a lower Cholesky factor `C` with `C Cᵀ = H⁻¹`. If the numerical
/// Hessian is not positive definite its diagonal is used instead, floored.
#[derive(Debug, Clone)]
pub struct ModeFit {
    pub mode: Vec<f64>,
    pub hessian: DenseMatrix<f64>,
    pub cov_factor: DenseMatrix<f64>,
}

pub fn fit_mode<M: HyperModel + ?Sized>(model: &M, start: &[f64]) -> Result<ModeFit> {
    let mode = find_mode(model, start)?;
    let mut hessian = neg_hessian(model, &mode, 1e-3)?;
    let lh = match hessian.cholesky() {
        Ok(l) => l,
        Err(_) => {
            let d = hessian.diagonal().iter().map(|v| v.abs().max(1.0)).collect::<Vec<_>>();
            hessian = DenseMatrix::from_diagonal(&d);
            hessian.cholesky()?
        }
    };
    // H = L Lᵀ ⇒ H⁻¹ = L⁻ᵀ L⁻¹.
    let linv = lh.lower_inverse();
    let hinv = linv.transpose().matmul(&linv)?;
    let cov_factor = hinv.cholesky()?;
    Ok(ModeFit { mode, hessian, cov_factor })
}

/// Central composite design in standardized coordinates: centre, axial
/// points at `±√d` and the `2^d` corners of `[−1, 1]^d`.
pub fn ccd_design(d: usize) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; d]];
    let r = (d as f64).sqrt();
    for j in 0..d {
        for s in [1.0, -1.0] {
            let mut z = vec![0.0; d];
            z[j] = s * r;
            pts.push(z);
        }
    }
    for mask in 0..(1usize << d) {
        pts.push((0..d).map(|j| if mask >> j & 1 == 1 { -1.0 } else { 1.0 }).collect());
    }
    pts
}

fn affine(fit: &ModeFit, z: &[f64]) -> Vec<f64> {
    let cz = fit.cov_factor.mul_vec(z);
    fit.mode.iter().zip(cz).map(|(m, c)| m + c).collect()
}

/// CCD configurations weighted by `π(θ | y)`.
pub fn ccd_config_set<M: HyperModel + ?Sized>(model: &M, fit: &ModeFit) -> Result<ParamConfigSet<f64>> {
    design_config_set(model, fit, &ccd_design(fit.mode.len()))
}

/// Tensor grid of standardized points, one list of levels per dimension.
pub fn grid_design(levels: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut pts = vec![Vec::new()];
    for lv in levels {
        pts = pts
            .into_iter()
            .flat_map(|p| {
                lv.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    pts
}

/// Configurations at `mode + C z` for the given standardized points, weighted by `π(θ | y)`.
pub fn design_config_set<M: HyperModel + ?Sized>(model: &M, fit: &ModeFit, design: &[Vec<f64>]) -> Result<ParamConfigSet<f64>> {
    weighted_config_set(model, fit, design.iter().map(|z| (z.clone(), 0.0)).collect())
}

/// Probabilists' Gauss-Hermite nodes and weights for orders 1 to 5.
pub fn gauss_hermite(order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let r3 = 3f64.sqrt();
    Ok(match order {
        1 => (vec![0.0], vec![1.0]),
        2 => (vec![-1.0, 1.0], vec![0.5, 0.5]),
        3 => (vec![-r3, 0.0, r3], vec![1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0]),
        4 => {
            let (a, b) = ((3.0 - 6f64.sqrt()).sqrt(), (3.0 + 6f64.sqrt()).sqrt());
            let wa = (3.0 + 6f64.sqrt()) / 12.0;
            let wb = (3.0 - 6f64.sqrt()) / 12.0;
            (vec![-b, -a, a, b], vec![wb, wa, wa, wb])
        }
        5 => {
            let (a, b) = ((5.0 - 10f64.sqrt()).sqrt(), (5.0 + 10f64.sqrt()).sqrt());
            let wa = (7.0 + 2.0 * 10f64.sqrt()) / 60.0;
            let wb = (7.0 - 2.0 * 10f64.sqrt()) / 60.0;
            (vec![-b, -a, 0.0, a, b], vec![wb, wa, 8.0 / 15.0, wa, wb])
        }
        _ => return Err(Error::invalid("Gauss-Hermite order must be between 1 and 5")),
    })
}

/// Tensor Gauss-Hermite rule in the standardized coordinates, with weights
/// `wᵢ π(θᵢ | y) / φ(zᵢ)`.
pub fn gauss_hermite_config_set<M: HyperModel + ?Sized>(model: &M, fit: &ModeFit, orders: &[usize]) -> Result<ParamConfigSet<f64>> {
    if orders.len() != fit.mode.len() {
        return Err(Error::DimensionMismatch { expected: fit.mode.len(), found: orders.len() });
    }
    let mut pts = vec![(Vec::new(), 0.0)];
    for &o in orders {
        let (nodes, weights) = gauss_hermite(o)?;
        pts = pts
            .into_iter()
            .flat_map(|(z, lw): (Vec<f64>, f64)| {
                nodes.iter().zip(&weights).map(move |(&x, &w)| {
                    let mut q = z.clone();
                    q.push(x);
                    (q, lw + w.ln() + 0.5 * x * x)
                })
            })
            .collect();
    }
    weighted_config_set(model, fit, pts)
}

fn weighted_config_set<M: HyperModel + ?Sized>(model: &M, fit: &ModeFit, design: Vec<(Vec<f64>, f64)>) -> Result<ParamConfigSet<f64>> {
    let names = model.theta_names();
    let mut fits = Vec::new();
    for (z, log_base) in design {
        let theta = affine(fit, &z);
        match conditional(model, &theta) {
            Ok(c) if c.log_post.is_finite() => fits.push((theta, c.log_post + log_base, c)),
            _ => {}
        }
    }
    let top = fits.iter().map(|f| f.1).fold(f64::NEG_INFINITY, f64::max);
    let configs = fits
        .into_iter()
        .map(|(theta, lw, c)| ParamConfig {
            theta: names.iter().cloned().zip(theta).collect::<BTreeMap<_, _>>(),
            weight: (lw - top).exp(),
            posterior: c.posterior,
        })
        .collect();
    ParamConfigSet::new(configs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McmcConfig {
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Acceptance below this over the first `divergence_window` steps aborts.
    pub min_acceptance: f64,
    pub divergence_window: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self { burn_in: 2000, thin: 5, seed: 1, min_acceptance: 0.01, divergence_window: 10_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McmcStats {
    pub steps: usize,
    pub accepted: usize,
    pub draws: usize,
}

impl McmcStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.accepted as f64 / self.steps as f64
        }
    }
}

/// Joint Metropolis-within-Gibbs chain on `(θ, x)`: random-walk proposals for θ
/// with covariance `(2.38²/d) H⁻¹`, and an exact draw of `x | y, θ` whenever
/// θ moves. Retained draws of `x` are handed to `sink`.
pub fn run_full_chain<M: HyperModel + ?Sized>(
    model: &M,
    fit: &ModeFit,
    n_draws: usize,
    config: &McmcConfig,
    mut sink: impl FnMut(&[f64]),
) -> Result<McmcStats> {
    let d = fit.mode.len();
    let scale = 2.38 / (d as f64).sqrt();
    let mut rng = stream_rng(config.seed, 0x3C3C);
    let mut theta = fit.mode.clone();
    let mut cur = conditional(model, &theta)?;
    let mut x = sample(&cur.posterior, &cur.factor, &mut rng);
    let total = config.burn_in + n_draws * config.thin.max(1);
    let mut stats = McmcStats { steps: 0, accepted: 0, draws: 0 };
    for step in 1..=total {
        let z: Vec<f64> = (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let cz = fit.cov_factor.mul_vec(&z);
        let prop: Vec<f64> = theta.iter().zip(cz).map(|(t, c)| t + c).collect();
        let u: f64 = rng.random();
        if let Ok(next) = conditional(model, &prop) {
            if next.log_post.is_finite() && u.ln() < next.log_post - cur.log_post {
                theta = prop;
                cur = next;
                x = sample(&cur.posterior, &cur.factor, &mut rng);
                stats.accepted += 1;
            }
        }
        stats.steps = step;
        if step == config.divergence_window && stats.acceptance_rate() < config.min_acceptance {
            return Err(Error::ChainDivergence { rate: stats.acceptance_rate(), steps: step });
        }
        if step > config.burn_in && (step - config.burn_in) % config.thin.max(1) == 0 {
            sink(&x);
            stats.draws += 1;
        }
    }
    Ok(stats)
}

/// Exact draws from the discrete mixture `Σ wᵢ π(x | y, θᵢ)`.
pub fn run_discrete_sampler(
    set: &ParamConfigSet<f64>,
    n_draws: usize,
    seed: u64,
    mut sink: impl FnMut(&[f64]),
) -> Result<McmcStats> {
    let factors = set
        .configs()
        .iter()
        .map(|c| {
            let perm = crate::gmrf::fill_reducing_permutation(&c.posterior);
            cholesky(&c.posterior, &perm)
        })
        .collect::<Result<Vec<_>>>()?;
    let weights = set.weights();
    let mut rng = stream_rng(seed, 0xD15C);
    for _ in 0..n_draws {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = weights.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                pick = i;
                break;
            }
        }
        let x = sample(&set.configs()[pick].posterior, &factors[pick], &mut rng);
        sink(&x);
    }
    Ok(McmcStats { steps: n_draws, accepted: n_draws, draws: n_draws })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two iid N(0, φ²) nodes observed once each with noise σ; θ = (log σ, log φ).
    struct Toy {
        y: Vec<f64>,
        nodes: Vec<usize>,
        perm: Permutation,
    }

    impl HyperModel for Toy {
        fn dim(&self) -> usize {
            2
        }
        fn theta_names(&self) -> Vec<String> {
            vec!["log_sigma".into(), "log_phi".into()]
        }
        fn prior_precision(&self, theta: &[f64]) -> Result<SparseSymmetricMatrix<f64>> {
            let p = (-2.0 * theta[1]).exp();
            SparseSymmetricMatrix::from_triplets(2, &[(0, 0, p), (1, 1, p)])
        }
        fn log_prior(&self, theta: &[f64]) -> f64 {
            -0.5 * theta.iter().map(|t| t * t).sum::<f64>()
        }
        fn obs_nodes(&self) -> &[usize] {
            &self.nodes
        }
        fn obs_values(&self) -> &[f64] {
            &self.y
        }
        fn ordering(&self) -> &Permutation {
            &self.perm
        }
    }

    fn toy() -> Toy {
        Toy { y: vec![0.7, -1.2], nodes: vec![0, 1], perm: Permutation::identity(2) }
    }

    #[test]
    fn marginal_likelihood_matches_closed_form() {
        let m = toy();
        for theta in [[0.0f64, 0.0], [-0.5, 0.3], [0.4, -0.2]] {
            let (s2, p2) = ((2.0 * theta[0]).exp(), (2.0 * theta[1]).exp());
            let v = s2 + p2;
            // y_i ~ N(0, σ² + φ²) independently; drop the common −log 2π.
            let exact: f64 = m.y.iter().map(|y| -0.5 * v.ln() - 0.5 * y * y / v).sum::<f64>() + m.log_prior(&theta);
            let got = log_posterior(&m, &theta).unwrap();
            assert!((got - exact).abs() < 1e-10, "{got} {exact}");
        }
    }

    #[test]
    fn gauss_hermite_moments() {
        for order in 1..=5 {
            let (x, w) = gauss_hermite(order).unwrap();
            let m = |k: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(k)).sum::<f64>();
            assert!((m(0) - 1.0).abs() < 1e-14);
            assert!(m(1).abs() < 1e-14);
            if order >= 2 {
                assert!((m(2) - 1.0).abs() < 1e-12);
            }
            if order >= 3 {
                assert!((m(4) - 3.0).abs() < 1e-12);
            }
            if order >= 5 {
                assert!((m(8) - 105.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ccd_has_fifteen_points_in_three_dims() {
        let d = ccd_design(3);
        assert_eq!(d.len(), 15);
        assert!(d[1..7].iter().all(|z| (z.iter().map(|v| v * v).sum::<f64>() - 3.0).abs() < 1e-12));
    }

    #[test]
    fn mode_is_stationary() {
        let m = toy();
        let fit = fit_mode(&m, &[0.0, 0.0]).unwrap();
        let h = 1e-4;
        for j in 0..2 {
            let mut a = fit.mode.clone();
            let mut b = fit.mode.clone();
            a[j] += h;
            b[j] -= h;
            let g = (log_posterior(&m, &a).unwrap() - log_posterior(&m, &b).unwrap()) / (2.0 * h);
            assert!(g.abs() < 1e-3, "{g}");
        }
        let set = ccd_config_set(&m, &fit).unwrap();
        assert_eq!(set.len(), 9);
    }

    #[test]
    fn chain_runs_and_streams() {
        let m = toy();
        let fit = fit_mode(&m, &[0.0, 0.0]).unwrap();
        let mut count = 0;
        let cfg = McmcConfig { burn_in: 100, thin: 2, ..Default::default() };
        let stats = run_full_chain(&m, &fit, 300, &cfg, |x| {
            assert_eq!(x.len(), 2);
            count += 1;
        })
        .unwrap();
        assert_eq!(count, 300);
        assert!(stats.acceptance_rate() > 0.1);
    }
}
