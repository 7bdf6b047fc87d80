//! Handling of hyperparameter uncertainty: empirical Bayes (EB),
//! quantile correction (QC) and numerical integration over weighted
//! parameter configurations (NI).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excursions::{Engine, ExcursionProblem, ExcursionResult};
use crate::families::MarginalSummary;
use crate::gauss_prob::{ghk_probability, Bounds, IntegrationConfig, Method, ProbabilityEstimate};
use crate::gmrf::{marginal_variances, GaussianPosterior};
use crate::scalar::Scalar;
use crate::special::{norm_cdf, norm_isf, norm_quantile, norm_sf};

/// One hyperparameter configuration `θᵢ` with its weight and `π(x | y, θᵢ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamConfig<T> {
    pub theta: BTreeMap<String, f64>,
    pub weight: T,
    pub posterior: GaussianPosterior<T>,
}

/// Weighted configurations with weights normalised to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamConfigSet<T> {
    configs: Vec<ParamConfig<T>>,
}

impl<T: Scalar> ParamConfigSet<T> {
    pub fn new(mut configs: Vec<ParamConfig<T>>) -> Result<Self> {
        let first = configs.first().ok_or_else(|| Error::invalid("configuration set is empty"))?;
        let n = first.posterior.dim();
        let mut total = T::zero();
        for c in &configs {
            if !(c.weight >= T::zero()) || !c.weight.is_finite() {
                return Err(Error::invalid("configuration weights must be finite and non-negative"));
            }
            if c.posterior.dim() != n {
                return Err(Error::DimensionMismatch { expected: n, found: c.posterior.dim() });
            }
            total += c.weight;
        }
        if !(total > T::zero()) {
            return Err(Error::invalid("configuration weights sum to zero"));
        }
        for c in configs.iter_mut() {
            c.weight /= total;
        }
        Ok(Self { configs })
    }

    /// A single configuration: every method reduces to EB.
    pub fn single(posterior: GaussianPosterior<T>) -> Self {
        Self { configs: vec![ParamConfig { theta: BTreeMap::new(), weight: T::one(), posterior }] }
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.configs[0].posterior.dim()
    }

    pub fn configs(&self) -> &[ParamConfig<T>] {
        &self.configs
    }

    pub fn weights(&self) -> Vec<T> {
        self.configs.iter().map(|c| c.weight).collect()
    }

    /// Index of `θ₀`: the configuration with the largest weight (first on ties).
    pub fn designated(&self) -> usize {
        let mut best = 0;
        for (i, c) in self.configs.iter().enumerate() {
            if c.weight > self.configs[best].weight {
                best = i;
            }
        }
        best
    }

    pub fn designated_posterior(&self) -> &GaussianPosterior<T> {
        &self.configs[self.designated()].posterior
    }

    /// Marginals of the mixture `Σ wᵢ π(x | y, θᵢ)`.
    pub fn mixture(&self) -> Result<MixtureMarginals<T>> {
        let mut means = Vec::with_capacity(self.len());
        let mut sds = Vec::with_capacity(self.len());
        for c in &self.configs {
            means.push(c.posterior.mean().to_vec());
            sds.push(marginal_variances(&c.posterior)?.into_iter().map(|v| v.sqrt()).collect());
        }
        MixtureMarginals::new(self.weights(), means, sds)
    }
}

/// Per-node Gaussian mixture marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureMarginals<T> {
    weights: Vec<T>,
    /// `[component][node]`.
    means: Vec<Vec<T>>,
    sds: Vec<Vec<T>>,
}

impl<T: Scalar> MixtureMarginals<T> {
    pub fn new(weights: Vec<T>, means: Vec<Vec<T>>, sds: Vec<Vec<T>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        if means.len() != weights.len() || sds.len() != weights.len() {
            return Err(Error::DimensionMismatch { expected: weights.len(), found: means.len().min(sds.len()) });
        }
        let n = means[0].len();
        for (m, s) in means.iter().zip(&sds) {
            if m.len() != n || s.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: m.len().min(s.len()) });
            }
            if s.iter().any(|&v| !(v >= T::zero()) || !v.is_finite()) {
                return Err(Error::invalid("mixture standard deviations must be finite and non-negative"));
            }
        }
        let total: T = weights.iter().copied().sum();
        if !(total > T::zero()) || weights.iter().any(|&w| !(w >= T::zero())) {
            return Err(Error::invalid("mixture weights must be non-negative with a positive sum"));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { weights, means, sds })
    }

    pub fn gaussian(mean: Vec<T>, sd: Vec<T>) -> Result<Self> {
        Self::new(vec![T::one()], vec![mean], vec![sd])
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    fn fold(&self, i: usize, x: T, tail: impl Fn(f64, f64, f64) -> f64) -> T {
        let x = x.to64();
        let mut acc = 0.0;
        for c in 0..self.weights.len() {
            acc += self.weights[c].to64() * tail(x, self.means[c][i].to64(), self.sds[c][i].to64());
        }
        T::cast(acc.clamp(0.0, 1.0))
    }

    /// `P(x_i ≤ x)`.
    pub fn cdf(&self, i: usize, x: T) -> T {
        self.fold(i, x, |x, m, s| if s == 0.0 { if x >= m { 1.0 } else { 0.0 } } else { norm_cdf((x - m) / s) })
    }

    /// `P(x_i > x)`.
    pub fn sf(&self, i: usize, x: T) -> T {
        self.fold(i, x, |x, m, s| if s == 0.0 { if x < m { 1.0 } else { 0.0 } } else { norm_sf((x - m) / s) })
    }

    pub fn mean(&self, i: usize) -> T {
        (0..self.weights.len()).map(|c| self.weights[c] * self.means[c][i]).sum()
    }

    pub fn sd(&self, i: usize) -> T {
        let m = self.mean(i);
        let second: T = (0..self.weights.len())
            .map(|c| {
                let (mu, s) = (self.means[c][i], self.sds[c][i]);
                self.weights[c] * (s * s + (mu - m) * (mu - m))
            })
            .sum();
        second.max(T::zero()).sqrt()
    }

    /// Quantile by bracketing and safeguarded secant steps.
    pub fn quantile(&self, i: usize, p: T) -> T {
        let pf = p.to64();
        if pf <= 0.0 {
            return T::neg_infinity();
        }
        if pf >= 1.0 {
            return T::infinity();
        }
        let z = norm_quantile(pf);
        if self.weights.len() == 1 {
            return T::cast(self.means[0][i].to64() + self.sds[0][i].to64() * z);
        }
        // Every component quantile brackets the mixture quantile.
        let qs = (0..self.weights.len()).map(|c| self.means[c][i].to64() + self.sds[c][i].to64() * z);
        let (mut a, mut b) = qs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), q| (lo.min(q), hi.max(q)));
        let f = |x: f64| self.cdf(i, T::cast(x)).to64() - pf;
        let (mut fa, mut fb) = (f(a), f(b));
        if fa >= 0.0 {
            return T::cast(a);
        }
        if fb <= 0.0 {
            return T::cast(b);
        }
        let mut side = 0i8;
        for _ in 0..200 {
            if b - a <= 1e-12 * (1.0 + a.abs().max(b.abs())) {
                break;
            }
            // Illinois variant of regula falsi, with a bisection guard.
            let mut x = (a * fb - b * fa) / (fb - fa);
            if !(x > a && x < b) {
                x = 0.5 * (a + b);
            }
            let fx = f(x);
            if fx == 0.0 {
                return T::cast(x);
            }
            if fx < 0.0 {
                a = x;
                fa = fx;
                if side == -1 {
                    fb *= 0.5;
                }
                side = -1;
            } else {
                b = x;
                fb = fx;
                if side == 1 {
                    fa *= 0.5;
                }
                side = 1;
            }
        }
        T::cast(0.5 * (a + b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosteriorMethod {
    Eb,
    Qc,
    Ni,
}

impl PosteriorMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            PosteriorMethod::Eb => "eb",
            PosteriorMethod::Qc => "qc",
            PosteriorMethod::Ni => "ni",
        }
    }
}

/// Box probability under the designated configuration only.
pub fn eb_probability<T: Scalar>(
    set: &ParamConfigSet<T>,
    bounds: &Bounds<T>,
    config: &IntegrationConfig,
) -> Result<ProbabilityEstimate<T>> {
    ghk_probability(set.designated_posterior(), bounds, config)
}

/// Bounds for the θ₀ Gaussian with the same marginal exceedance
/// probabilities as the mixture, plus the nodes whose mixture CDF saturated.
#[derive(Debug, Clone, PartialEq)]
pub struct QcAdjustment<T> {
    pub bounds: Bounds<T>,
    pub overflow: Vec<usize>,
}

/// Maps mixture marginals onto a reference Gaussian, bound by bound.
#[derive(Debug, Clone)]
pub struct QuantileCorrection<T> {
    mixture: MixtureMarginals<T>,
    mean: Vec<T>,
    sd: Vec<T>,
}

impl<T: Scalar> QuantileCorrection<T> {
    pub fn new(mixture: MixtureMarginals<T>, gaussian: &GaussianPosterior<T>) -> Result<Self> {
        if mixture.dim() != gaussian.dim() {
            return Err(Error::DimensionMismatch { expected: gaussian.dim(), found: mixture.dim() });
        }
        let sd = marginal_variances(gaussian)?.into_iter().map(|v| v.sqrt()).collect();
        Ok(Self { mixture, mean: gaussian.mean().to_vec(), sd })
    }

    fn map(&self, i: usize, a: T, overflow: &mut bool) -> T {
        if !a.is_finite() {
            return a;
        }
        let cdf = self.mixture.cdf(i, a).to64();
        let sf = self.mixture.sf(i, a).to64();
        let z = if cdf <= 0.0 {
            *overflow = true;
            f64::NEG_INFINITY
        } else if sf <= 0.0 {
            *overflow = true;
            f64::INFINITY
        } else if cdf < 0.5 {
            norm_quantile(cdf)
        } else {
            norm_isf(sf)
        };
        if z.is_infinite() {
            return T::cast(z);
        }
        T::cast(self.mean[i].to64() + self.sd[i].to64() * z)
    }

    pub fn adjust(&self, bounds: &Bounds<T>) -> Result<QcAdjustment<T>> {
        let n = self.mean.len();
        if bounds.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: bounds.len() });
        }
        let mut lower = Vec::with_capacity(n);
        let mut upper = Vec::with_capacity(n);
        let mut overflow = Vec::new();
        for i in 0..n {
            let mut flag = false;
            lower.push(self.map(i, bounds.lower()[i], &mut flag));
            upper.push(self.map(i, bounds.upper()[i], &mut flag));
            if flag {
                overflow.push(i);
            }
        }
        Ok(QcAdjustment { bounds: Bounds::new(lower, upper)?, overflow })
    }
}

/// One-shot quantile correction of `bounds`.
pub fn qc_bounds<T: Scalar>(
    mixture: &MixtureMarginals<T>,
    gaussian: &GaussianPosterior<T>,
    bounds: &Bounds<T>,
) -> Result<QcAdjustment<T>> {
    QuantileCorrection::new(mixture.clone(), gaussian)?.adjust(bounds)
}

/// Box probability of the θ₀ Gaussian with quantile-corrected bounds.
pub fn qc_probability<T: Scalar>(
    set: &ParamConfigSet<T>,
    bounds: &Bounds<T>,
    config: &IntegrationConfig,
) -> Result<ProbabilityEstimate<T>> {
    let adj = qc_bounds(&set.mixture()?, set.designated_posterior(), bounds)?;
    ghk_probability(set.designated_posterior(), &adj.bounds, config)
}

/// `Σ wᵢ P(a < x < b | y, θᵢ)`, each term on the same random stream.
pub fn ni_probability<T: Scalar>(
    set: &ParamConfigSet<T>,
    bounds: &Bounds<T>,
    config: &IntegrationConfig,
) -> Result<ProbabilityEstimate<T>> {
    let (mut value, mut var, mut n_eff) = (T::zero(), T::zero(), T::zero());
    let mut degenerate = true;
    for c in set.configs() {
        let e = ghk_probability(&c.posterior, bounds, config)?;
        value += c.weight * e.value;
        var += c.weight * c.weight * e.std_error * e.std_error;
        n_eff += c.weight * e.n_effective;
        degenerate &= e.degenerate;
    }
    Ok(ProbabilityEstimate {
        value: value.min(T::one()),
        std_error: var.sqrt(),
        n_effective: n_eff,
        method: Method::Ghk,
        degenerate,
    })
}

pub fn posterior_probability<T: Scalar>(
    method: PosteriorMethod,
    set: &ParamConfigSet<T>,
    bounds: &Bounds<T>,
    config: &IntegrationConfig,
) -> Result<ProbabilityEstimate<T>> {
    match method {
        PosteriorMethod::Eb => eb_probability(set, bounds, config),
        PosteriorMethod::Qc => qc_probability(set, bounds, config),
        PosteriorMethod::Ni => ni_probability(set, bounds, config),
    }
}

pub fn eb_excursion<T: Scalar>(problem: &ExcursionProblem<T>, set: &ParamConfigSet<T>) -> Result<ExcursionResult<T>> {
    crate::excursions::excursion(problem, set.designated_posterior())
}

/// Ordering and bounds from the mixture marginals, integration under θ₀
/// with quantile-corrected limits.
pub fn qc_excursion<T: Scalar>(problem: &ExcursionProblem<T>, set: &ParamConfigSet<T>) -> Result<ExcursionResult<T>> {
    let mixture = set.mixture()?;
    let theta0 = set.designated_posterior();
    let correction = QuantileCorrection::new(mixture.clone(), theta0)?;
    let adjust = |b: &Bounds<T>| correction.adjust(b).map(|a| a.bounds);
    let summary = MarginalSummary::from_mixture(mixture, problem.level());
    Engine::new(problem, summary, vec![(T::one(), theta0)], Some(&adjust))?.solve()
}

/// Parallel passes over all configurations sharing the mixture ordering.
pub fn ni_excursion<T: Scalar>(problem: &ExcursionProblem<T>, set: &ParamConfigSet<T>) -> Result<ExcursionResult<T>> {
    let summary = MarginalSummary::from_mixture(set.mixture()?, problem.level());
    let components = set.configs().iter().map(|c| (c.weight, &c.posterior)).collect();
    Engine::new(problem, summary, components, None)?.solve()
}

pub fn posterior_excursion<T: Scalar>(
    method: PosteriorMethod,
    problem: &ExcursionProblem<T>,
    set: &ParamConfigSet<T>,
) -> Result<ExcursionResult<T>> {
    match method {
        PosteriorMethod::Eb => eb_excursion(problem, set),
        PosteriorMethod::Qc => qc_excursion(problem, set),
        PosteriorMethod::Ni => ni_excursion(problem, set),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::DenseMatrix;
    use crate::excursions::excursion;
    use crate::families::{Direction, Family};
    use crate::sparse::SparseSymmetricMatrix;
    use approx::assert_relative_eq;

    fn cov_posterior(mean: Vec<f64>, rho: f64, scale: f64) -> GaussianPosterior<f64> {
        let n = mean.len();
        let s = DenseMatrix::from_fn(n, n, |i, j| scale * rho.powi((i as i32 - j as i32).abs()));
        GaussianPosterior::with_covariance(mean, s).unwrap()
    }

    fn cfg(theta: f64, weight: f64, posterior: GaussianPosterior<f64>) -> ParamConfig<f64> {
        ParamConfig { theta: BTreeMap::from([("t".to_string(), theta)]), weight, posterior }
    }

    #[test]
    fn weights_are_normalised() {
        let p = cov_posterior(vec![0.0; 2], 0.3, 1.0);
        let s = ParamConfigSet::new(vec![cfg(0.0, 2.0, p.clone()), cfg(1.0, 6.0, p)]).unwrap();
        assert_eq!(s.weights(), vec![0.25, 0.75]);
        assert_eq!(s.designated(), 1);
        assert!(ParamConfigSet::<f64>::new(vec![]).is_err());
    }

    #[test]
    fn mixture_cdf_and_quantile() {
        let m = MixtureMarginals::new(vec![0.5, 0.5], vec![vec![0.0], vec![2.0]], vec![vec![1.0], vec![1.0]]).unwrap();
        let expected = (norm_cdf(0.0) + norm_cdf(-2.0)) / 2.0;
        assert_relative_eq!(m.cdf(0, 0.0), expected, epsilon = 1e-15);
        for p in [1e-6, 0.01, 0.26, 0.5, 0.9, 0.999_999] {
            let x = m.quantile(0, p);
            assert!((m.cdf(0, x) - p).abs() < 1e-10, "{p} {x}");
        }
        assert_eq!(m.mean(0), 1.0);
        assert_relative_eq!(m.sd(0), 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn qc_identity_and_example() {
        let p = cov_posterior(vec![1.0, -0.5], 0.4, 1.0);
        let m = ParamConfigSet::single(p.clone()).mixture().unwrap();
        let b = Bounds::new(vec![0.0, f64::NEG_INFINITY], vec![f64::INFINITY, 0.3]).unwrap();
        let a = qc_bounds(&m, &p, &b).unwrap();
        for i in 0..2 {
            assert!((a.bounds.lower()[i] - b.lower()[i]).abs() < 1e-10 || a.bounds.lower()[i] == b.lower()[i]);
            assert!((a.bounds.upper()[i] - b.upper()[i]).abs() < 1e-10 || a.bounds.upper()[i] == b.upper()[i]);
        }
        assert!(a.overflow.is_empty());

        let mix = MixtureMarginals::new(vec![0.5, 0.5], vec![vec![0.0], vec![2.0]], vec![vec![1.0], vec![1.0]]).unwrap();
        let g = cov_posterior(vec![1.0], 0.0, 1.0);
        let a = qc_bounds(&mix, &g, &Bounds::above(1, 0.0)).unwrap();
        let expected = 1.0 + norm_quantile((norm_cdf(0.0) + norm_cdf(-2.0)) / 2.0);
        assert_relative_eq!(a.bounds.lower()[0], expected, epsilon = 1e-12);
        assert_relative_eq!(a.bounds.lower()[0], 0.3612, epsilon = 1e-3);
        assert_eq!(a.bounds.upper()[0], f64::INFINITY);
    }

    #[test]
    fn qc_saturated_cdf_is_flagged() {
        let mix = MixtureMarginals::gaussian(vec![0.0], vec![0.0]).unwrap();
        let g = cov_posterior(vec![0.0], 0.0, 1.0);
        let a = qc_bounds(&mix, &g, &Bounds::above(1, 1.0)).unwrap();
        assert_eq!(a.overflow, vec![0]);
        assert_eq!(a.bounds.lower()[0], f64::INFINITY);
    }

    #[test]
    fn ni_single_config_is_eb() {
        let p = cov_posterior(vec![0.5, 0.4, 0.8], 0.5, 1.0);
        let s = ParamConfigSet::single(p);
        let b = Bounds::above(3, 0.0);
        let c = IntegrationConfig { n_particles: 1000, ..Default::default() };
        assert_eq!(ni_probability(&s, &b, &c).unwrap(), eb_probability(&s, &b, &c).unwrap());
    }

    #[test]
    fn ni_identical_configs() {
        let p = cov_posterior(vec![0.5, 0.4, 0.8], 0.5, 1.0);
        let one = ParamConfigSet::single(p.clone());
        let two = ParamConfigSet::new(vec![cfg(0.0, 0.3, p.clone()), cfg(0.0, 0.7, p)]).unwrap();
        let b = Bounds::above(3, 0.0);
        let c = IntegrationConfig { n_particles: 1000, ..Default::default() };
        let e1 = ni_probability(&one, &b, &c).unwrap();
        let e2 = ni_probability(&two, &b, &c).unwrap();
        assert_relative_eq!(e1.value, e2.value, max_relative = 1e-14);
    }

    #[test]
    fn ni_excursion_single_config_matches_eb() {
        let q = SparseSymmetricMatrix::from_triplets(3, &[(0, 0, 2.0), (1, 0, -0.5), (1, 1, 2.0), (2, 2, 1.0)]).unwrap();
        let p = GaussianPosterior::with_precision(vec![2.0, 1.5, -1.0], q).unwrap();
        let problem = ExcursionProblem::new(
            Family::one_param(Direction::Positive, 0.0),
            0.1,
            IntegrationConfig { n_particles: 1000, ..Default::default() },
        )
        .unwrap();
        let a = excursion(&problem, &p).unwrap();
        let b = ni_excursion(&problem, &ParamConfigSet::single(p)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ni_convexity() {
        let p1 = cov_posterior(vec![0.5; 4], 0.5, 1.0);
        let p2 = cov_posterior(vec![1.5; 4], 0.5, 2.0);
        let s = ParamConfigSet::new(vec![cfg(0.0, 0.4, p1.clone()), cfg(1.0, 0.6, p2.clone())]).unwrap();
        let b = Bounds::above(4, 0.0);
        let c = IntegrationConfig { n_particles: 2000, ..Default::default() };
        let e = ni_probability(&s, &b, &c).unwrap();
        let a1 = ghk_probability(&p1, &b, &c).unwrap().value;
        let a2 = ghk_probability(&p2, &b, &c).unwrap().value;
        assert!(e.value >= a1.min(a2) && e.value <= a1.max(a2));
    }
}
