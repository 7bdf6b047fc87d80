//! Sequential estimation of Gaussian box probabilities
//! `P(a < x < b)` for `x ~ N(μ, Q⁻¹)`.
//!
//! The workhorse is a GHK particle filter running backwards through the
//! factor positions of a [`CholeskyFactor`]: position `n-1` is integrated
//! first, then `n-2` given it, and so on. Extending the integrated set by
//! one variable costs one pass over the particles, so the probability of
//! every prefix of an admission order is available from a single run.
//!
//! A Genz separation-of-variables QMC rule and crude Monte Carlo are
//! provided as independent oracles.

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::gmrf::{cholesky, fill_reducing_permutation, sample, CholeskyFactor, GaussianPosterior};
use crate::scalar::Scalar;
use crate::special::{interval_mass, truncated_std_normal, MIN_INTERVAL_MASS};

/// Tuning of the probability estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegrationConfig {
    /// Number of GHK particles.
    pub n_particles: usize,
    /// Resample when `ESS < ess_fraction · N`.
    pub ess_fraction: f64,
    /// Disable to get the plain sequential importance sampler.
    pub resample: bool,
    pub seed: u64,
    pub qmc_points: usize,
    pub qmc_randomizations: usize,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            n_particles: 10_000,
            ess_fraction: 0.5,
            resample: true,
            seed: 1,
            qmc_points: 1 << 14,
            qmc_randomizations: 8,
        }
    }
}

impl IntegrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 2 {
            return Err(Error::invalid("n_particles must be at least 2"));
        }
        if !(self.ess_fraction > 0.0 && self.ess_fraction <= 1.0) {
            return Err(Error::invalid("ess_fraction must lie in (0, 1]"));
        }
        if self.qmc_points < 16 {
            return Err(Error::invalid("qmc_points must be at least 16"));
        }
        if self.qmc_randomizations < 2 {
            return Err(Error::invalid("qmc_randomizations must be at least 2"));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_particles(mut self, n: usize) -> Self {
        self.n_particles = n;
        self
    }
}

/// Integration limits in original node indexing; infinities are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds<T> {
    lower: Vec<T>,
    upper: Vec<T>,
}

impl<T: Scalar> Bounds<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch { expected: lower.len(), found: upper.len() });
        }
        for (i, (&a, &b)) in lower.iter().zip(&upper).enumerate() {
            if a.is_nan() || b.is_nan() {
                return Err(Error::invalid(format!("NaN bound at {i}")));
            }
            if a.is_finite() && b.is_finite() && !(a < b) {
                return Err(Error::EmptyInterval { index: i });
            }
            if a == T::infinity() && b == T::neg_infinity() {
                return Err(Error::EmptyInterval { index: i });
            }
        }
        Ok(Self { lower, upper })
    }

    /// `(-∞, ∞)` for every variable.
    pub fn unbounded(n: usize) -> Self {
        Self { lower: vec![T::neg_infinity(); n], upper: vec![T::infinity(); n] }
    }

    /// `(level, ∞)` for every variable.
    pub fn above(n: usize, level: T) -> Self {
        Self { lower: vec![level; n], upper: vec![T::infinity(); n] }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.lower.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    #[inline]
    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    #[inline]
    pub fn upper(&self) -> &[T] {
        &self.upper
    }

    pub fn contains(&self, x: &[T]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&a, &b))| v > a && v < b)
    }
}

/// Which estimator produced a [`ProbabilityEstimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "GHK")]
    Ghk,
    /// Genz transform with a randomly shifted Richtmyer (Kronecker) rule.
    #[serde(rename = "QMC-richtmyer")]
    Qmc,
    #[serde(rename = "MC")]
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbabilityEstimate<T> {
    pub value: T,
    pub std_error: T,
    pub n_effective: T,
    pub method: Method,
    /// Every particle weight vanished; `value` is 0.
    pub degenerate: bool,
}

impl<T: Scalar> ProbabilityEstimate<T> {
    /// Combined standard error of the difference of two independent estimates.
    pub fn combined_error(&self, other: &Self) -> T {
        (self.std_error * self.std_error + other.std_error * other.std_error).sqrt()
    }
}

/// Deterministic random stream for a stage of a computation.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// GHK particle state after integrating the last `depth` factor positions.
#[derive(Debug, Clone)]
pub struct ParticleSystem<'a, T> {
    factor: &'a CholeskyFactor<T>,
    /// Mean and limits in factor position order.
    mean: Vec<T>,
    lower: Vec<T>,
    upper: Vec<T>,
    n_particles: usize,
    depth: usize,
    /// `dev[pos][p] = x_pos − μ_pos` of particle `p`, for integrated positions.
    dev: Vec<Vec<T>>,
    log_w: Vec<T>,
    /// Log of the product of mean weights at past resampling steps.
    log_const: T,
    /// Relative variance contributed by completed resampling segments.
    rel_var: T,
    n_resamples: usize,
    ess_fraction: T,
    resample: bool,
    rng: ChaCha8Rng,
}

/// Starts a GHK pass and integrates the last factor position.
pub fn ghk_init<'a, T: Scalar>(
    posterior: &GaussianPosterior<T>,
    factor: &'a CholeskyFactor<T>,
    bounds: &Bounds<T>,
    config: &IntegrationConfig,
) -> Result<ParticleSystem<'a, T>> {
    let mut sys = ParticleSystem::new(posterior, factor, bounds, config, 0)?;
    sys.extend(1)?;
    Ok(sys)
}

/// Integrates `count` further variables.
pub fn ghk_extend<T: Scalar>(mut state: ParticleSystem<'_, T>, count: usize) -> Result<ParticleSystem<'_, T>> {
    state.extend(count)?;
    Ok(state)
}

impl<'a, T: Scalar> ParticleSystem<'a, T> {
    /// An empty (depth 0) system on its own random stream.
    pub fn new(
        posterior: &GaussianPosterior<T>,
        factor: &'a CholeskyFactor<T>,
        bounds: &Bounds<T>,
        config: &IntegrationConfig,
        stream: u64,
    ) -> Result<Self> {
        config.validate()?;
        let n = factor.dim();
        if posterior.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, found: posterior.dim() });
        }
        if bounds.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: bounds.len() });
        }
        let perm = factor.permutation();
        let pick = |v: &[T]| perm.forward().iter().map(|&i| v[i]).collect::<Vec<T>>();
        Ok(Self {
            factor,
            mean: pick(posterior.mean()),
            lower: pick(bounds.lower()),
            upper: pick(bounds.upper()),
            n_particles: config.n_particles,
            depth: 0,
            dev: vec![Vec::new(); n],
            log_w: vec![T::zero(); config.n_particles],
            log_const: T::zero(),
            rel_var: T::zero(),
            n_resamples: 0,
            ess_fraction: T::cast(config.ess_fraction),
            resample: config.resample,
            rng: stream_rng(config.seed, stream),
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.factor.dim()
    }

    #[inline]
    pub fn depth(&self) -> usize {
        self.depth
    }

    #[inline]
    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn n_resamples(&self) -> usize {
        self.n_resamples
    }

    pub fn factor(&self) -> &'a CholeskyFactor<T> {
        self.factor
    }

    /// Original node integrated at the next extension, if any remain.
    pub fn next_node(&self) -> Option<usize> {
        (self.depth < self.dim()).then(|| self.factor.permutation().node(self.dim() - 1 - self.depth))
    }

    /// Log-weights of the particles (relative to the resampling constant).
    pub fn log_weights(&self) -> &[T] {
        &self.log_w
    }

    /// Sum of weights, sum of squared weights and the max log-weight.
    fn weight_moments(&self) -> (T, T, T) {
        let max = self.log_w.iter().copied().fold(T::neg_infinity(), T::max);
        if max == T::neg_infinity() {
            return (T::zero(), T::zero(), max);
        }
        let (mut s, mut s2) = (T::zero(), T::zero());
        for &lw in &self.log_w {
            let w = (lw - max).exp();
            s += w;
            s2 += w * w;
        }
        (s, s2, max)
    }

    /// Effective sample size `(Σw)² / Σw²`.
    pub fn ess(&self) -> T {
        let (s, s2, _) = self.weight_moments();
        if s2 == T::zero() {
            T::zero()
        } else {
            s * s / s2
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.log_w.iter().all(|&w| w == T::neg_infinity())
    }

    /// Running estimate of the probability of the integrated variables.
    pub fn estimate(&self) -> ProbabilityEstimate<T> {
        let n = T::cast(self.n_particles as f64);
        let (s, s2, max) = self.weight_moments();
        if s == T::zero() {
            return ProbabilityEstimate {
                value: T::zero(),
                std_error: T::zero(),
                n_effective: T::zero(),
                method: Method::Ghk,
                degenerate: true,
            };
        }
        let ess = s * s / s2;
        let value = (self.log_const + max + (s / n).ln()).exp().min(T::one());
        let seg = (T::one() / ess - T::one() / n).max(T::zero());
        let std_error = value * (self.rel_var + seg).sqrt();
        ProbabilityEstimate { value, std_error, n_effective: ess, method: Method::Ghk, degenerate: false }
    }

    /// Integrates the next `count` factor positions.
    pub fn extend(&mut self, count: usize) -> Result<()> {
        if self.depth + count > self.dim() {
            return Err(Error::invalid(format!(
                "cannot extend depth {} by {count} beyond dimension {}",
                self.depth,
                self.dim()
            )));
        }
        for _ in 0..count {
            self.step();
            if self.resample && !self.is_degenerate() {
                let n = T::cast(self.n_particles as f64);
                if self.ess() < self.ess_fraction * n {
                    self.resample_to(self.n_particles);
                }
            }
        }
        Ok(())
    }

    fn step(&mut self) {
        let n = self.dim();
        let pos = n - 1 - self.depth;
        let lower = self.factor.lower();
        let lii = lower.diag(pos);
        let (rows, vals) = lower.below_diagonal(pos);
        let np = self.n_particles;

        let mut shift = vec![T::zero(); np];
        for (&j, &l) in rows.iter().zip(vals) {
            for (s, &d) in shift.iter_mut().zip(&self.dev[j]) {
                *s += l * d;
            }
        }
        let base_lo = lii * (self.lower[pos] - self.mean[pos]);
        let base_hi = lii * (self.upper[pos] - self.mean[pos]);
        let vacuous = self.lower[pos] == T::neg_infinity() && self.upper[pos] == T::infinity();

        let mut col = vec![T::zero(); np];
        for p in 0..np {
            let u: f64 = self.rng.sample(Open01);
            let lo = (base_lo + shift[p]).to64();
            let hi = (base_hi + shift[p]).to64();
            let z = if self.log_w[p] == T::neg_infinity() {
                fallback_point(lo, hi)
            } else if vacuous {
                crate::special::norm_quantile(u)
            } else {
                let mass = interval_mass(lo, hi);
                if mass < MIN_INTERVAL_MASS {
                    self.log_w[p] = T::neg_infinity();
                    fallback_point(lo, hi)
                } else {
                    self.log_w[p] += T::cast(mass.ln());
                    truncated_std_normal(lo, hi, u).unwrap_or_else(|_| fallback_point(lo, hi))
                }
            };
            col[p] = (T::cast(z) - shift[p]) / lii;
        }
        self.dev[pos] = col;
        self.depth += 1;
    }

    /// Switches the particle system to another random stream.
    pub fn reseed(&mut self, seed: u64, stream: u64) {
        self.rng = stream_rng(seed, stream);
    }

    /// Systematic resampling to `target` equally weighted particles,
    /// preserving the running estimate.
    pub fn resample_to(&mut self, target: usize) {
        let (s, s2, max) = self.weight_moments();
        if s == T::zero() || target == 0 {
            return;
        }
        let n_old = T::cast(self.n_particles as f64);
        let ess = s * s / s2;
        self.rel_var += (T::one() / ess - T::one() / n_old).max(T::zero());
        self.log_const += max + (s / n_old).ln();

        let cumulative: Vec<f64> = self
            .log_w
            .iter()
            .scan(0.0f64, |acc, &lw| {
                *acc += (lw - max).exp().to64();
                Some(*acc)
            })
            .collect();
        let total = *cumulative.last().expect("non-empty");
        let start: f64 = self.rng.sample(Open01);
        let step = total / target as f64;
        let mut idx = Vec::with_capacity(target);
        let mut k = 0usize;
        for m in 0..target {
            let t = (start + m as f64) * step;
            while k + 1 < cumulative.len() && cumulative[k] < t {
                k += 1;
            }
            idx.push(k);
        }
        let n = self.dim();
        for pos in n - self.depth..n {
            let old = &self.dev[pos];
            self.dev[pos] = idx.iter().map(|&i| old[i]).collect();
        }
        self.n_particles = target;
        self.log_w = vec![T::zero(); target];
        self.n_resamples += 1;
    }
}

fn fallback_point(lo: f64, hi: f64) -> f64 {
    if lo.is_finite() {
        lo
    } else if hi.is_finite() {
        hi
    } else {
        0.0
    }
}

/// Full-depth GHK estimate of `P(a < x < b)` under a fill-reducing ordering.
pub fn ghk_probability<T: Scalar>(
    posterior: &GaussianPosterior<T>,
    bounds: &Bounds<T>,
    config: &IntegrationConfig,
) -> Result<ProbabilityEstimate<T>> {
    let perm = fill_reducing_permutation(posterior);
    let factor = cholesky(posterior, &perm)?;
    let mut sys = ParticleSystem::new(posterior, &factor, bounds, config, 0)?;
    sys.extend(posterior.dim())?;
    Ok(sys.estimate())
}

/// Genz separation-of-variables transform integrated with a randomly shifted
/// Richtmyer lattice (square-root-of-prime generators, tent periodisation).
pub fn qmc_genz<T: Scalar>(
    mean: &[T],
    covariance: &DenseMatrix<T>,
    bounds: &Bounds<T>,
    config: &IntegrationConfig,
) -> Result<ProbabilityEstimate<T>> {
    config.validate()?;
    let n = mean.len();
    if covariance.rows() != n || bounds.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: covariance.rows().min(bounds.len()) });
    }
    let c = covariance.cholesky()?;
    let c64 = DenseMatrix::from_fn(n, n, |i, j| c[(i, j)].to64());
    let a: Vec<f64> = (0..n).map(|i| (bounds.lower()[i] - mean[i]).to64()).collect();
    let b: Vec<f64> = (0..n).map(|i| (bounds.upper()[i] - mean[i]).to64()).collect();

    let integrand = |w: &[f64], y: &mut [f64]| -> f64 {
        let mut f = 1.0;
        for i in 0..n {
            let s: f64 = (0..i).map(|j| c64[(i, j)] * y[j]).sum();
            let cii = c64[(i, i)];
            let lo = (a[i] - s) / cii;
            let hi = (b[i] - s) / cii;
            let mass = interval_mass(lo, hi);
            f *= mass;
            if f < MIN_INTERVAL_MASS {
                return 0.0;
            }
            if i + 1 < n {
                y[i] = truncated_std_normal(lo, hi, w[i]).unwrap_or_else(|_| fallback_point(lo, hi));
            }
        }
        f
    };

    let gens: Vec<f64> = first_primes(n.saturating_sub(1)).iter().map(|&p| (p as f64).sqrt().fract()).collect();
    let mut rng = stream_rng(config.seed, 0x51);
    let reps = config.qmc_randomizations;
    let mut estimates = Vec::with_capacity(reps);
    let mut w = vec![0.0; n.saturating_sub(1)];
    let mut y = vec![0.0; n];
    for _ in 0..reps {
        let shift: Vec<f64> = (0..w.len()).map(|_| rng.random::<f64>()).collect();
        let mut acc = 0.0;
        for k in 1..=config.qmc_points {
            for (j, wj) in w.iter_mut().enumerate() {
                let t = (k as f64 * gens[j] + shift[j]).fract();
                *wj = (2.0 * t - 1.0).abs().clamp(1e-16, 1.0 - 1e-16);
            }
            acc += integrand(&w, &mut y);
        }
        estimates.push(acc / config.qmc_points as f64);
    }
    let m = estimates.iter().sum::<f64>() / reps as f64;
    let var = estimates.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (reps as f64 - 1.0);
    Ok(ProbabilityEstimate {
        value: T::cast(m.clamp(0.0, 1.0)),
        std_error: T::cast((var / reps as f64).sqrt()),
        n_effective: T::cast((config.qmc_points * reps) as f64),
        method: Method::Qmc,
        degenerate: false,
    })
}

/// Fraction of exact posterior draws falling inside the box.
pub fn mc_bruteforce<T: Scalar, R: Rng + ?Sized>(
    posterior: &GaussianPosterior<T>,
    bounds: &Bounds<T>,
    n_samples: usize,
    rng: &mut R,
) -> Result<ProbabilityEstimate<T>> {
    if bounds.len() != posterior.dim() {
        return Err(Error::DimensionMismatch { expected: posterior.dim(), found: bounds.len() });
    }
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be positive"));
    }
    let perm = fill_reducing_permutation(posterior);
    let factor = cholesky(posterior, &perm)?;
    let hits = (0..n_samples).filter(|_| bounds.contains(&sample(posterior, &factor, rng))).count();
    let p = hits as f64 / n_samples as f64;
    Ok(ProbabilityEstimate {
        value: T::cast(p),
        std_error: T::cast((p * (1.0 - p) / n_samples as f64).sqrt()),
        n_effective: T::cast(n_samples as f64),
        method: Method::Mc,
        degenerate: false,
    })
}

fn first_primes(k: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(k);
    let mut c = 2u64;
    while primes.len() < k {
        if primes.iter().take_while(|&&p| p * p <= c).all(|&p| c % p != 0) {
            primes.push(c);
        }
        c += 1;
    }
    primes
}
