//! One-dimensional process with exponential covariance and a piecewise
//! linear mean, observed with noise and kriged to a regular grid.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dense::DenseMatrix;
use crate::error::Result;
use crate::gauss_prob::stream_rng;
use crate::gmrf::GaussianPosterior;
use crate::harness::covariance::exponential_cov;
use crate::harness::{SimSpec, Simulation};

/// Prior mean: a tent peaking at `s = 1`.
pub fn example1_mean(s: f64) -> f64 {
    if s < 1.0 {
        s - 0.5
    } else {
        1.5 - s
    }
}

/// Exact draw of the process at sorted locations via its Markov recursion.
fn ou_path<R: Rng + ?Sized>(s: &[f64], lambda: f64, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(s.len());
    let mut prev: Option<(f64, f64)> = None;
    for &t in s {
        let z: f64 = rng.sample(StandardNormal);
        let v = match prev {
            None => z,
            Some((tp, xp)) => {
                let r = exponential_cov(t - tp, lambda);
                r * xp + (1.0 - r * r).max(0.0).sqrt() * z
            }
        };
        out.push(v);
        prev = Some((t, v));
    }
    out
}

/// Kriging posterior of the prediction grid given observations.
pub fn krige(grid: &[f64], obs_at: &[f64], y: &[f64], lambda: f64, sigma: f64) -> Result<GaussianPosterior<f64>> {
    let n = grid.len();
    let m = obs_at.len();
    let prior_mean: Vec<f64> = grid.iter().map(|&s| example1_mean(s)).collect();
    let prior = DenseMatrix::from_fn(n, n, |i, j| exponential_cov(grid[i] - grid[j], lambda));
    if m == 0 {
        return GaussianPosterior::with_covariance(prior_mean, prior);
    }
    let k = DenseMatrix::from_fn(m, m, |i, j| {
        exponential_cov(obs_at[i] - obs_at[j], lambda) + if i == j { sigma * sigma } else { 0.0 }
    });
    let lk = k.cholesky()?;
    let resid: Vec<f64> = obs_at.iter().zip(y).map(|(&s, &v)| v - example1_mean(s)).collect();
    let alpha = lk.cholesky_solve(&resid);
    // W = L⁻¹ Σ_op, one prediction point per column, stored row-major by point.
    let w: Vec<Vec<f64>> = grid
        .iter()
        .map(|&g| lk.solve_lower(&obs_at.iter().map(|&s| exponential_cov(g - s, lambda)).collect::<Vec<_>>()))
        .collect();
    let mean: Vec<f64> = grid
        .iter()
        .enumerate()
        .map(|(i, &g)| prior_mean[i] + obs_at.iter().zip(&alpha).map(|(&s, &a)| exponential_cov(g - s, lambda) * a).sum::<f64>())
        .collect();
    let mut cov = DenseMatrix::from_fn(n, n, |i, j| if j <= i { prior[(i, j)] - dot(&w[i], &w[j]) } else { 0.0 });
    for i in 0..n {
        for j in i + 1..n {
            cov[(i, j)] = cov[(j, i)];
        }
    }
    GaussianPosterior::with_covariance(mean, cov)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Simulates truth and data, then returns the kriging posterior on the grid.
pub fn simulate_example1(spec: &SimSpec) -> Result<Simulation> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, 0xE1);
    let n = spec.grid;
    let grid: Vec<f64> = (0..n).map(|i| 2.0 * i as f64 / (n - 1) as f64).collect();
    let obs_at: Vec<f64> = (0..spec.n_obs).map(|_| rng.random::<f64>() * 2.0).collect();

    let mut all: Vec<(f64, Option<usize>, Option<usize>)> = grid.iter().enumerate().map(|(i, &s)| (s, Some(i), None)).collect();
    all.extend(obs_at.iter().enumerate().map(|(k, &s)| (s, None, Some(k))));
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let locs: Vec<f64> = all.iter().map(|a| a.0).collect();
    let path = ou_path(&locs, spec.lambda, &mut rng);
    let mut truth = vec![0.0; n];
    let mut latent_obs = vec![0.0; spec.n_obs];
    for ((s, g, o), v) in all.into_iter().zip(path) {
        let x = v + example1_mean(s);
        if let Some(i) = g {
            truth[i] = x;
        }
        if let Some(k) = o {
            latent_obs[k] = x;
        }
    }
    let y: Vec<f64> = latent_obs
        .iter()
        .map(|&x| x + spec.sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let posterior = krige(&grid, &obs_at, &y, spec.lambda, spec.sigma)?;
    Ok(Simulation {
        posterior,
        truth,
        observations: y,
        obs_locations: obs_at.into_iter().map(|s| vec![s]).collect(),
        coords: grid.into_iter().map(|s| vec![s]).collect(),
        model: None,
    })
}
