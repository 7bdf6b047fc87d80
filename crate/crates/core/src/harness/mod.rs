//! Simulation studies: data generators for the three reference examples,
//! hyperparameter integration, posterior samplers and coverage evaluation.

pub mod coverage;
pub mod covariance;
pub mod example1;
pub mod lattice;
pub mod mcmc;
pub mod verify;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmrf::GaussianPosterior;

pub use example1::simulate_example1;
pub use lattice::{simulate_example2_3, Lattice, LatticeModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExampleId {
    Ex1,
    Ex2,
    Ex3,
}

impl fmt::Display for ExampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExampleId::Ex1 => "ex1",
            ExampleId::Ex2 => "ex2",
            ExampleId::Ex3 => "ex3",
        })
    }
}

impl FromStr for ExampleId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ex1" | "1" => Ok(ExampleId::Ex1),
            "ex2" | "2" => Ok(ExampleId::Ex2),
            "ex3" | "3" => Ok(ExampleId::Ex3),
            _ => Err(Error::invalid(format!("unknown example '{s}'"))),
        }
    }
}

/// Parameters of one simulated data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSpec {
    pub example: ExampleId,
    /// Grid points (Example 1) or nodes per side (lattice examples).
    pub grid: usize,
    pub n_obs: usize,
    pub sigma: f64,
    /// Exponential covariance rate (Example 1).
    pub lambda: f64,
    pub kappa2: f64,
    pub phi: f64,
    /// Side length of the lattice domain.
    pub extent: f64,
    /// Prior sd of each log hyperparameter.
    pub prior_sd: f64,
    pub seed: u64,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self::default_for(ExampleId::Ex1)
    }
}

impl SimSpec {
    pub fn default_for(example: ExampleId) -> Self {
        let base = SimSpec {
            example,
            grid: 80,
            n_obs: 1000,
            sigma: 0.1,
            lambda: 1.0,
            kappa2: 0.5,
            phi: 1.0,
            extent: 10.0,
            prior_sd: 1.0,
            seed: 1,
        };
        match example {
            ExampleId::Ex1 => SimSpec { grid: 1000, n_obs: 500, sigma: EX1_SIGMA, ..base },
            ExampleId::Ex2 => base,
            ExampleId::Ex3 => SimSpec { kappa2: 2.0, sigma: 0.5, ..base },
        }
    }

    /// Lattice example shrunk to `side × side` with the observation density kept.
    pub fn lattice_scaled(example: ExampleId, side: usize) -> Self {
        let full = Self::default_for(example);
        let n_obs = ((full.n_obs * side * side) as f64 / (full.grid * full.grid) as f64).round().max(1.0) as usize;
        SimSpec { grid: side, n_obs, ..full }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive and finite")))
            }
        };
        if self.grid < 2 {
            return Err(Error::invalid("grid must have at least 2 points"));
        }
        positive(self.sigma, "sigma")?;
        positive(self.prior_sd, "prior_sd")?;
        match self.example {
            ExampleId::Ex1 => positive(self.lambda, "lambda"),
            _ => {
                positive(self.kappa2, "kappa2")?;
                positive(self.phi, "phi")?;
                positive(self.extent, "extent")
            }
        }
    }
}

/// Noise sd used for Example 1.
pub const EX1_SIGMA: f64 = 0.1;

/// One simulated data set and the posterior of the latent field at the
/// generating parameters.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub posterior: GaussianPosterior<f64>,
    pub truth: Vec<f64>,
    pub observations: Vec<f64>,
    pub obs_locations: Vec<Vec<f64>>,
    pub coords: Vec<Vec<f64>>,
    /// Hyperparameter model, for the lattice examples.
    pub model: Option<LatticeModel>,
}

pub fn simulate(spec: &SimSpec) -> Result<Simulation> {
    match spec.example {
        ExampleId::Ex1 => simulate_example1(spec),
        ExampleId::Ex2 | ExampleId::Ex3 => simulate_example2_3(spec),
    }
}
