pub mod dense;
pub mod error;
pub mod excursions;
pub mod families;
pub mod gauss_prob;
pub mod gmrf;
pub mod harness;
pub mod io;
pub mod ordering;
pub mod posterior_methods;
pub mod scalar;
pub mod sparse;
pub mod special;

pub use error::{Error, Result};

/// Double-precision aliases.
pub type Posterior = gmrf::GaussianPosterior<f64>;
pub type Problem = excursions::ExcursionProblem<f64>;
pub type Excursion = excursions::ExcursionResult<f64>;
pub type ConfigSet = posterior_methods::ParamConfigSet<f64>;
pub type Estimate = gauss_prob::ProbabilityEstimate<f64>;

/// Single-precision aliases.
pub type PosteriorF32 = gmrf::GaussianPosterior<f32>;
pub type ExcursionF32 = excursions::ExcursionResult<f32>;
