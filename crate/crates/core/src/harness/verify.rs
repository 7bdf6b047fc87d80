//! End-to-end verification experiments for the three examples.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::excursions::{excursion, ExcursionProblem, ExcursionResult};
use crate::families::{Direction, Family, FamilyKind};
use crate::gauss_prob::{stream_rng, IntegrationConfig};
use crate::gmrf::{cholesky, fill_reducing_permutation, sample};
use crate::harness::coverage::{alpha_grid, CoverageAccumulator, CoverageReport};
use crate::harness::mcmc::{ccd_config_set, fit_mode, run_discrete_sampler, run_full_chain, McmcConfig};
use crate::harness::{simulate, ExampleId, SimSpec};
use crate::posterior_methods::{posterior_excursion, PosteriorMethod};

/// Posterior sampler used to draw the fields a set is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    Fixed,
    Full,
    Discrete,
}

impl Sampler {
    pub fn as_str(self) -> &'static str {
        match self {
            Sampler::Fixed => "fixed",
            Sampler::Full => "full",
            Sampler::Discrete => "discrete",
        }
    }
}

/// Level and α at which the example sets are computed.
pub const VERIFY_LEVEL: f64 = 0.0;
pub const VERIFY_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Serialize)]
pub struct Ex1Outcome {
    #[serde(skip)]
    pub report: CoverageReport,
    pub n_draws: u64,
    pub set_size: usize,
    pub max_abs_diff: f64,
}

/// Positive 0-excursion function of a kriging posterior, checked against
/// exact posterior draws at the known parameters.
pub fn verify_ex1(spec: &SimSpec, draws: usize, integration: &IntegrationConfig) -> Result<Ex1Outcome> {
    if spec.example != ExampleId::Ex1 {
        return Err(Error::invalid("verify_ex1 needs an ex1 spec"));
    }
    let sim = simulate(spec)?;
    let problem = ExcursionProblem::new(Family::one_param(Direction::Positive, VERIFY_LEVEL), VERIFY_ALPHA, integration.clone())?;
    let result = excursion(&problem, &sim.posterior)?;
    let factor = cholesky(&sim.posterior, &fill_reducing_permutation(&sim.posterior))?;
    let mut acc = CoverageAccumulator::new(&result, &alpha_grid());
    let mut rng = stream_rng(spec.seed, 0xC0DE);
    for _ in 0..draws {
        acc.push(&sample(&sim.posterior, &factor, &mut rng));
    }
    let report = acc.report("eb");
    let max_abs_diff = report.rows.iter().map(|r| r.diff.abs()).fold(0.0, f64::max);
    Ok(Ex1Outcome { n_draws: report.n_draws, report, set_size: result.len(), max_abs_diff })
}

#[derive(Debug, Clone, Serialize)]
pub struct Ex2Replicate {
    pub seed: u64,
    pub region_one: usize,
    pub region_two: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Ex2Outcome {
    pub replicates: Vec<Ex2Replicate>,
    /// Replicates where the two-parameter region is larger.
    pub violations: usize,
    pub mean_relative_reduction: f64,
}

/// Contour uncertainty regions at level 0 from the one- and two-parameter
/// avoiding families on independent data sets.
pub fn verify_ex2(side: usize, replicates: usize, seed: u64, integration: &IntegrationConfig) -> Result<Ex2Outcome> {
    let mut out = Vec::with_capacity(replicates);
    for r in 0..replicates {
        let spec = SimSpec::lattice_scaled(ExampleId::Ex2, side).with_seed(seed + r as u64);
        let sim = simulate(&spec)?;
        let region = |kind: FamilyKind<f64>| -> Result<usize> {
            let family = Family::new(kind, Direction::Avoid, VERIFY_LEVEL)?;
            let problem = ExcursionProblem::new(family, VERIFY_ALPHA, integration.clone())?;
            Ok(excursion(&problem, &sim.posterior)?.contour_region(VERIFY_ALPHA).len())
        };
        out.push(Ex2Replicate {
            seed: spec.seed,
            region_one: region(FamilyKind::LevelAvoidOne)?,
            region_two: region(FamilyKind::LevelAvoidTwo)?,
        });
    }
    let violations = out.iter().filter(|r| r.region_two > r.region_one).count();
    let mean_relative_reduction = out
        .iter()
        .map(|r| if r.region_one == 0 { 0.0 } else { 1.0 - r.region_two as f64 / r.region_one as f64 })
        .sum::<f64>()
        / out.len().max(1) as f64;
    Ok(Ex2Outcome { replicates: out, violations, mean_relative_reduction })
}

#[derive(Debug, Clone)]
pub struct Ex3Options {
    pub side: usize,
    pub replicates: usize,
    pub draws: usize,
    pub seed: u64,
    pub methods: Vec<PosteriorMethod>,
    pub samplers: Vec<Sampler>,
    pub integration: IntegrationConfig,
    pub mcmc: McmcConfig,
}

impl Default for Ex3Options {
    fn default() -> Self {
        Self {
            side: 20,
            replicates: 10,
            draws: 10_000,
            seed: 1,
            methods: vec![PosteriorMethod::Eb, PosteriorMethod::Qc, PosteriorMethod::Ni],
            samplers: vec![Sampler::Full, Sampler::Discrete],
            integration: IntegrationConfig::default(),
            mcmc: McmcConfig::default(),
        }
    }
}

/// Coverage error of one method under one sampler, averaged over replicates.
#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub method: PosteriorMethod,
    pub sampler: Sampler,
    /// Mean over α of |replicate-mean (1−α) − p̂(α)|.
    pub mean_abs_error: f64,
    /// Mean over α and replicates of (1−α) − p̂(α).
    pub mean_signed_error: f64,
    /// Standard error of `mean_signed_error`, taking α levels as fully correlated.
    pub signed_error_se: f64,
    #[serde(skip)]
    pub per_alpha: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Ex3Outcome {
    pub summaries: Vec<MethodSummary>,
    #[serde(skip)]
    pub reports: Vec<(Sampler, usize, CoverageReport)>,
}

impl Ex3Outcome {
    pub fn summary(&self, method: PosteriorMethod, sampler: Sampler) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method && s.sampler == sampler)
    }
}

/// Hyperparameters estimated from the data; sets from EB/QC/NI over a CCD
/// design, checked against full-posterior and discrete-mixture draws.
pub fn verify_ex3(opts: &Ex3Options) -> Result<Ex3Outcome> {
    if opts.methods.is_empty() || opts.samplers.is_empty() || opts.replicates == 0 {
        return Err(Error::invalid("ex3 needs at least one method, sampler and replicate"));
    }
    let alphas = alpha_grid();
    let mut reports = Vec::new();
    for r in 0..opts.replicates {
        let spec = SimSpec::lattice_scaled(ExampleId::Ex3, opts.side).with_seed(opts.seed + r as u64);
        let sim = simulate(&spec)?;
        let model = sim.model.as_ref().expect("lattice example carries its model");
        let fit = fit_mode(model, &[0.0; 3])?;
        let set = ccd_config_set(model, &fit)?;
        let problem = ExcursionProblem::new(
            Family::one_param(Direction::Positive, VERIFY_LEVEL),
            VERIFY_ALPHA,
            opts.integration.clone(),
        )?;
        let results = opts
            .methods
            .iter()
            .map(|&m| posterior_excursion(m, &problem, &set))
            .collect::<Result<Vec<ExcursionResult<f64>>>>()?;
        for &sampler in &opts.samplers {
            let mut accs: Vec<CoverageAccumulator> = results.iter().map(|res| CoverageAccumulator::new(res, &alphas)).collect();
            let mut push = |x: &[f64]| accs.iter_mut().for_each(|a| a.push(x));
            let draw_seed = opts.seed.wrapping_mul(1_000_003).wrapping_add(r as u64);
            match sampler {
                Sampler::Full => {
                    let cfg = McmcConfig { seed: draw_seed, ..opts.mcmc };
                    run_full_chain(model, &fit, opts.draws, &cfg, &mut push)?;
                }
                Sampler::Discrete => {
                    run_discrete_sampler(&set, opts.draws, draw_seed, &mut push)?;
                }
                Sampler::Fixed => {
                    let post = set.designated_posterior();
                    let factor = cholesky(post, model_ordering(model))?;
                    let mut rng = stream_rng(draw_seed, 0xF1);
                    for _ in 0..opts.draws {
                        push(&sample(post, &factor, &mut rng));
                    }
                }
            }
            for (acc, &m) in accs.iter().zip(&opts.methods) {
                reports.push((sampler, r, acc.report(m.as_str())));
            }
        }
    }
    let mut summaries = Vec::new();
    for &sampler in &opts.samplers {
        for &method in &opts.methods {
            let reps: Vec<&CoverageReport> = reports
                .iter()
                .filter(|(s, _, rep)| *s == sampler && rep.method == method.as_str())
                .map(|(_, _, rep)| rep)
                .collect();
            let nr = reps.len() as f64;
            let per_alpha: Vec<(f64, f64, f64)> = (0..alphas.len())
                .map(|k| {
                    let err = reps.iter().map(|rep| rep.rows[k].diff).sum::<f64>() / nr;
                    let se = reps.iter().map(|rep| rep.rows[k].se.powi(2)).sum::<f64>().sqrt() / nr;
                    (alphas[k], err, se)
                })
                .collect();
            let na = per_alpha.len() as f64;
            summaries.push(MethodSummary {
                method,
                sampler,
                mean_abs_error: per_alpha.iter().map(|p| p.1.abs()).sum::<f64>() / na,
                mean_signed_error: per_alpha.iter().map(|p| p.1).sum::<f64>() / na,
                signed_error_se: per_alpha.iter().map(|p| p.2).sum::<f64>() / na,
                per_alpha,
            });
        }
    }
    Ok(Ex3Outcome { summaries, reports })
}

fn model_ordering(model: &crate::harness::LatticeModel) -> &crate::gmrf::Permutation {
    use crate::harness::mcmc::HyperModel;
    model.ordering()
}
