//! Excursion sets, level avoiding sets, contour uncertainty regions and
//! the excursion functions behind them.
//!
//! A single sequential GHK pass admits the nodes in family order and
//! records the running joint probability at every admission; the pass is
//! carried on past the stopping point so the excursion function is known
//! for every node, and any `E_{u,α}` is recovered by thresholding it.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::families::{
    admission_order, bounds, build_ordering, diameter, side_probabilities, Direction, Family, FamilyKind,
    MarginalSummary, NodeClass, NodeOrdering, Side,
};
use crate::gauss_prob::{Bounds, IntegrationConfig, ParticleSystem};
use crate::gmrf::{cholesky, CholeskyFactor, GaussianPosterior, Permutation, Shape};
use crate::scalar::Scalar;

/// Admissions between particle checkpoints.
const CHECKPOINT_EVERY: usize = 10;
/// Particle multiplier while re-running the stretch before the stop.
const REFINE_FACTOR: usize = 4;
const MAIN_STREAM: u64 = 0;
const REFINE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ExcursionProblem<T> {
    pub family: Family<T>,
    pub alpha: T,
    pub integration: IntegrationConfig,
    /// Re-run the admissions before the stopping point with more particles.
    pub refine: bool,
}

impl<T: Scalar> ExcursionProblem<T> {
    pub fn new(family: Family<T>, alpha: T, integration: IntegrationConfig) -> Result<Self> {
        if !(alpha > T::zero() && alpha < T::one()) {
            return Err(Error::invalid("alpha must lie in (0, 1)"));
        }
        integration.validate()?;
        Ok(Self { family, alpha, integration, refine: true })
    }

    pub fn level(&self) -> T {
        self.family.level
    }

    pub fn direction(&self) -> Direction {
        self.family.direction
    }
}

/// One admission of the sequential pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceStep<T> {
    pub node: usize,
    pub side: Side,
    pub class: NodeClass,
    pub probability: T,
    pub std_error: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcursionResult<T> {
    pub level: T,
    pub alpha: T,
    pub direction: Direction,
    /// Excursion function (or avoidance function for avoiding pairs).
    pub function: Vec<T>,
    /// Side each node is tested on; `None` for degenerate nodes sitting on the level.
    pub sides: Vec<Option<Side>>,
    /// Marginal probability of each node on its side.
    pub marginal: Vec<T>,
    /// `{i : F_i ≥ 1 − α}`.
    pub set: Vec<usize>,
    pub trace: Vec<TraceStep<T>>,
    pub u1: Vec<usize>,
    pub l2: Vec<usize>,
    /// Joint probability estimate of the returned set.
    pub set_probability: T,
    pub set_std_error: T,
    /// Secondary family parameter at the optimum.
    pub parameter: Option<T>,
    /// Evaluated `(parameter, |set|)` pairs of the two-parameter search.
    pub search: Vec<(T, usize)>,
    pub refined: bool,
}

impl<T: Scalar> ExcursionResult<T> {
    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }

    pub fn in_set(&self) -> Vec<bool> {
        let mut m = vec![false; self.function.len()];
        for &i in &self.set {
            m[i] = true;
        }
        m
    }

    /// Set at another `α`, from the same function.
    pub fn set_at(&self, alpha: T) -> Vec<usize> {
        set_from_function(&self.function, alpha)
    }

    /// Contour function `1 − F_u`.
    pub fn contour_function(&self) -> Vec<T> {
        self.function.iter().map(|&f| T::one() - f).collect()
    }

    /// Nodes of the set at `alpha` on the given side.
    pub fn side_set(&self, alpha: T, side: Side) -> Vec<usize> {
        self.set_at(alpha).into_iter().filter(|&i| self.sides[i] == Some(side)).collect()
    }

    /// Contour uncertainty region: nodes outside both avoided sets.
    pub fn contour_region(&self, alpha: T) -> Vec<usize> {
        let inside = set_from_function(&self.function, alpha);
        let mut mask = vec![true; self.function.len()];
        for i in inside {
            mask[i] = false;
        }
        (0..mask.len()).filter(|&i| mask[i]).collect()
    }
}

/// `{i : F_i ≥ 1 − α}`.
pub fn set_from_function<T: Scalar>(f: &[T], alpha: T) -> Vec<usize> {
    let t = T::one() - alpha;
    if alpha >= T::one() {
        return (0..f.len()).filter(|&i| f[i] > T::zero()).collect();
    }
    (0..f.len()).filter(|&i| f[i] >= t).collect()
}

/// Algorithm 1 for a one-parameter family.
pub fn excursion_one_param<T: Scalar>(
    problem: &ExcursionProblem<T>,
    posterior: &GaussianPosterior<T>,
) -> Result<ExcursionResult<T>> {
    if !matches!(problem.family.kind, FamilyKind::OneParam) {
        return Err(Error::invalid("excursion_one_param needs the one-parameter family"));
    }
    excursion(problem, posterior)
}

/// Algorithm 2: golden-section search over the secondary parameter.
pub fn excursion_two_param<T: Scalar>(
    problem: &ExcursionProblem<T>,
    posterior: &GaussianPosterior<T>,
) -> Result<ExcursionResult<T>> {
    if !matches!(problem.family.kind, FamilyKind::TwoParamLevel | FamilyKind::TwoParamSmoothing { .. }) {
        return Err(Error::invalid("excursion_two_param needs a two-parameter excursion family"));
    }
    excursion(problem, posterior)
}

/// Level avoiding pair; the contour quantities follow from the result.
pub fn level_avoid<T: Scalar>(problem: &ExcursionProblem<T>, posterior: &GaussianPosterior<T>) -> Result<ExcursionResult<T>> {
    if !problem.direction().is_avoiding() {
        return Err(Error::invalid("level_avoid needs an avoiding family"));
    }
    excursion(problem, posterior)
}

/// Dispatches on the family of `problem`.
pub fn excursion<T: Scalar>(problem: &ExcursionProblem<T>, posterior: &GaussianPosterior<T>) -> Result<ExcursionResult<T>> {
    let summary = crate::families::marginal_summary(posterior, problem.level())?;
    Engine::new(problem, summary, vec![(T::one(), posterior)], None)?.solve()
}

/// Maps the raw per-node limits to the limits actually integrated.
pub(crate) type BoundAdjust<'a, T> = &'a dyn Fn(&Bounds<T>) -> Result<Bounds<T>>;

/// Everything one excursion computation needs: marginals for ordering and
/// bounds, and the weighted Gaussian components to integrate.
pub(crate) struct Engine<'a, T> {
    problem: &'a ExcursionProblem<T>,
    summary: MarginalSummary<T>,
    components: Vec<(T, &'a GaussianPosterior<T>)>,
    adjust: Option<BoundAdjust<'a, T>>,
    adjacency: Option<Vec<Vec<usize>>>,
}

impl<'a, T: Scalar> Engine<'a, T> {
    pub(crate) fn new(
        problem: &'a ExcursionProblem<T>,
        summary: MarginalSummary<T>,
        components: Vec<(T, &'a GaussianPosterior<T>)>,
        adjust: Option<BoundAdjust<'a, T>>,
    ) -> Result<Self> {
        let n = summary.dim();
        if components.is_empty() {
            return Err(Error::invalid("no posterior components"));
        }
        for (w, p) in &components {
            if p.dim() != n {
                return Err(Error::DimensionMismatch { expected: n, found: p.dim() });
            }
            if !(*w >= T::zero()) {
                return Err(Error::invalid("component weights must be non-negative"));
            }
        }
        if let FamilyKind::TwoParamSmoothing { coords } = &problem.family.kind {
            if coords.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: coords.len() });
            }
        }
        let adjacency = components[0].1.adjacency();
        Ok(Self { problem, summary, components, adjust, adjacency })
    }

    pub(crate) fn solve(&self) -> Result<ExcursionResult<T>> {
        if !self.problem.family.kind.is_two_param() {
            return Ok(self.evaluate(self.problem.family.neutral_parameter(), true)?);
        }
        let (best, search) = self.search()?;
        let mut r = self.evaluate(best, true)?;
        r.parameter = Some(best);
        r.search = search;
        Ok(r)
    }

    fn bracket(&self) -> (T, T) {
        let fam = &self.problem.family;
        match &fam.kind {
            FamilyKind::TwoParamLevel => {
                let w = T::cast(3.0) * self.summary.max_sd();
                (fam.level - w, fam.level + w)
            }
            FamilyKind::TwoParamSmoothing { coords } => (T::zero(), diameter(coords) / T::cast(2.0)),
            FamilyKind::LevelAvoidTwo => (T::cast(-10.0), T::cast(10.0)),
            _ => (T::zero(), T::zero()),
        }
    }

    /// Whether `a` wins a tie against `b`.
    fn tie_preferred(&self, a: T, b: T) -> bool {
        match self.problem.family.kind {
            FamilyKind::LevelAvoidTwo => a.abs() < b.abs() || (a.abs() == b.abs() && a < b),
            _ => a < b,
        }
    }

    /// Golden-section search keeping the best value seen, starting from the
    /// one-parameter slice.
    fn search(&self) -> Result<(T, Vec<(T, usize)>)> {
        let mut trace = Vec::new();
        let mut eval = |nu: T| -> Result<usize> {
            let s = self.evaluate(nu, false)?.set.len();
            trace.push((nu, s));
            Ok(s)
        };
        let neutral = self.problem.family.neutral_parameter();
        eval(neutral)?;
        let (mut a, mut b) = self.bracket();
        let width0 = b - a;
        if width0 > T::zero() {
            let g = T::cast((5f64.sqrt() - 1.0) / 2.0);
            let mut c = b - g * (b - a);
            let mut d = a + g * (b - a);
            let mut fc = eval(c)?;
            let mut fd = eval(d)?;
            let tol = T::cast(1e-3) * width0;
            for _ in 0..30 {
                if b - a < tol {
                    break;
                }
                if fc >= fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - g * (b - a);
                    fc = eval(c)?;
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + g * (b - a);
                    fd = eval(d)?;
                }
            }
        }
        let mut best = trace[0];
        for &(nu, s) in &trace[1..] {
            if s > best.1 || (s == best.1 && self.tie_preferred(nu, best.0)) {
                best = (nu, s);
            }
        }
        Ok((best.0, trace))
    }

    fn raw_bounds(&self, ordering: &NodeOrdering) -> Result<Bounds<T>> {
        let n = self.summary.dim();
        let u = self.problem.level();
        let mut lo = vec![T::neg_infinity(); n];
        let mut hi = vec![T::infinity(); n];
        for (&i, &s) in ordering.nodes.iter().zip(&ordering.sides) {
            match s {
                Side::Positive => lo[i] = u,
                Side::Negative => hi[i] = u,
            }
        }
        Bounds::new(lo, hi)
    }

    fn evaluate(&self, nu: T, exhaust: bool) -> Result<ExcursionResult<T>> {
        let problem = self.problem;
        let n = self.summary.dim();
        let alpha = problem.alpha;
        let target = T::one() - alpha;
        let admission = admission_order(&problem.family, &self.summary, nu)?;
        let mut p_side = side_probabilities(&self.summary, &admission);
        let mut sides = admission.side_map(n);
        for i in (0..n).filter(|&i| self.summary.is_degenerate(i)) {
            sides[i] = self.summary.degenerate_side(i);
            p_side[i] = match sides[i] {
                Some(s) if side_allowed(problem.direction(), s) => T::one(),
                _ => T::zero(),
            };
        }
        let bound_sets = bounds(&p_side, alpha)?;
        let ordering = build_ordering(&bound_sets, &admission, self.adjacency.as_deref());
        let mut limits = self.raw_bounds(&ordering)?;
        if let Some(adjust) = self.adjust {
            limits = adjust(&limits)?;
        }

        let prepared = self
            .components
            .iter()
            .map(|&(w, p)| Prepared::new(w, p, &ordering, &limits))
            .collect::<Result<Vec<_>>>()?;
        let pass = run_pass(&prepared, &ordering, &problem.integration, target, exhaust, problem.refine)?;

        let mut function = vec![T::zero(); n];
        let mut running = T::one();
        for (k, &i) in ordering.nodes.iter().enumerate().take(pass.probs.len()) {
            running = running.min(pass.probs[k]);
            let mut f = running.min(p_side[i]);
            if bound_sets.l2[i] {
                f = f.max(target);
            }
            function[i] = f.max(T::zero()).min(T::one());
        }
        for &i in &ordering.skipped {
            function[i] = p_side[i];
        }
        let set = set_from_function(&function, alpha);
        let (mut set_probability, mut set_std_error) = (T::one(), T::zero());
        let mut last = None;
        for (k, &i) in ordering.nodes.iter().enumerate().take(pass.probs.len()) {
            if function[i] >= target {
                last = Some(k);
            }
        }
        if let Some(k) = last {
            set_probability = pass.probs[k];
            set_std_error = pass.ses[k];
        }
        let trace = ordering
            .nodes
            .iter()
            .zip(&ordering.sides)
            .zip(&ordering.classes)
            .zip(pass.probs.iter().zip(&pass.ses))
            .map(|(((&node, &side), &class), (&probability, &std_error))| TraceStep {
                node,
                side,
                class,
                probability,
                std_error,
            })
            .collect();
        Ok(ExcursionResult {
                level: problem.level(),
                alpha,
                direction: problem.direction(),
                function,
                sides,
                marginal: p_side,
                set,
                trace,
                u1: bound_sets.u1_nodes(),
                l2: bound_sets.l2_nodes(),
                set_probability,
                set_std_error,
                parameter: None,
                search: Vec::new(),
            refined: pass.refined,
        })
    }
}

fn side_allowed(direction: Direction, side: Side) -> bool {
    match direction {
        Direction::Positive => side == Side::Positive,
        Direction::Negative => side == Side::Negative,
        Direction::Avoid | Direction::Contour => true,
    }
}

/// A component factorised under the admission ordering.
struct Prepared<T> {
    weight: T,
    posterior: GaussianPosterior<T>,
    factor: CholeskyFactor<T>,
    bounds: Bounds<T>,
}

impl<T: Scalar> Prepared<T> {
    fn new(weight: T, posterior: &GaussianPosterior<T>, ordering: &NodeOrdering, limits: &Bounds<T>) -> Result<Self> {
        let n = posterior.dim();
        match posterior.shape() {
            Shape::Covariance(_) if !ordering.skipped.is_empty() => {
                // Degenerate nodes would break the covariance factor; drop them.
                let mut kept = ordering.nodes.clone();
                kept.sort_unstable();
                let mut local = vec![usize::MAX; n];
                for (k, &i) in kept.iter().enumerate() {
                    local[i] = k;
                }
                let sub = posterior.marginal(&kept)?;
                let perm = Permutation::new(ordering.nodes.iter().rev().map(|&i| local[i]).collect())?;
                let factor = cholesky(&sub, &perm)?;
                let bounds = Bounds::new(
                    kept.iter().map(|&i| limits.lower()[i]).collect(),
                    kept.iter().map(|&i| limits.upper()[i]).collect(),
                )?;
                Ok(Self { weight, posterior: sub, factor, bounds })
            }
            _ => {
                let perm = ordering.permutation(n)?;
                let factor = cholesky(posterior, &perm)?;
                Ok(Self { weight, posterior: posterior.clone(), factor, bounds: limits.clone() })
            }
        }
    }
}

struct PassTrace<T> {
    probs: Vec<T>,
    ses: Vec<T>,
    refined: bool,
}

fn combine<T: Scalar>(systems: &[ParticleSystem<'_, T>], weights: &[T]) -> (T, T) {
    let (mut p, mut v) = (T::zero(), T::zero());
    for (s, &w) in systems.iter().zip(weights) {
        let e = s.estimate();
        p += w * e.value;
        v += w * w * e.std_error * e.std_error;
    }
    (p.min(T::one()), v.sqrt())
}

/// Runs the sequential pass over the admission order. Stops early (when
/// `exhaust` is off) once the first probability below `target` past the
/// inside class is established.
fn run_pass<T: Scalar>(
    prepared: &[Prepared<T>],
    ordering: &NodeOrdering,
    config: &IntegrationConfig,
    target: T,
    exhaust: bool,
    refine: bool,
) -> Result<PassTrace<T>> {
    let m = ordering.len();
    let n_inside = ordering.n_inside();
    let weights: Vec<T> = prepared.iter().map(|c| c.weight).collect();
    let mut systems = prepared
        .iter()
        .map(|c| ParticleSystem::new(&c.posterior, &c.factor, &c.bounds, config, MAIN_STREAM))
        .collect::<Result<Vec<_>>>()?;
    let mut probs = Vec::with_capacity(m);
    let mut ses = Vec::with_capacity(m);
    // Two most recent checkpoints, oldest first.
    let mut checkpoints: Vec<(usize, Vec<ParticleSystem<'_, T>>)> = vec![(0, systems.clone())];
    let mut refined = false;
    let mut k = 0;
    while k < m {
        for s in systems.iter_mut() {
            s.extend(1)?;
        }
        k += 1;
        let (p, se) = combine(&systems, &weights);
        probs.push(p);
        ses.push(se);

        if refine && !refined && k > n_inside && p + se < target {
            refined = true;
            let pick = checkpoints
                .iter()
                .rposition(|(d, _)| *d + CHECKPOINT_EVERY <= k)
                .unwrap_or(0);
            let (depth, saved) = checkpoints.swap_remove(pick);
            checkpoints.clear();
            systems = saved;
            for s in systems.iter_mut() {
                let n = s.n_particles();
                s.resample_to(n * REFINE_FACTOR);
                s.reseed(config.seed, REFINE_STREAM);
            }
            probs.truncate(depth);
            ses.truncate(depth);
            for _ in depth..k {
                for s in systems.iter_mut() {
                    s.extend(1)?;
                }
                let (p, se) = combine(&systems, &weights);
                probs.push(p);
                ses.push(se);
            }
            for s in systems.iter_mut() {
                s.resample_to(config.n_particles);
            }
        }

        let p = probs[k - 1];
        if !exhaust && k > n_inside && (p < target && (refined || !refine) || p <= T::zero()) {
            break;
        }
        if exhaust && refined {
            // No further refinement can happen, so checkpoints are dead weight.
            continue;
        }
        if k % CHECKPOINT_EVERY == 0 {
            if checkpoints.len() == 2 {
                checkpoints.remove(0);
            }
            checkpoints.push((k, systems.clone()));
        }
    }
    Ok(PassTrace { probs, ses, refined })
}
