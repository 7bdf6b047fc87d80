//! Parametric families of candidate sets, marginal summaries, the
//! marginal bounds U₁ / L₁ / L₂ and the admission ordering fed to the
//! sequential integrator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmrf::{marginal_variances, GaussianPosterior, Permutation};
use crate::ordering::minimum_degree;
use crate::posterior_methods::MixtureMarginals;
use crate::scalar::Scalar;

/// Nodes with a marginal sd below this are treated as known exactly.
pub const DEGENERATE_SD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Positive,
    Negative,
    /// Level avoiding pair.
    Avoid,
    /// Level avoiding pair reported through the contour function.
    Contour,
}

impl Direction {
    pub fn is_avoiding(self) -> bool {
        matches!(self, Direction::Avoid | Direction::Contour)
    }
}

/// Side of the level a node is constrained to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Positive,
    Negative,
}

impl Side {
    pub fn flip(self) -> Self {
        match self {
            Side::Positive => Side::Negative,
            Side::Negative => Side::Positive,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Positive => "pos",
            Side::Negative => "neg",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FamilyKind<T> {
    OneParam,
    /// Sets `{P(x > v) ≥ 1 − ρ}` for a secondary level `v`.
    TwoParamLevel,
    /// Sets thresholding probabilities smoothed by a circular average of radius `τ`.
    TwoParamSmoothing { coords: Vec<Vec<T>> },
    /// Avoiding pair with `ρ₁ = ρ₂`.
    LevelAvoidOne,
    /// Avoiding pair with `log(ρ₁/ρ₂) = ν`.
    LevelAvoidTwo,
}

impl<T> FamilyKind<T> {
    pub fn name(&self) -> &'static str {
        match self {
            FamilyKind::OneParam => "one",
            FamilyKind::TwoParamLevel => "two-level",
            FamilyKind::TwoParamSmoothing { .. } => "two-smooth",
            FamilyKind::LevelAvoidOne => "avoid1",
            FamilyKind::LevelAvoidTwo => "avoid2",
        }
    }

    pub fn is_two_param(&self) -> bool {
        matches!(
            self,
            FamilyKind::TwoParamLevel | FamilyKind::TwoParamSmoothing { .. } | FamilyKind::LevelAvoidTwo
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Family<T> {
    pub kind: FamilyKind<T>,
    pub direction: Direction,
    pub level: T,
}

impl<T: Scalar> Family<T> {
    pub fn new(kind: FamilyKind<T>, direction: Direction, level: T) -> Result<Self> {
        let avoiding_kind = matches!(kind, FamilyKind::LevelAvoidOne | FamilyKind::LevelAvoidTwo);
        if avoiding_kind != direction.is_avoiding() {
            return Err(Error::invalid(format!(
                "family '{}' cannot be used with direction {:?}",
                kind.name(),
                direction
            )));
        }
        if !level.is_finite() {
            return Err(Error::invalid("level must be finite"));
        }
        Ok(Self { kind, direction, level })
    }

    pub fn one_param(direction: Direction, level: T) -> Self {
        let kind = if direction.is_avoiding() { FamilyKind::LevelAvoidOne } else { FamilyKind::OneParam };
        Self { kind, direction, level }
    }

    /// Value of the secondary parameter at which the family reduces to
    /// the one-parameter family.
    pub fn neutral_parameter(&self) -> T {
        match self.kind {
            FamilyKind::TwoParamLevel => self.level,
            _ => T::zero(),
        }
    }
}

/// Marginal posterior summaries at a level `u`.
#[derive(Debug, Clone)]
pub struct MarginalSummary<T> {
    level: T,
    marginals: MixtureMarginals<T>,
    p_above: Vec<T>,
    p_below: Vec<T>,
}

/// Marginal summary of a Gaussian posterior.
pub fn marginal_summary<T: Scalar>(posterior: &GaussianPosterior<T>, level: T) -> Result<MarginalSummary<T>> {
    let sd = marginal_variances(posterior)?.into_iter().map(|v| v.sqrt()).collect();
    let m = MixtureMarginals::gaussian(posterior.mean().to_vec(), sd)?;
    Ok(MarginalSummary::from_mixture(m, level))
}

impl<T: Scalar> MarginalSummary<T> {
    pub fn from_mixture(marginals: MixtureMarginals<T>, level: T) -> Self {
        let n = marginals.dim();
        let p_above = (0..n).map(|i| marginals.sf(i, level)).collect();
        let p_below = (0..n).map(|i| marginals.cdf(i, level)).collect();
        Self { level, marginals, p_above, p_below }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.p_above.len()
    }

    pub fn level(&self) -> T {
        self.level
    }

    pub fn marginals(&self) -> &MixtureMarginals<T> {
        &self.marginals
    }

    /// `P(x_i > u)`.
    pub fn p_above(&self) -> &[T] {
        &self.p_above
    }

    /// `P(x_i < u)`.
    pub fn p_below(&self) -> &[T] {
        &self.p_below
    }

    pub fn p_side(&self, i: usize, side: Side) -> T {
        match side {
            Side::Positive => self.p_above[i],
            Side::Negative => self.p_below[i],
        }
    }

    pub fn mean(&self, i: usize) -> T {
        self.marginals.mean(i)
    }

    pub fn sd(&self, i: usize) -> T {
        self.marginals.sd(i)
    }

    pub fn max_sd(&self) -> T {
        (0..self.dim()).map(|i| self.sd(i)).fold(T::zero(), T::max)
    }

    /// Marginal quantile `q_ρ(s_i)`.
    pub fn quantile(&self, i: usize, rho: T) -> T {
        self.marginals.quantile(i, rho)
    }

    pub fn is_degenerate(&self, i: usize) -> bool {
        self.sd(i).to64() < DEGENERATE_SD
    }

    /// Side a degenerate node deterministically satisfies, if any.
    pub fn degenerate_side(&self, i: usize) -> Option<Side> {
        let m = self.mean(i);
        if m > self.level {
            Some(Side::Positive)
        } else if m < self.level {
            Some(Side::Negative)
        } else {
            None
        }
    }
}

/// Circular average of `p` over all nodes within distance `tau`.
pub fn smooth_probs<T: Scalar>(p: &[T], coords: &[Vec<T>], tau: T) -> Result<Vec<T>> {
    if coords.len() != p.len() {
        return Err(Error::DimensionMismatch { expected: p.len(), found: coords.len() });
    }
    if !(tau >= T::zero()) {
        return Err(Error::invalid("smoothing radius must be non-negative"));
    }
    if tau == T::zero() {
        return Ok(p.to_vec());
    }
    let t2 = tau * tau;
    Ok((0..p.len())
        .map(|i| {
            let (mut s, mut c) = (T::zero(), T::zero());
            for j in 0..p.len() {
                if dist2(&coords[i], &coords[j]) <= t2 {
                    s += p[j];
                    c += T::one();
                }
            }
            s / c
        })
        .collect())
}

fn dist2<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Largest distance between two nodes.
pub fn diameter<T: Scalar>(coords: &[Vec<T>]) -> T {
    let mut d = T::zero();
    for i in 0..coords.len() {
        for j in i + 1..coords.len() {
            d = d.max(dist2(&coords[i], &coords[j]));
        }
    }
    d.sqrt()
}

/// Nodes in admission order with the side each is constrained to.
#[derive(Debug, Clone, PartialEq)]
pub struct Admission {
    pub nodes: Vec<usize>,
    pub sides: Vec<Side>,
}

impl Admission {
    /// Side of every node (indexed by node); `None` for nodes not listed.
    pub fn side_map(&self, n: usize) -> Vec<Option<Side>> {
        let mut out = vec![None; n];
        for (&i, &s) in self.nodes.iter().zip(&self.sides) {
            out[i] = Some(s);
        }
        out
    }
}

/// Orders nodes by decreasing key, ties by ascending index.
fn sort_decreasing(keys: &[f64], nodes: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut v: Vec<usize> = nodes.collect();
    v.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]).then(a.cmp(&b)));
    v
}

/// Order in which the nodes enter the sets of `family` as ρ grows, for
/// the secondary parameter `nu`. Degenerate nodes are left out.
pub fn admission_order<T: Scalar>(family: &Family<T>, summary: &MarginalSummary<T>, nu: T) -> Result<Admission> {
    let n = summary.dim();
    let live = || (0..n).filter(|&i| !summary.is_degenerate(i));
    let one_sided = |key: Vec<f64>| {
        let side = match family.direction {
            Direction::Negative => Side::Negative,
            _ => Side::Positive,
        };
        let nodes = sort_decreasing(&key, live());
        let sides = vec![side; nodes.len()];
        Admission { nodes, sides }
    };
    let side_probs = |level: T| -> Vec<f64> {
        (0..n)
            .map(|i| match family.direction {
                Direction::Negative => summary.marginals().cdf(i, level).to64(),
                _ => summary.marginals().sf(i, level).to64(),
            })
            .collect()
    };
    Ok(match &family.kind {
        FamilyKind::OneParam => one_sided(side_probs(summary.level())),
        FamilyKind::TwoParamLevel => {
            if !nu.is_finite() {
                return Err(Error::invalid("secondary level must be finite"));
            }
            one_sided(side_probs(nu))
        }
        FamilyKind::TwoParamSmoothing { coords } => {
            let p: Vec<T> = side_probs(summary.level()).into_iter().map(T::cast).collect();
            let s = smooth_probs(&p, coords, nu)?;
            one_sided(s.into_iter().map(|v| v.to64()).collect())
        }
        FamilyKind::LevelAvoidOne | FamilyKind::LevelAvoidTwo => {
            let nu = if matches!(family.kind, FamilyKind::LevelAvoidOne) { 0.0 } else { nu.to64() };
            if !nu.is_finite() {
                return Err(Error::invalid("ratio parameter must be finite"));
            }
            // A node enters the positive set once ρ·e^{ν/2} reaches P(x ≤ u)
            // and the negative set once ρ·e^{-ν/2} reaches P(x ≥ u); it joins
            // whichever happens first.
            let half = (0.5 * nu).exp();
            let mut entry = vec![0.0; n];
            let mut side = vec![Side::Positive; n];
            for i in live() {
                let pos = summary.p_below[i].to64() / half;
                let neg = summary.p_above[i].to64() * half;
                if neg < pos {
                    entry[i] = neg;
                    side[i] = Side::Negative;
                } else {
                    entry[i] = pos;
                }
            }
            let key: Vec<f64> = entry.iter().map(|e| -e).collect();
            let nodes = sort_decreasing(&key, live());
            let sides = nodes.iter().map(|&i| side[i]).collect();
            Admission { nodes, sides }
        }
    })
}

/// The marginal bound sets, as node membership masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundSets {
    /// `p_i ≥ 1 − α`: no excursion set can be larger.
    pub u1: Vec<bool>,
    /// Boole: `p_i ≥ 1 − α/n`.
    pub l1: Vec<bool>,
    /// Holm step-down.
    pub l2: Vec<bool>,
}

impl BoundSets {
    pub fn u1_nodes(&self) -> Vec<usize> {
        mask_nodes(&self.u1)
    }

    pub fn l1_nodes(&self) -> Vec<usize> {
        mask_nodes(&self.l1)
    }

    pub fn l2_nodes(&self) -> Vec<usize> {
        mask_nodes(&self.l2)
    }
}

fn mask_nodes(m: &[bool]) -> Vec<usize> {
    m.iter().enumerate().filter_map(|(i, &b)| b.then_some(i)).collect()
}

/// Bound sets from marginal probabilities `p` at level `α`.
pub fn bounds<T: Scalar>(p: &[T], alpha: T) -> Result<BoundSets> {
    let a = alpha.to64();
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::invalid("alpha must lie in (0, 1)"));
    }
    let n = p.len();
    let nf = n as f64;
    let q: Vec<f64> = p.iter().map(|&v| 1.0 - v.to64()).collect();
    let u1: Vec<bool> = q.iter().map(|&v| v <= a).collect();
    let l1: Vec<bool> = q.iter().map(|&v| v <= a / nf).collect();
    let mut sorted: Vec<usize> = (0..n).collect();
    sorted.sort_by(|&i, &j| q[i].total_cmp(&q[j]).then(i.cmp(&j)));
    let mut l2 = vec![false; n];
    for (k, &i) in sorted.iter().enumerate() {
        if q[i] <= a / (nf - k as f64) {
            l2[i] = true;
        } else {
            break;
        }
    }
    for i in 0..n {
        l2[i] = (l2[i] || l1[i]) && u1[i];
    }
    Ok(BoundSets { u1, l1, l2 })
}

/// Admission class of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeClass {
    /// In L₂: always part of the set.
    Inside = 1,
    /// In U₁ but not L₂: admitted in family order.
    Candidate = 2,
    /// Outside U₁: only visited when continuing the pass for F.
    Excluded = 3,
}

/// Admission order with classes, plus the nodes left out of integration.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeOrdering {
    pub nodes: Vec<usize>,
    pub sides: Vec<Side>,
    pub classes: Vec<NodeClass>,
    /// Degenerate nodes, never integrated.
    pub skipped: Vec<usize>,
}

impl NodeOrdering {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn n_inside(&self) -> usize {
        self.classes.iter().filter(|&&c| c == NodeClass::Inside).count()
    }

    pub fn n_candidates(&self) -> usize {
        self.classes.iter().filter(|&&c| c == NodeClass::Candidate).count()
    }

    /// Factor ordering over `n` nodes: the first admitted node sits at the
    /// last position, skipped nodes at the front where the backwards
    /// recursion never reaches them.
    pub fn permutation(&self, n: usize) -> Result<Permutation> {
        let mut forward = self.skipped.clone();
        forward.extend(self.nodes.iter().rev());
        Permutation::new(forward).and_then(|p| {
            if p.len() == n {
                Ok(p)
            } else {
                Err(Error::DimensionMismatch { expected: n, found: p.len() })
            }
        })
    }
}

/// Combines bound classes with the family admission order. Class-1 nodes
/// are ordered by minimum degree on their induced subgraph of `adjacency`
/// (complete graph when `None`); the rest keep the family order.
pub fn build_ordering(bounds: &BoundSets, admission: &Admission, adjacency: Option<&[Vec<usize>]>) -> NodeOrdering {
    let n = bounds.u1.len();
    let side = admission.side_map(n);
    let class = |i: usize| {
        if bounds.l2[i] {
            NodeClass::Inside
        } else if bounds.u1[i] {
            NodeClass::Candidate
        } else {
            NodeClass::Excluded
        }
    };
    let mut inside: Vec<usize> = admission.nodes.iter().copied().filter(|&i| bounds.l2[i]).collect();
    inside.sort_unstable();
    let inside = match adjacency {
        Some(adj) => {
            let mut local = vec![usize::MAX; n];
            for (k, &i) in inside.iter().enumerate() {
                local[i] = k;
            }
            let sub: Vec<Vec<usize>> = inside
                .iter()
                .map(|&i| adj[i].iter().filter_map(|&j| (local[j] != usize::MAX).then(|| local[j])).collect())
                .collect();
            // Elimination runs from the front of the factor, admission from the back.
            minimum_degree(&sub).into_iter().rev().map(|k| inside[k]).collect()
        }
        None => inside,
    };
    let mut nodes = inside;
    for c in [NodeClass::Candidate, NodeClass::Excluded] {
        nodes.extend(admission.nodes.iter().copied().filter(|&i| class(i) == c));
    }
    let mut listed = vec![false; n];
    for &i in &nodes {
        listed[i] = true;
    }
    NodeOrdering {
        sides: nodes.iter().map(|&i| side[i].expect("admitted node has a side")).collect(),
        classes: nodes.iter().map(|&i| class(i)).collect(),
        skipped: (0..n).filter(|&i| !listed[i]).collect(),
        nodes,
    }
}

/// Marginal probability of each node on the side it is admitted with;
/// unlisted nodes use their larger side.
pub fn side_probabilities<T: Scalar>(summary: &MarginalSummary<T>, admission: &Admission) -> Vec<T> {
    let side = admission.side_map(summary.dim());
    (0..summary.dim())
        .map(|i| match side[i] {
            Some(s) => summary.p_side(i, s),
            None => summary.p_above[i].max(summary.p_below[i]),
        })
        .collect()
}
