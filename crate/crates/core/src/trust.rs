//! Trust engine: local scores over a weighted trust graph, damped fixed-point
//! propagation, context-weighted signal fusion and verification tiers.
//!
//! Propagation solves `T = α·M·T + (1−α)·e` by power iteration, where `M` is
//! either the row-stochastic matrix `W` itself (`Orientation::Literal`) or
//! its transpose (`Orientation::Transpose`, reputation flowing along edges
//! toward the trusted node). Rows with no usable out-edges are replaced by
//! the normalized base vector.
//!
//! Each step shrinks the step size `δ = ‖T_{k+1} − T_k‖` by at least `α`
//! in the norm where `M` is non-expansive (max-norm for `W`, 1-norm for `Wᵀ`),
//! so iteration stops once `α/(1−α)·δ < tol`, which bounds the distance to
//! the true fixed point by `tol` in that norm.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identity::AgentDid;

pub const DEFAULT_ALPHA: f64 = 0.85;
pub const DEFAULT_TOLERANCE: f64 = 1e-9;
/// Base trust per agent in transpose scoring mode.
pub const TRANSPOSE_BASE: f64 = 0.5;
const SIMPLEX_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrustError {
    #[error("node {node} out of range for graph of {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },
    #[error("edge weight {0} outside [0, 1]")]
    InvalidWeight(f64),
    #[error("self edges are not allowed")]
    SelfEdge,
    #[error("edge {from} -> {to} already present")]
    DuplicateEdge { from: usize, to: usize },
    #[error("damping factor {0} outside (0, 1)")]
    InvalidAlpha(f64),
    #[error("base vector must have {expected} entries in [0, 1]")]
    InvalidBase { expected: usize },
    #[error("tolerance must be positive and finite")]
    InvalidTolerance,
    #[error("no convergence after {iterations} iterations (last step {last_step})")]
    NonConvergent { iterations: usize, last_step: f64 },
    #[error("signal {name} = {value} outside [0, 1]")]
    SignalOutOfRange { name: &'static str, value: f64 },
    #[error("context weights must be non-negative and sum to 1")]
    WeightsNotSimplex,
    #[error("tier thresholds must be strictly decreasing")]
    ThresholdsNotDecreasing,
}

/// Weighted directed trust graph; `w(i, j)` is how much `i` trusts `j`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrustGraph {
    n: usize,
    edges: BTreeMap<(u32, u32), f64>,
}

impl TrustGraph {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            edges: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn check_node(&self, node: usize) -> Result<(), TrustError> {
        if node >= self.n {
            return Err(TrustError::NodeOutOfRange { node, n: self.n });
        }
        Ok(())
    }

    /// Inserts or replaces the edge `from -> to`.
    pub fn set_edge(&mut self, from: usize, to: usize, weight: f64) -> Result<(), TrustError> {
        self.check_node(from)?;
        self.check_node(to)?;
        if from == to {
            return Err(TrustError::SelfEdge);
        }
        if !(0.0..=1.0).contains(&weight) {
            return Err(TrustError::InvalidWeight(weight));
        }
        self.edges.insert((from as u32, to as u32), weight);
        Ok(())
    }

    pub fn add_edge(&mut self, from: usize, to: usize, weight: f64) -> Result<(), TrustError> {
        if self.edges.contains_key(&(from as u32, to as u32)) {
            return Err(TrustError::DuplicateEdge { from, to });
        }
        self.set_edge(from, to, weight)
    }

    pub fn weight(&self, from: usize, to: usize) -> Option<f64> {
        self.edges.get(&(from as u32, to as u32)).copied()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.edges
            .iter()
            .map(|(&(f, t), &w)| (f as usize, t as usize, w))
    }

    pub fn out_edges(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.edges
            .range((i as u32, 0)..=(i as u32, u32::MAX))
            .map(|(&(_, t), &w)| (t as usize, w))
    }

    pub fn in_edges(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.edges
            .iter()
            .filter(move |(&(_, t), _)| t as usize == i)
            .map(|(&(f, _), &w)| (f as usize, w))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Mean weight over the node's out-edges.
    FormulaLiteral,
    /// Mean weight over the node's in-edges.
    #[default]
    Incoming,
}

/// Mean edge weight around node `i`; `None` when there are no such edges.
pub fn local_trust_score(
    graph: &TrustGraph,
    i: usize,
    direction: Direction,
) -> Result<Option<f64>, TrustError> {
    graph.check_node(i)?;
    let (sum, count) = match direction {
        Direction::FormulaLiteral => graph
            .out_edges(i)
            .fold((0.0, 0usize), |(s, c), (_, w)| (s + w, c + 1)),
        Direction::Incoming => graph
            .in_edges(i)
            .fold((0.0, 0usize), |(s, c), (_, w)| (s + w, c + 1)),
    };
    Ok((count > 0).then(|| sum / count as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// `T = α·W·T + (1−α)·e`
    Literal,
    /// `T = α·Wᵀ·T + (1−α)·e`
    #[default]
    Transpose,
}

/// Sparse row-stochastic matrix with dangling rows stood in by `teleport`.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
    dangling: Vec<bool>,
    teleport: Vec<f64>,
}

fn normalized_base(base: &[f64]) -> Vec<f64> {
    let sum: f64 = base.iter().sum();
    if sum > 0.0 {
        base.iter().map(|b| b / sum).collect()
    } else {
        vec![1.0 / base.len() as f64; base.len()]
    }
}

fn check_base(base: &[f64], n: usize) -> Result<(), TrustError> {
    if base.len() != n || base.iter().any(|b| !(0.0..=1.0).contains(b)) {
        return Err(TrustError::InvalidBase { expected: n });
    }
    Ok(())
}

/// Normalizes each row by its weight sum. Rows without edges, or whose
/// weights are all zero, become the normalized base vector.
pub fn row_stochastic(graph: &TrustGraph, base: &[f64]) -> Result<StochasticMatrix, TrustError> {
    let n = graph.len();
    check_base(base, n)?;
    let mut rows = Vec::with_capacity(n);
    let mut dangling = Vec::with_capacity(n);
    for i in 0..n {
        let out: Vec<(usize, f64)> = graph.out_edges(i).collect();
        let sum: f64 = out.iter().map(|(_, w)| w).sum();
        if sum > 0.0 {
            rows.push(
                out.into_iter()
                    .filter(|(_, w)| *w > 0.0)
                    .map(|(j, w)| (j, w / sum))
                    .collect(),
            );
            dangling.push(false);
        } else {
            rows.push(Vec::new());
            dangling.push(true);
        }
    }
    Ok(StochasticMatrix {
        n,
        rows,
        dangling,
        teleport: normalized_base(base),
    })
}

impl StochasticMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn is_dangling(&self, i: usize) -> bool {
        self.dangling[i]
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| {
                if self.dangling[i] {
                    self.teleport.clone()
                } else {
                    let mut row = vec![0.0; self.n];
                    for &(j, w) in &self.rows[i] {
                        row[j] = w;
                    }
                    row
                }
            })
            .collect()
    }

    /// `out = M·t` for the chosen orientation.
    pub fn apply(&self, orientation: Orientation, t: &[f64], out: &mut [f64]) {
        match orientation {
            Orientation::Literal => {
                let teleport_dot: f64 = self.teleport.iter().zip(t).map(|(a, b)| a * b).sum();
                for (i, o) in out.iter_mut().enumerate().take(self.n) {
                    *o = if self.dangling[i] {
                        teleport_dot
                    } else {
                        self.rows[i].iter().map(|&(j, w)| w * t[j]).sum()
                    };
                }
            }
            Orientation::Transpose => {
                out.iter_mut().for_each(|o| *o = 0.0);
                let mut dangling_mass = 0.0;
                for (j, &tj) in t.iter().enumerate().take(self.n) {
                    if self.dangling[j] {
                        dangling_mass += tj;
                    } else {
                        for &(i, w) in &self.rows[j] {
                            out[i] += w * tj;
                        }
                    }
                }
                for (o, p) in out.iter_mut().zip(&self.teleport) {
                    *o += p * dangling_mass;
                }
            }
        }
    }
}

/// Norm in which one propagation step is a contraction by `α`.
pub fn contraction_norm(orientation: Orientation, v: &[f64]) -> f64 {
    match orientation {
        Orientation::Literal => v.iter().fold(0.0, |m, x| m.max(libm::fabs(*x))),
        Orientation::Transpose => v.iter().map(|x| libm::fabs(*x)).sum(),
    }
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(libm::fabs(*x)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationParams {
    pub alpha: f64,
    pub base: Vec<f64>,
    pub orientation: Orientation,
    pub tol: f64,
    /// Defaults to `ceil(100·ln n / −ln α)`.
    pub max_iters: Option<usize>,
    /// Starting vector; defaults to the base vector.
    pub initial: Option<Vec<f64>>,
}

impl PropagationParams {
    /// Literal orientation with mass-style base `1/n`.
    pub fn literal(n: usize) -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            base: vec![1.0 / n.max(1) as f64; n],
            orientation: Orientation::Literal,
            tol: DEFAULT_TOLERANCE,
            max_iters: None,
            initial: None,
        }
    }

    /// Transpose orientation with a flat `0.5` prior, used for scoring.
    pub fn transpose_scoring(n: usize) -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            base: vec![TRANSPOSE_BASE; n],
            orientation: Orientation::Transpose,
            tol: DEFAULT_TOLERANCE,
            max_iters: None,
            initial: None,
        }
    }
}

pub fn default_max_iters(n: usize, alpha: f64) -> usize {
    let raw = 100.0 * libm::log(n.max(1) as f64) / -libm::log(alpha);
    (libm::ceil(raw) as usize).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustVector {
    pub values: Vec<f64>,
    pub alpha: f64,
    pub base: Vec<f64>,
    pub orientation: Orientation,
    pub iterations: usize,
    /// `‖T − (α·M·T + (1−α)·e)‖∞` of the returned vector.
    pub residual: f64,
    /// Step sizes in the contraction norm, one per iteration.
    pub steps: Vec<f64>,
}

pub fn propagate_trust(
    graph: &TrustGraph,
    params: &PropagationParams,
) -> Result<TrustVector, TrustError> {
    let n = graph.len();
    let alpha = params.alpha;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(TrustError::InvalidAlpha(alpha));
    }
    if !(params.tol > 0.0 && params.tol.is_finite()) {
        return Err(TrustError::InvalidTolerance);
    }
    let w = row_stochastic(graph, &params.base)?;
    let e = &params.base;
    let mut t = match &params.initial {
        Some(init) if init.len() == n => init.clone(),
        Some(_) => return Err(TrustError::InvalidBase { expected: n }),
        None => e.clone(),
    };
    let max_iters = params
        .max_iters
        .unwrap_or_else(|| default_max_iters(n, alpha));
    let bound_factor = alpha / (1.0 - alpha);
    let mut next = vec![0.0; n];
    let mut diff = vec![0.0; n];
    let mut steps = Vec::new();
    let mut converged = n == 0;
    for _ in 0..max_iters {
        if converged {
            break;
        }
        w.apply(params.orientation, &t, &mut next);
        for i in 0..n {
            next[i] = alpha * next[i] + (1.0 - alpha) * e[i];
            diff[i] = next[i] - t[i];
        }
        let step = contraction_norm(params.orientation, &diff);
        steps.push(step);
        core::mem::swap(&mut t, &mut next);
        converged = bound_factor * step < params.tol;
    }
    if !converged {
        return Err(TrustError::NonConvergent {
            iterations: steps.len(),
            last_step: steps.last().copied().unwrap_or(f64::NAN),
        });
    }
    w.apply(params.orientation, &t, &mut next);
    for i in 0..n {
        diff[i] = t[i] - (alpha * next[i] + (1.0 - alpha) * e[i]);
    }
    Ok(TrustVector {
        values: t,
        alpha,
        base: e.clone(),
        orientation: params.orientation,
        iterations: steps.len(),
        residual: max_norm(&diff),
        steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustSignals {
    pub policy_pass_rate: f64,
    /// 1 means fully normal behaviour.
    pub anomaly_score: f64,
    pub attestation_score: f64,
}

impl TrustSignals {
    pub fn check(&self) -> Result<(), TrustError> {
        for (name, value) in [
            ("policy_pass_rate", self.policy_pass_rate),
            ("anomaly_score", self.anomaly_score),
            ("attestation_score", self.attestation_score),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(TrustError::SignalOutOfRange { name, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Context {
    Financial,
    Analytical,
    #[default]
    Default,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextWeights {
    pub context: Context,
    pub w_policy: f64,
    pub w_behavior: f64,
    pub w_attest: f64,
}

impl ContextWeights {
    pub fn new(
        context: Context,
        w_policy: f64,
        w_behavior: f64,
        w_attest: f64,
    ) -> Result<Self, TrustError> {
        let ws = [w_policy, w_behavior, w_attest];
        if ws.iter().any(|w| w.is_nan() || *w < 0.0)
            || libm::fabs(ws.iter().sum::<f64>() - 1.0) > SIMPLEX_TOLERANCE
        {
            return Err(TrustError::WeightsNotSimplex);
        }
        Ok(Self {
            context,
            w_policy,
            w_behavior,
            w_attest,
        })
    }

    /// Financial work leans on attestations, analytics on behaviour.
    pub fn for_context(context: Context) -> Self {
        let (p, b, a) = match context {
            Context::Financial => (0.25, 0.25, 0.5),
            Context::Analytical => (0.25, 0.5, 0.25),
            Context::Default => (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0),
        };
        Self::new(context, p, b, a).expect("preset weights lie on the simplex")
    }
}

/// `propagated · (w_p·policy + w_b·behavior + w_a·attest)`.
///
/// The propagated term gates the whole score: an agent without reputation
/// in the graph scores zero whatever its other signals.
pub fn fuse_signals(
    signals: &TrustSignals,
    weights: &ContextWeights,
    propagated: f64,
) -> Result<f64, TrustError> {
    signals.check()?;
    if !(0.0..=1.0).contains(&propagated) {
        return Err(TrustError::SignalOutOfRange {
            name: "propagated",
            value: propagated,
        });
    }
    ContextWeights::new(
        weights.context,
        weights.w_policy,
        weights.w_behavior,
        weights.w_attest,
    )?;
    let linear = weights.w_policy * signals.policy_pass_rate
        + weights.w_behavior * signals.anomaly_score
        + weights.w_attest * signals.attestation_score;
    Ok((propagated * linear).clamp(0.0, 1.0))
}

/// Ordered from least to most strict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerificationTier {
    Streamlined,
    Standard,
    Enhanced,
    Quarantine,
}

impl VerificationTier {
    /// Number of checks a request from this tier goes through; quarantined
    /// agents are not served at all.
    pub fn verification_cost(self) -> Option<u32> {
        match self {
            VerificationTier::Streamlined => Some(1),
            VerificationTier::Standard => Some(2),
            VerificationTier::Enhanced => Some(3),
            VerificationTier::Quarantine => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierThresholds {
    streamlined: f64,
    standard: f64,
    enhanced: f64,
}

impl TierThresholds {
    pub fn new(streamlined: f64, standard: f64, enhanced: f64) -> Result<Self, TrustError> {
        if !(streamlined > standard && standard > enhanced) {
            return Err(TrustError::ThresholdsNotDecreasing);
        }
        Ok(Self {
            streamlined,
            standard,
            enhanced,
        })
    }
}

impl Default for TierThresholds {
    fn default() -> Self {
        Self {
            streamlined: 0.8,
            standard: 0.5,
            enhanced: 0.3,
        }
    }
}

/// Boundaries are inclusive upward: a score equal to a threshold gets the
/// more lenient tier.
pub fn verification_tier(score: f64, thresholds: &TierThresholds) -> VerificationTier {
    if score >= thresholds.streamlined {
        VerificationTier::Streamlined
    } else if score >= thresholds.standard {
        VerificationTier::Standard
    } else if score >= thresholds.enhanced {
        VerificationTier::Enhanced
    } else {
        VerificationTier::Quarantine
    }
}

/// `exp(−max_f |z_f|)` of `agent` against the population's per-feature
/// mean and standard deviation. Zero-variance features are skipped.
pub fn behavior_score(agent: &[f64], population: &[Vec<f64>]) -> f64 {
    if agent.is_empty() || population.len() < 2 {
        return 1.0;
    }
    let mut max_z: f64 = 0.0;
    for (f, &x) in agent.iter().enumerate() {
        let column: Vec<f64> = population
            .iter()
            .filter_map(|row| row.get(f).copied())
            .collect();
        if column.len() < 2 {
            continue;
        }
        let m = column.len() as f64;
        let mean = column.iter().sum::<f64>() / m;
        let var = column.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
        let sd = libm::sqrt(var);
        if sd > 0.0 {
            max_z = max_z.max(libm::fabs(x - mean) / sd);
        }
    }
    libm::exp(-max_z)
}

/// `1 − exp(−k/5)` for `k` verified attestations.
pub fn attestation_score(verified: u64) -> f64 {
    1.0 - libm::exp(-(verified as f64) / 5.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustReportEntry {
    pub did: AgentDid,
    pub propagated: f64,
    pub policy: f64,
    pub behavior: f64,
    pub attest: f64,
    pub fused: f64,
    pub tier: VerificationTier,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        libm::fabs(a - b) <= tol
    }

    #[test]
    fn local_scores_follow_direction() {
        let mut g = TrustGraph::new(4);
        g.add_edge(0, 1, 0.2).unwrap();
        g.add_edge(0, 2, 0.4).unwrap();
        g.add_edge(0, 3, 0.6).unwrap();
        g.add_edge(1, 0, 0.8).unwrap();
        let lit = local_trust_score(&g, 0, Direction::FormulaLiteral)
            .unwrap()
            .unwrap();
        assert!(approx(lit, 0.4, 1e-15));
        assert_eq!(
            local_trust_score(&g, 1, Direction::FormulaLiteral).unwrap(),
            Some(0.8)
        );
        assert_eq!(
            local_trust_score(&g, 0, Direction::Incoming).unwrap(),
            Some(0.8)
        );
        assert_eq!(
            local_trust_score(&g, 3, Direction::FormulaLiteral).unwrap(),
            None
        );
        assert!(local_trust_score(&g, 4, Direction::Incoming).is_err());
    }

    #[test]
    fn isolated_node_is_undefined_both_ways() {
        let g = TrustGraph::new(2);
        assert_eq!(local_trust_score(&g, 0, Direction::Incoming).unwrap(), None);
        assert_eq!(
            local_trust_score(&g, 0, Direction::FormulaLiteral).unwrap(),
            None
        );
    }

    #[test]
    fn graph_rejects_bad_edges() {
        let mut g = TrustGraph::new(2);
        assert_eq!(g.add_edge(0, 0, 0.5), Err(TrustError::SelfEdge));
        assert_eq!(g.add_edge(0, 1, 1.5), Err(TrustError::InvalidWeight(1.5)));
        g.add_edge(0, 1, 0.5).unwrap();
        assert_eq!(
            g.add_edge(0, 1, 0.7),
            Err(TrustError::DuplicateEdge { from: 0, to: 1 })
        );
        assert!(g.add_edge(0, 2, 0.5).is_err());
    }

    #[test]
    fn rows_normalize() {
        let mut g = TrustGraph::new(4);
        g.add_edge(0, 1, 0.5).unwrap();
        g.add_edge(0, 2, 0.5).unwrap();
        g.add_edge(1, 2, 0.2).unwrap();
        g.add_edge(1, 3, 0.6).unwrap();
        g.add_edge(2, 0, 0.0).unwrap();
        let w = row_stochastic(&g, &[0.5; 4]).unwrap().to_dense();
        assert_eq!(w[0], vec![0.0, 0.5, 0.5, 0.0]);
        assert!(approx(w[1][2], 0.25, 1e-15) && approx(w[1][3], 0.75, 1e-15));
        assert_eq!(w[2], vec![0.25; 4]);
        assert_eq!(w[3], vec![0.25; 4]);
    }

    #[test]
    fn tiny_alpha_returns_base() {
        let g = TrustGraph::new(3);
        let mut p = PropagationParams::literal(3);
        p.alpha = 1e-12;
        p.base = vec![0.2, 0.3, 0.5];
        let t = propagate_trust(&g, &p).unwrap();
        for (a, b) in t.values.iter().zip(&p.base) {
            assert!(approx(*a, *b, 1e-9));
        }
    }

    #[test]
    fn symmetric_two_cycle_is_fixed() {
        let mut g = TrustGraph::new(2);
        g.add_edge(0, 1, 1.0).unwrap();
        g.add_edge(1, 0, 1.0).unwrap();
        for orientation in [Orientation::Literal, Orientation::Transpose] {
            let p = PropagationParams {
                alpha: 0.5,
                base: vec![0.5, 0.5],
                orientation,
                tol: 1e-12,
                max_iters: None,
                initial: None,
            };
            let t = propagate_trust(&g, &p).unwrap();
            assert_eq!(t.values, vec![0.5, 0.5]);
        }
    }

    #[test]
    fn bad_params_are_rejected() {
        let g = TrustGraph::new(2);
        let mut p = PropagationParams::literal(2);
        p.alpha = 1.0;
        assert_eq!(propagate_trust(&g, &p), Err(TrustError::InvalidAlpha(1.0)));
        let mut p = PropagationParams::literal(2);
        p.base = vec![0.5];
        assert!(propagate_trust(&g, &p).is_err());
        let mut p = PropagationParams::literal(2);
        p.tol = 0.0;
        assert_eq!(propagate_trust(&g, &p), Err(TrustError::InvalidTolerance));
    }

    #[test]
    fn iteration_budget_is_enforced() {
        let mut g = TrustGraph::new(3);
        g.add_edge(0, 1, 1.0).unwrap();
        g.add_edge(1, 2, 1.0).unwrap();
        let mut p = PropagationParams::transpose_scoring(3);
        p.max_iters = Some(2);
        assert!(matches!(
            propagate_trust(&g, &p),
            Err(TrustError::NonConvergent { iterations: 2, .. })
        ));
    }

    #[test]
    fn fusion_examples() {
        let w = ContextWeights::for_context(Context::Default);
        let ones = TrustSignals {
            policy_pass_rate: 1.0,
            anomaly_score: 1.0,
            attestation_score: 1.0,
        };
        assert!(approx(fuse_signals(&ones, &w, 1.0).unwrap(), 1.0, 1e-12));
        let zeros = TrustSignals {
            policy_pass_rate: 0.0,
            anomaly_score: 0.0,
            attestation_score: 0.0,
        };
        assert_eq!(
            fuse_signals(
                &zeros,
                &ContextWeights::for_context(Context::Financial),
                0.7
            )
            .unwrap(),
            0.0
        );
        let policy_only = TrustSignals {
            policy_pass_rate: 1.0,
            ..zeros
        };
        assert!(approx(
            fuse_signals(&policy_only, &w, 0.9).unwrap(),
            0.3,
            1e-12
        ));
        let bad = TrustSignals {
            anomaly_score: 1.2,
            ..zeros
        };
        assert!(fuse_signals(&bad, &w, 0.5).is_err());
        assert!(fuse_signals(&zeros, &w, 1.5).is_err());
    }

    #[test]
    fn weights_must_lie_on_the_simplex() {
        assert!(ContextWeights::new(Context::Default, 0.5, 0.5, 0.1).is_err());
        assert!(ContextWeights::new(Context::Default, -0.1, 0.6, 0.5).is_err());
        for c in [Context::Financial, Context::Analytical, Context::Default] {
            let w = ContextWeights::for_context(c);
            assert!(libm::fabs(w.w_policy + w.w_behavior + w.w_attest - 1.0) <= 1e-12);
        }
    }

    #[test]
    fn tier_rules() {
        let t = TierThresholds::default();
        assert_eq!(verification_tier(0.95, &t), VerificationTier::Streamlined);
        assert_eq!(verification_tier(0.50, &t), VerificationTier::Standard);
        assert_eq!(verification_tier(0.30, &t), VerificationTier::Enhanced);
        assert_eq!(verification_tier(0.10, &t), VerificationTier::Quarantine);
        assert!(TierThresholds::new(0.5, 0.5, 0.1).is_err());
    }

    #[test]
    fn behavior_examples() {
        let pop = vec![vec![0.0, 5.0], vec![2.0, 5.0]];
        assert_eq!(behavior_score(&[1.0, 5.0], &pop), 1.0);
        assert!(approx(
            behavior_score(&[2.0, 5.0], &pop),
            libm::exp(-1.0),
            1e-15
        ));
        assert_eq!(behavior_score(&[9.0], &[vec![9.0]]), 1.0);
        assert_eq!(behavior_score(&[], &pop), 1.0);
    }

    #[test]
    fn attestation_score_has_diminishing_returns() {
        assert_eq!(attestation_score(0), 0.0);
        assert!(approx(attestation_score(5), 1.0 - libm::exp(-1.0), 1e-15));
        assert!(attestation_score(10) - attestation_score(5) < attestation_score(5));
    }

    #[test]
    fn default_iteration_budget() {
        assert_eq!(default_max_iters(2, 0.85), 427);
        assert_eq!(default_max_iters(1, 0.85), 1);
    }
}
