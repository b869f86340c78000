//! Sybil clique against an honest trust graph.
//!
//! Honest agents occupy indices `0..h` and Sybils `h..n`. Sybils trust
//! each other with a configurable weight, and nobody honest trusts a Sybil
//! unless the leak edge is switched on.

use agentmesh_core::rng::{below, stream, unit_f64};
use agentmesh_core::trust::{
    propagate_trust, Orientation, PropagationParams, TrustGraph, TRANSPOSE_BASE,
};
use serde::{Deserialize, Serialize};

use super::{Check, Outcome, ScenarioConfig, ScenarioReport};
use crate::error::{AppError, Result};

const TOLERANCE: f64 = 1e-13;
const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SybilSetting {
    pub internal_weight: f64,
    pub leak: bool,
    pub sybil_mass: f64,
    pub honest_mass: f64,
    pub max_sybil: f64,
    pub mean_honest: f64,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SybilOutcome {
    pub honest: usize,
    pub sybils: usize,
    pub base: f64,
    pub settings: Vec<SybilSetting>,
    /// Largest minus smallest Sybil mass over the no-leak settings.
    pub mass_spread: f64,
    /// Sybil mass gained from one honest→Sybil edge of weight 1.
    pub leak_gain: Option<f64>,
}

/// Honest graph (ring plus `degree` random out-edges per agent, drawn from
/// a stream that ignores every other argument) joined with a complete
/// Sybil clique of weight `internal_weight`.
pub fn sybil_graph(
    honest: usize,
    sybils: usize,
    degree: u32,
    internal_weight: f64,
    leak: bool,
    seed: u64,
) -> TrustGraph {
    let n = honest + sybils;
    let mut g = TrustGraph::new(n);
    let mut rng = stream(seed, "sybil/honest-graph");
    let weight = |rng: &mut _| 0.05 + 0.95 * unit_f64(rng);
    if honest >= 2 {
        for i in 0..honest {
            g.set_edge(i, (i + 1) % honest, weight(&mut rng))
                .expect("ring edge is valid");
            let extra = (degree as usize).min(honest - 2);
            let mut added = 0;
            while added < extra {
                let j = below(&mut rng, honest as u64) as usize;
                if j != i && g.weight(i, j).is_none() {
                    g.set_edge(i, j, weight(&mut rng))
                        .expect("random edge is valid");
                    added += 1;
                }
            }
        }
    }
    for a in honest..n {
        for b in honest..n {
            if a != b {
                g.set_edge(a, b, internal_weight)
                    .expect("clique weight in (0, 1]");
            }
        }
    }
    if leak && honest > 0 && sybils > 0 {
        g.set_edge(0, honest, 1.0).expect("leak edge is valid");
    }
    g
}

fn measure(
    g: &TrustGraph,
    honest: usize,
    alpha: f64,
    internal_weight: f64,
    leak: bool,
) -> Result<SybilSetting> {
    let n = g.len();
    let params = PropagationParams {
        alpha,
        tol: TOLERANCE,
        max_iters: Some(100_000),
        orientation: Orientation::Transpose,
        ..PropagationParams::transpose_scoring(n)
    };
    let t = propagate_trust(g, &params)
        .map_err(|e| AppError::Scenario(format!("trust propagation: {e}")))?;
    let (h, s) = t.values.split_at(honest);
    Ok(SybilSetting {
        internal_weight,
        leak,
        sybil_mass: s.iter().sum(),
        honest_mass: h.iter().sum(),
        max_sybil: s.iter().copied().fold(0.0, f64::max),
        mean_honest: if h.is_empty() {
            0.0
        } else {
            h.iter().sum::<f64>() / h.len() as f64
        },
        iterations: t.iterations,
        residual: t.residual,
    })
}

pub fn run_sybil(config: &ScenarioConfig) -> Result<ScenarioReport> {
    config.validate()?;
    let n = config.n as usize;
    let sybils = (n as f64 * config.sybil.fraction).floor() as usize;
    let honest = n - sybils;
    let p = &config.sybil;

    let mut settings = Vec::new();
    if sybils == 0 {
        let g = sybil_graph(honest, 0, p.honest_degree, 1.0, false, config.seed);
        settings.push(measure(&g, honest, config.alpha, 0.0, false)?);
    } else {
        for &w in &p.internal_weights {
            let g = sybil_graph(honest, sybils, p.honest_degree, w, false, config.seed);
            settings.push(measure(&g, honest, config.alpha, w, false)?);
        }
        if honest > 0 {
            let w = p.internal_weights[0];
            let g = sybil_graph(honest, sybils, p.honest_degree, w, true, config.seed);
            settings.push(measure(&g, honest, config.alpha, w, true)?);
        }
    }

    let sealed: Vec<f64> = settings
        .iter()
        .filter(|s| !s.leak)
        .map(|s| s.sybil_mass)
        .collect();
    let mass_spread = sealed.iter().copied().fold(f64::MIN, f64::max)
        - sealed.iter().copied().fold(f64::MAX, f64::min);
    let leak_gain = settings
        .iter()
        .find(|s| s.leak)
        .map(|s| s.sybil_mass - sealed[0]);
    let expected_total = n as f64 * TRANSPOSE_BASE;

    let mut checks = vec![Check::new(
        "trust_mass_conserved",
        settings
            .iter()
            .all(|s| (s.sybil_mass + s.honest_mass - expected_total).abs() <= MASS_TOLERANCE),
        format!("total propagated mass equals {expected_total}"),
    )];
    if sybils > 0 {
        checks.push(Check::new(
            "sybil_mass_invariant",
            mass_spread <= MASS_TOLERANCE,
            format!("spread {mass_spread:e} across internal weights"),
        ));
    }
    if let Some(gain) = leak_gain {
        checks.push(Check::new(
            "leak_increases_sybil_mass",
            gain > 0.0,
            format!("gain {gain:e}"),
        ));
    }
    let outcome = SybilOutcome {
        honest,
        sybils,
        base: TRANSPOSE_BASE,
        settings,
        mass_spread,
        leak_gain,
    };
    Ok(ScenarioReport::new(config, checks, Outcome::Sybil(outcome)))
}
