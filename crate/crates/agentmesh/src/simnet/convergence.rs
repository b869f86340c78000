//! Single-record dissemination across a replica mesh.

use agentmesh_core::rng::indexed_stream;
use agentmesh_core::sync::{
    round_cap, run_until_converged, seeded_mesh, summarize, Convergence, ConvergenceSummary,
};
use agentmesh_core::Topology;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sub_seed, Check, Outcome, RunOptions, ScenarioConfig, ScenarioReport};
use crate::error::{AppError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRow {
    pub trial: u32,
    pub round: u32,
    pub converged_count: u32,
    pub messages: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: u32,
    pub outcome: Convergence,
    pub messages: u64,
    pub bytes: u64,
    /// Every replica ended with the same store bytes and registry root.
    pub replicas_agree: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceOutcome {
    pub cap: u32,
    /// `3·log2 n`, the logarithmic reference for the median.
    pub log_bound: f64,
    pub summary: ConvergenceSummary,
    pub trials: Vec<TrialResult>,
    pub rounds: Vec<RoundRow>,
}

struct TrialRun {
    result: TrialResult,
    rows: Vec<RoundRow>,
}

fn run_trial(config: &ScenarioConfig, cap: u32, trial: u32) -> Result<TrialRun> {
    let n = config.n;
    let topology = Topology::build(
        config.topology,
        n,
        sub_seed(config.seed, "convergence/topology", trial as u64),
    )
    .map_err(|e| AppError::validation(format!("topology: {e}")))?;
    let (mut mesh, dir) = seeded_mesh(n, config.seed, trial);
    let mut rng = indexed_stream(config.seed, "convergence/gossip", trial as u64);
    let (outcome, stats) = run_until_converged(&mut mesh, &topology, cap, &mut rng);
    let replicas_agree = match outcome {
        Convergence::Converged { .. } => {
            let bytes = mesh[0].store_bytes();
            let roots: Vec<_> = mesh
                .iter()
                .map(|r| r.to_index(&dir).map(|i| i.root_digest()))
                .collect::<Result<_, _>>()
                .map_err(|e| AppError::Scenario(format!("replica store failed to index: {e}")))?;
            mesh.iter().all(|r| r.store_bytes() == bytes) && roots.iter().all(|r| *r == roots[0])
        }
        Convergence::NonConvergent { .. } => false,
    };
    let rows = stats
        .iter()
        .map(|s| RoundRow {
            trial,
            round: s.round,
            converged_count: s.converged_count,
            messages: s.messages,
            bytes: s.bytes,
        })
        .collect();
    Ok(TrialRun {
        result: TrialResult {
            trial,
            outcome,
            messages: stats.iter().map(|s| s.messages).sum(),
            bytes: stats.iter().map(|s| s.bytes).sum(),
            replicas_agree,
        },
        rows,
    })
}

pub fn run_convergence(config: &ScenarioConfig, options: RunOptions) -> Result<ScenarioReport> {
    config.validate()?;
    let cap = config
        .rounds
        .unwrap_or_else(|| round_cap(config.n as usize));
    let trials = config.trial_count();
    let runs: Vec<TrialRun> = match options.parallel {
        Some(p) if p > 1 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(p)
                .build()
                .map_err(|e| AppError::validation(format!("thread pool: {e}")))?;
            pool.install(|| {
                (0..trials)
                    .into_par_iter()
                    .map(|t| run_trial(config, cap, t))
                    .collect::<Result<Vec<_>>>()
            })?
        }
        _ => (0..trials)
            .map(|t| run_trial(config, cap, t))
            .collect::<Result<Vec<_>>>()?,
    };

    let outcomes: Vec<Convergence> = runs.iter().map(|r| r.result.outcome).collect();
    let summary = summarize(config.n, &outcomes);
    let log_bound = 3.0 * (config.n as f64).log2();
    let disagree: Vec<u32> = runs
        .iter()
        .filter(|r| r.result.outcome.rounds().is_some() && !r.result.replicas_agree)
        .map(|r| r.result.trial)
        .collect();
    let checks = vec![
        Check::new(
            "converged_replicas_identical",
            disagree.is_empty(),
            format!("trials with diverging replicas after convergence: {disagree:?}"),
        ),
        Check::new(
            "converged_count_monotone",
            runs.iter().all(|r| {
                r.rows
                    .windows(2)
                    .all(|w| w[0].converged_count <= w[1].converged_count)
            }),
            "replicas holding the record never decreases between rounds",
        ),
    ];
    let outcome = ConvergenceOutcome {
        cap,
        log_bound,
        summary,
        trials: runs.iter().map(|r| r.result).collect(),
        rounds: runs.into_iter().flat_map(|r| r.rows).collect(),
    };
    Ok(ScenarioReport::new(
        config,
        checks,
        Outcome::Convergence(outcome),
    ))
}
