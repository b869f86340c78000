//! End-to-end discovery: publish cards to a replicated registry, gossip to
//! convergence, score trust, train the ranker and answer queries with
//! inclusion proofs checked against the converged root.

use std::collections::BTreeMap;

use agentmesh_core::card::card_digest;
use agentmesh_core::discovery::{
    card_embedding, cosine, embed_text, rank, train_traced, L2RModel, RankFeatures, RankOptions,
    TrainingPair,
};
use agentmesh_core::registry::verify_proof;
use agentmesh_core::rng::{below, indexed_stream, stream, unit_f64};
use agentmesh_core::sync::{round_cap, run_until_converged, RoundStats};
use agentmesh_core::trust::{
    behavior_score, fuse_signals, propagate_trust, Context, ContextWeights, Orientation,
    PropagationParams, TrustGraph, TrustSignals,
};
use agentmesh_core::{
    AgentDid, AgentFactCard, KeyDirectory, RegistryKey, RegistryRecord, ReplicaState, Topology,
};
use serde::{Deserialize, Serialize};

use super::{sub_seed, Check, Outcome, ScenarioConfig, ScenarioInputs, ScenarioReport};
use crate::corpus::SimAgent;
use crate::error::{AppError, Result};

/// Hidden utility the training pairs are labelled with.
const TRUE_WEIGHTS: [f64; 4] = [2.0, 1.0, 0.1, 0.5];
const ENDORSEMENTS_PER_AGENT: u64 = 3;
const LOW_TRUST: f64 = 0.1;
const HIGH_TRUST: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshSummary {
    pub replicas: u32,
    pub records: usize,
    /// `None` if the round cap was hit.
    pub rounds: Option<u32>,
    pub cap: u32,
    #[serde(with = "agentmesh_core::hexser")]
    pub root: [u8; 32],
    pub round_stats: Vec<RoundStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub did: AgentDid,
    pub display_name: String,
    pub score: f64,
    pub trust: f64,
    pub proof_levels: usize,
    pub proof_verified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityProbe {
    pub did: AgentDid,
    /// Zero-based positions in the full ranking at low and high trust.
    pub position_low: usize,
    pub position_high: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query: String,
    pub hits: Vec<Hit>,
    /// Largest cosine between two returned agents.
    pub max_pair_cosine: f64,
    pub probe: Option<MonotonicityProbe>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryOutcome {
    pub agents: usize,
    pub rejected_cards: Vec<String>,
    pub mesh: MeshSummary,
    pub model: L2RModel,
    pub training_loss_first: f64,
    pub training_loss_last: f64,
    pub queries: Vec<QueryResult>,
}

/// Position of `did` in the full, undeduplicated ranking when its trust is
/// overridden to `value` and everyone else keeps `trust`.
pub fn position_with_trust(
    query: &[f64],
    cards: &[AgentFactCard],
    trust: &BTreeMap<AgentDid, f64>,
    model: &L2RModel,
    options: &RankOptions,
    did: &AgentDid,
    value: f64,
) -> Result<usize> {
    let opts = RankOptions {
        k: cards.len(),
        tau: None,
        ..*options
    };
    let ranked = rank(
        query,
        cards,
        |d| {
            if d == did {
                Some(value)
            } else {
                trust.get(d).copied()
            }
        },
        model,
        &opts,
    )
    .map_err(|e| AppError::Scenario(format!("ranking: {e}")))?;
    ranked
        .iter()
        .position(|r| r.did == *did)
        .ok_or_else(|| AppError::Scenario(format!("{did} missing from ranking")))
}

/// Fused trust for every agent from a seeded endorsement graph and usage
/// statistics. Values are in `[0, 1]`.
pub fn corpus_trust(agents: &[SimAgent], alpha: f64, seed: u64) -> Result<BTreeMap<AgentDid, f64>> {
    let n = agents.len();
    let mut g = TrustGraph::new(n);
    let mut rng = stream(seed, "discovery/endorsements");
    if n >= 2 {
        for i in 0..n {
            for _ in 0..ENDORSEMENTS_PER_AGENT {
                let j = below(&mut rng, n as u64) as usize;
                if j != i {
                    g.set_edge(i, j, unit_f64(&mut rng))
                        .expect("endorsement weight in [0, 1)");
                }
            }
        }
    }
    let params = PropagationParams {
        alpha,
        orientation: Orientation::Transpose,
        ..PropagationParams::transpose_scoring(n)
    };
    let t = propagate_trust(&g, &params)
        .map_err(|e| AppError::Scenario(format!("trust propagation: {e}")))?;
    let top = t.values.iter().copied().fold(0.0, f64::max);
    let features: Vec<Vec<f64>> = agents
        .iter()
        .map(|a| vec![(a.card.usage_count as f64).ln_1p()])
        .collect();
    let weights = ContextWeights::for_context(Context::Analytical);
    agents
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let signals = TrustSignals {
                policy_pass_rate: 1.0,
                anomaly_score: behavior_score(&features[i], &features),
                attestation_score: 0.0,
            };
            let propagated = if top > 0.0 {
                (t.values[i] / top).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let fused = fuse_signals(&signals, &weights, propagated)
                .map_err(|e| AppError::Scenario(e.to_string()))?;
            Ok((a.card.did, fused))
        })
        .collect()
}

fn training_pairs(
    cards: &[AgentFactCard],
    trust: &BTreeMap<AgentDid, f64>,
    config: &ScenarioConfig,
) -> Vec<TrainingPair> {
    let d = &config.discovery;
    let mut rng = stream(config.seed, "discovery/training");
    let embeddings: Vec<Vec<f64>> = cards.iter().map(card_embedding).collect();
    let utility = |x: &RankFeatures| {
        TRUE_WEIGHTS
            .iter()
            .zip(x.to_array())
            .map(|(w, v)| w * v)
            .sum::<f64>()
    };
    let mut pairs = Vec::with_capacity(d.training_pairs);
    while pairs.len() < d.training_pairs {
        let q = &embeddings[below(&mut rng, cards.len() as u64) as usize];
        let a = below(&mut rng, cards.len() as u64) as usize;
        let b = below(&mut rng, cards.len() as u64) as usize;
        let feat = |i: usize| {
            let t = trust.get(&cards[i].did).copied().unwrap_or(0.0);
            RankFeatures::for_card(q, &embeddings[i], t, &cards[i], d.now, d.horizon)
        };
        let (fa, fb) = (feat(a), feat(b));
        let (ua, ub) = (utility(&fa), utility(&fb));
        if ua == ub {
            continue;
        }
        pairs.push(if ua > ub {
            TrainingPair {
                preferred: fa,
                other: fb,
            }
        } else {
            TrainingPair {
                preferred: fb,
                other: fa,
            }
        });
    }
    pairs
}

pub fn run_discovery_e2e(
    config: &ScenarioConfig,
    inputs: &ScenarioInputs,
) -> Result<ScenarioReport> {
    config.validate()?;
    let d = &config.discovery;
    let all = inputs.agents(config);
    if all.is_empty() {
        return Err(AppError::validation("the discovery corpus is empty"));
    }
    if inputs.queries.is_empty() {
        return Err(AppError::validation("no queries given"));
    }

    let mut directory = KeyDirectory::new();
    for a in &all {
        directory.register(a.keys.public_key);
    }

    // Publish: every valid card under its DID, and under its display name
    // when that is a legal, unclaimed registry name.
    let replicas = d.replicas;
    let mut mesh: Vec<ReplicaState> = (0..replicas).map(ReplicaState::new).collect();
    let mut rng = stream(config.seed, "discovery/publish");
    let mut agents = Vec::with_capacity(all.len());
    let mut rejected = Vec::new();
    let mut names = BTreeMap::new();
    let mut clock = 0u64;
    for a in all {
        let digest = match card_digest(&a.card) {
            Ok(dg) => dg,
            Err(e) => {
                rejected.push(format!("{}: {e}", a.card.display_name));
                continue;
            }
        };
        let mut keys = vec![RegistryKey::Did(a.card.did)];
        if let Ok(k) = RegistryKey::name(&a.card.display_name) {
            if names.insert(k.clone(), a.card.did).is_none() {
                keys.push(k);
            }
        }
        let writer = below(&mut rng, replicas as u64) as usize;
        for key in keys {
            clock += 1;
            let record = RegistryRecord::signed(
                key,
                a.card.endpoint_url.clone(),
                digest,
                &a.keys,
                a.card.version,
            );
            mesh[writer]
                .local_put(record, clock, &directory)
                .map_err(|e| AppError::Scenario(format!("publish: {e}")))?;
        }
        agents.push(a);
    }
    if agents.is_empty() {
        return Err(AppError::validation("no card in the corpus is valid"));
    }

    let topology = Topology::build(
        config.topology,
        replicas,
        sub_seed(config.seed, "discovery/topology", 0),
    )
    .map_err(|e| AppError::validation(format!("topology: {e}")))?;
    let cap = config
        .rounds
        .unwrap_or_else(|| round_cap(replicas as usize));
    let mut gossip = indexed_stream(config.seed, "discovery/gossip", 0);
    let (convergence, round_stats) = run_until_converged(&mut mesh, &topology, cap, &mut gossip);

    let to_index = |r: &ReplicaState| {
        r.to_index(&directory)
            .map_err(|e| AppError::Scenario(format!("replica store failed to index: {e}")))
    };
    let indexes = mesh.iter().map(to_index).collect::<Result<Vec<_>>>()?;
    let root = indexes[0].root_digest();
    let stores_equal = mesh
        .iter()
        .all(|r| r.store_bytes() == mesh[0].store_bytes());
    let roots_equal = indexes.iter().all(|i| i.root_digest() == root);
    let index = &indexes[0];

    let cards: Vec<AgentFactCard> = agents.iter().map(|a| a.card.clone()).collect();
    let trust = corpus_trust(&agents, config.alpha, config.seed)?;
    let pairs = training_pairs(&cards, &trust, config);
    let (model, losses) = train_traced(&pairs, d.learning_rate, d.iterations)
        .map_err(|e| AppError::Scenario(format!("training: {e}")))?;
    let loss_monotone = losses.windows(2).all(|w| w[1] <= w[0] + 1e-12);

    let options = RankOptions {
        k: d.k,
        tau: Some(config.tau),
        now: d.now,
        horizon: d.horizon,
    };
    let by_did: BTreeMap<AgentDid, &AgentFactCard> = cards.iter().map(|c| (c.did, c)).collect();
    let mut results = Vec::with_capacity(inputs.queries.len());
    let mut proofs_ok = true;
    let mut distinct_ok = true;
    let mut monotone_ok = true;
    let mut resolved_ok = true;
    for (qi, text) in inputs.queries.iter().enumerate() {
        let q = embed_text(text);
        let ranked = rank(&q, &cards, |did| trust.get(did).copied(), &model, &options)
            .map_err(|e| AppError::Scenario(format!("ranking: {e}")))?;
        let mut hits = Vec::with_capacity(ranked.len());
        for r in &ranked {
            let key = RegistryKey::Did(r.did);
            let card = by_did[&r.did];
            let record = index.resolve(&key);
            let digest_matches =
                matches!((record, card_digest(card)), (Some(rec), Ok(dg)) if rec.card_digest == dg);
            resolved_ok &= digest_matches;
            let (levels, verified) = match index.prove_inclusion(&key) {
                Ok(p) => (p.levels.len(), verify_proof(&root, &p)),
                Err(_) => (0, false),
            };
            proofs_ok &= verified;
            hits.push(Hit {
                did: r.did,
                display_name: card.display_name.clone(),
                score: r.score,
                trust: r.features.trust,
                proof_levels: levels,
                proof_verified: verified,
            });
        }
        let embeddings: Vec<Vec<f64>> = ranked
            .iter()
            .map(|r| card_embedding(by_did[&r.did]))
            .collect();
        let mut max_pair_cosine = f64::NEG_INFINITY;
        for i in 0..embeddings.len() {
            for j in i + 1..embeddings.len() {
                max_pair_cosine = max_pair_cosine.max(cosine(&embeddings[i], &embeddings[j]));
            }
        }
        if max_pair_cosine >= config.tau {
            distinct_ok = false;
        }

        let probe_index = below(
            &mut indexed_stream(config.seed, "discovery/probe", qi as u64),
            cards.len() as u64,
        );
        let probe_did = cards[probe_index as usize].did;
        let position_low =
            position_with_trust(&q, &cards, &trust, &model, &options, &probe_did, LOW_TRUST)?;
        let position_high =
            position_with_trust(&q, &cards, &trust, &model, &options, &probe_did, HIGH_TRUST)?;
        if model.weights[1] >= 0.0 && position_high > position_low {
            monotone_ok = false;
        }
        results.push(QueryResult {
            query: text.clone(),
            hits,
            max_pair_cosine: if max_pair_cosine.is_finite() {
                max_pair_cosine
            } else {
                0.0
            },
            probe: Some(MonotonicityProbe {
                did: probe_did,
                position_low,
                position_high,
            }),
        });
    }

    let checks = vec![
        Check::new(
            "mesh_converged_identically",
            convergence.rounds().is_some() && stores_equal && roots_equal,
            format!("{convergence:?}; stores equal {stores_equal}; roots equal {roots_equal}"),
        ),
        Check::new(
            "proofs_verify",
            proofs_ok,
            "every returned agent proves inclusion under the converged root",
        ),
        Check::new(
            "records_match_cards",
            resolved_ok,
            "resolved records carry the card digest",
        ),
        Check::new(
            "results_distinct",
            distinct_ok,
            format!("pairwise cosine below {}", config.tau),
        ),
        Check::new(
            "training_loss_non_increasing",
            loss_monotone,
            "full-batch descent",
        ),
        Check::new(
            "rank_monotone_in_trust",
            monotone_ok,
            format!("trust {LOW_TRUST} -> {HIGH_TRUST} never lowers the probe"),
        ),
    ];
    let outcome = DiscoveryOutcome {
        agents: agents.len(),
        rejected_cards: rejected,
        mesh: MeshSummary {
            replicas,
            records: index.len(),
            rounds: convergence.rounds(),
            cap,
            root,
            round_stats,
        },
        model,
        training_loss_first: losses.first().copied().unwrap_or(f64::NAN),
        training_loss_last: losses.last().copied().unwrap_or(f64::NAN),
        queries: results,
    };
    Ok(ScenarioReport::new(
        config,
        checks,
        Outcome::DiscoveryE2E(outcome),
    ))
}
