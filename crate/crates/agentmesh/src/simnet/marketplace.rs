//! Task marketplace: discovery, invoicing, settlement and the trust
//! feedback loop.
//!
//! Each round every agent outside quarantine asks discovery for a provider
//! for a random skill, receives an invoice at the fixed task price and pays
//! it with a header signed by its ephemeral key. Each settlement makes the
//! payee attest `PaymentSettled` about the payer; failed settlements count
//! against the payer. Trust is recomputed at the end of the round and used
//! for the next one.

use std::collections::BTreeMap;

use agentmesh_core::discovery::{embed_text, rank, L2RModel, RankOptions};
use agentmesh_core::identity::{verify_attestation, AttestationIssuer};
use agentmesh_core::micropay::{
    create_invoice, parse_payment_header, EphemeralKey, Ledger, Nonce, PaymentHeader, SettleError,
};
use agentmesh_core::privacy::PrivacyBudget;
use agentmesh_core::rng::{below, indexed_stream, seed_bytes, stream, SimRng};
use agentmesh_core::trust::{
    attestation_score, behavior_score, fuse_signals, propagate_trust, verification_tier,
    ContextWeights, Orientation, PropagationParams, TierThresholds, TrustGraph, TrustReportEntry,
    TrustSignals, VerificationTier,
};
use agentmesh_core::{sha256, Attestation, ClaimType, KeyDirectory};
use serde::{Deserialize, Serialize};

use super::{
    relative_to_base, Check, Outcome, ScenarioConfig, ScenarioInputs, ScenarioReport,
    MARKET_DEFAULT_ROUNDS,
};
use crate::corpus::{SimAgent, SKILLS};
use crate::error::{AppError, Result};

/// Logical time units per round.
const ROUND_SPAN: u64 = 10_000;
const MAX_ROUNDS: u32 = 100_000;

/// Provider choice weighs relevance first, then trust.
fn provider_model() -> L2RModel {
    L2RModel {
        weights: [1.0, 0.5, 0.05, 0.2],
        ..L2RModel::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketRound {
    pub round: u32,
    pub requests: u32,
    pub settled: u32,
    pub insufficient_funds: u32,
    /// Requests turned away because the requester is quarantined.
    pub refused: u32,
    pub policy_violations: u32,
    /// Checks spent on settled payments, by payer tier.
    pub verification_cost: u64,
    pub volume: u64,
    pub ledger_total: u64,
    pub mean_fused: f64,
    pub deadbeat_fused: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpRelease {
    pub query: String,
    pub epsilon: f64,
    /// `None` when the budget refused the query.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketOutcome {
    pub agents: usize,
    pub rounds: Vec<MarketRound>,
    pub receipts: usize,
    pub attestations: usize,
    pub ledger_total: u64,
    /// Fused trust of the deadbeat after each round; entry 0 is the prior.
    pub deadbeat_history: Vec<f64>,
    /// Round-1 versus final-round comparison for the deadbeat.
    pub deadbeat_trust_fell: Option<bool>,
    pub final_trust: Vec<TrustReportEntry>,
    pub dp: Vec<DpRelease>,
    pub dp_spent: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Activity {
    actions: u64,
    policy_pass: u64,
    settled: u64,
    failed: u64,
}

impl Activity {
    fn failure_rate(&self) -> f64 {
        let attempts = self.settled + self.failed;
        if attempts == 0 {
            0.0
        } else {
            self.failed as f64 / attempts as f64
        }
    }
}

/// Interaction tally on the edge `rater -> rated`.
#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    good: u64,
    bad: u64,
}

struct Market<'a> {
    config: &'a ScenarioConfig,
    agents: &'a [SimAgent],
    directory: KeyDirectory,
    weights: ContextWeights,
    thresholds: TierThresholds,
    tallies: BTreeMap<(usize, usize), Tally>,
    activity: Vec<Activity>,
    attestations: Vec<Attestation>,
}

impl Market<'_> {
    fn trust(&self) -> Result<Vec<TrustReportEntry>> {
        let n = self.agents.len();
        let mut g = TrustGraph::new(n);
        for (&(from, to), t) in &self.tallies {
            let w = t.good as f64 / (t.good + t.bad) as f64;
            g.set_edge(from, to, w).expect("tally edges are valid");
        }
        let params = PropagationParams {
            alpha: self.config.alpha,
            orientation: Orientation::Transpose,
            ..PropagationParams::transpose_scoring(n)
        };
        let t = propagate_trust(&g, &params)
            .map_err(|e| AppError::Scenario(format!("trust propagation: {e}")))?;
        let standing = relative_to_base(&t);

        let mut verified = vec![0u64; n];
        let index: BTreeMap<_, _> = self
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| (a.card.did, i))
            .collect();
        for att in &self.attestations {
            if verify_attestation(att, &self.directory) == agentmesh_core::AttestationStatus::Valid
            {
                if let Some(&i) = index.get(&att.subject) {
                    verified[i] += 1;
                }
            }
        }
        let features: Vec<Vec<f64>> = self
            .activity
            .iter()
            .map(|a| vec![a.failure_rate()])
            .collect();

        (0..n)
            .map(|i| {
                let a = &self.activity[i];
                let signals = TrustSignals {
                    policy_pass_rate: if a.actions == 0 {
                        1.0
                    } else {
                        a.policy_pass as f64 / a.actions as f64
                    },
                    anomaly_score: behavior_score(&features[i], &features),
                    attestation_score: attestation_score(verified[i]),
                };
                let propagated = standing[i];
                let fused = fuse_signals(&signals, &self.weights, propagated)
                    .map_err(|e| AppError::Scenario(format!("fusion: {e}")))?;
                Ok(TrustReportEntry {
                    did: self.agents[i].card.did,
                    propagated,
                    policy: signals.policy_pass_rate,
                    behavior: signals.anomaly_score,
                    attest: signals.attestation_score,
                    fused,
                    tier: verification_tier(fused, &self.thresholds),
                })
            })
            .collect()
    }
}

fn nonce(rng: &mut SimRng) -> Nonce {
    let b = seed_bytes(rng);
    Nonce(b[..16].try_into().expect("sixteen bytes"))
}

fn shuffled(n: usize, rng: &mut SimRng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, below(rng, i as u64 + 1) as usize);
    }
    order
}

pub fn run_marketplace(config: &ScenarioConfig, inputs: &ScenarioInputs) -> Result<ScenarioReport> {
    config.validate()?;
    let agents = inputs.agents(config);
    let n = agents.len();
    if n < 2 {
        return Err(AppError::validation(
            "the marketplace needs at least two agents",
        ));
    }
    let p = &config.market;
    let rounds = config.rounds.unwrap_or(MARKET_DEFAULT_ROUNDS);
    if rounds > MAX_ROUNDS {
        return Err(AppError::validation(format!(
            "at most {MAX_ROUNDS} marketplace rounds"
        )));
    }
    if let Some(d) = p.deadbeat {
        if d >= n {
            return Err(AppError::validation(format!(
                "deadbeat index {d} out of range for {n} agents"
            )));
        }
    }

    let mut directory = KeyDirectory::new();
    for a in &agents {
        directory.register(a.keys.public_key);
    }
    let mut ledger = Ledger::new();
    for (i, a) in agents.iter().enumerate() {
        let amount = if p.deadbeat == Some(i) {
            p.deadbeat_balance
        } else {
            p.initial_balance
        };
        ledger
            .deposit(a.card.did, amount)
            .map_err(|_| AppError::validation("initial balances overflow"))?;
    }
    let initial_total = u64::try_from(ledger.total())
        .map_err(|_| AppError::validation("initial balances overflow"))?;

    let window_end =
        u32::try_from((rounds as u64 + 1) * ROUND_SPAN).expect("bounded by MAX_ROUNDS");
    let ephemeral: Vec<EphemeralKey> = agents
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let seed = seed_bytes(&mut indexed_stream(
                config.seed,
                "marketplace/ephemeral",
                i as u64,
            ));
            EphemeralKey::delegate(&a.keys, seed, 0, window_end).expect("window is non-empty")
        })
        .collect();
    let mut issuers: Vec<AttestationIssuer> = agents
        .iter()
        .map(|a| AttestationIssuer::new(a.keys.clone()))
        .collect();
    let cards: Vec<_> = agents.iter().map(|a| a.card.clone()).collect();
    let skill_vectors: Vec<Vec<f64>> = SKILLS.iter().map(|s| embed_text(s)).collect();
    let model = provider_model();

    let mut market = Market {
        config,
        agents: &agents,
        directory: directory.clone(),
        weights: ContextWeights::for_context(p.context),
        thresholds: TierThresholds::default(),
        tallies: BTreeMap::new(),
        activity: vec![Activity::default(); n],
        attestations: Vec::new(),
    };
    let mut trust = market.trust()?;
    let prior: Vec<f64> = trust.iter().map(|t| t.fused).collect();
    let mut deadbeat_history: Vec<f64> =
        p.deadbeat.map(|d| vec![trust[d].fused]).unwrap_or_default();

    let mut rows = Vec::with_capacity(rounds as usize);
    let mut conserved = true;
    let mut attested = true;
    let mut wire_ok = true;
    let mut unexpected: Vec<String> = Vec::new();
    let mut unchanged = true;

    for round in 1..=rounds {
        let mut rng = indexed_stream(config.seed, "marketplace/round", round as u64);
        let fused: BTreeMap<_, _> = trust.iter().map(|t| (t.did, t.fused)).collect();
        let tiers: Vec<VerificationTier> = trust.iter().map(|t| t.tier).collect();
        let mut row = MarketRound {
            round,
            requests: 0,
            settled: 0,
            insufficient_funds: 0,
            refused: 0,
            policy_violations: 0,
            verification_cost: 0,
            volume: 0,
            ledger_total: 0,
            mean_fused: 0.0,
            deadbeat_fused: None,
        };
        let mut step = 0u64;
        let mut requests_this_round = vec![0u32; n];
        for _ in 0..p.tasks_per_agent {
            for requester in shuffled(n, &mut rng) {
                row.requests += 1;
                let Some(cost) = tiers[requester].verification_cost() else {
                    row.refused += 1;
                    continue;
                };
                step += 1;
                let now = round as u64 * ROUND_SPAN + step;
                let query = &skill_vectors[below(&mut rng, SKILLS.len() as u64) as usize];
                let opts = RankOptions {
                    k: n,
                    tau: None,
                    now,
                    horizon: config.discovery.horizon,
                };
                let ranked = rank(query, &cards, |d| fused.get(d).copied(), &model, &opts)
                    .map_err(|e| AppError::Scenario(format!("discovery: {e}")))?;
                let provider = ranked.iter().find_map(|r| {
                    let i = agents.iter().position(|a| a.card.did == r.did)?;
                    (i != requester && tiers[i] != VerificationTier::Quarantine).then_some(i)
                });
                let Some(provider) = provider else {
                    row.refused += 1;
                    continue;
                };

                requests_this_round[requester] += 1;
                let act = &mut market.activity[requester];
                act.actions += 1;
                if p.price <= p.max_amount
                    && requests_this_round[requester] <= p.max_requests_per_round
                {
                    act.policy_pass += 1;
                } else {
                    row.policy_violations += 1;
                }

                let payee = &agents[provider];
                let invoice = create_invoice(
                    payee.card.did,
                    p.price,
                    &format!("r{round}-s{step}"),
                    now + p.invoice_ttl,
                    &mut rng,
                )
                .expect("price is positive");
                let header = PaymentHeader::authorize(
                    &invoice,
                    &agents[requester].keys,
                    &ephemeral[requester],
                    nonce(&mut rng),
                    now,
                )
                .map_err(|e| AppError::Scenario(format!("authorize: {e}")))?;
                let wire = header.render();
                let received = match parse_payment_header(&wire) {
                    Ok(h) if h == header => h,
                    _ => {
                        wire_ok = false;
                        header
                    }
                };
                match ledger.settle(&received, &invoice, &directory, now) {
                    Ok(receipt) => {
                        row.settled += 1;
                        row.volume += receipt.amount;
                        row.verification_cost += cost as u64;
                        market.activity[requester].settled += 1;
                        market
                            .tallies
                            .entry((provider, requester))
                            .or_default()
                            .good += 1;
                        let payload = sha256(&[&receipt.invoice_id.0, &receipt.nonce.0]);
                        let att = issuers[provider]
                            .issue(receipt.payer, ClaimType::PaymentSettled, payload, now)
                            .map_err(|e| AppError::Scenario(format!("attestation: {e}")))?;
                        market.attestations.push(att);
                    }
                    Err(SettleError::InsufficientFunds { .. }) => {
                        row.insufficient_funds += 1;
                        market.activity[requester].failed += 1;
                        market.tallies.entry((provider, requester)).or_default().bad += 1;
                    }
                    Err(e) => unexpected.push(format!("round {round} step {step}: {e}")),
                }
                if ledger.total() != initial_total as u128 {
                    conserved = false;
                }
            }
        }
        if market.attestations.len() != ledger.receipts().len()
            || !market.attestations.iter().all(|a| {
                verify_attestation(a, &directory) == agentmesh_core::AttestationStatus::Valid
            })
        {
            attested = false;
        }

        trust = market.trust()?;
        if trust.iter().map(|t| t.fused).ne(prior.iter().copied()) {
            unchanged = false;
        }
        row.ledger_total = u64::try_from(ledger.total()).unwrap_or(u64::MAX);
        row.mean_fused = trust.iter().map(|t| t.fused).sum::<f64>() / n as f64;
        if let Some(d) = p.deadbeat {
            row.deadbeat_fused = Some(trust[d].fused);
            deadbeat_history.push(trust[d].fused);
        }
        rows.push(row);
    }

    let mut budget =
        PrivacyBudget::new(config.budget).map_err(|e| AppError::validation(e.to_string()))?;
    let mut dp_rng = stream(config.seed, "marketplace/dp");
    let mut dp = Vec::new();
    let mut release = |query: String, records: &[bool]| {
        let value = budget
            .count(records, |b| *b, config.epsilon, &mut dp_rng)
            .ok();
        dp.push(DpRelease {
            query,
            epsilon: config.epsilon,
            value,
        });
    };
    for tier in [
        VerificationTier::Streamlined,
        VerificationTier::Standard,
        VerificationTier::Enhanced,
        VerificationTier::Quarantine,
    ] {
        let marks: Vec<bool> = trust.iter().map(|t| t.tier == tier).collect();
        release(format!("agents_in_tier:{}", tier_name(tier)), &marks);
    }
    let settled: Vec<bool> = market
        .activity
        .iter()
        .flat_map(|a| (0..a.settled).map(|_| true))
        .collect();
    release("settled_payments".into(), &settled);
    let failed: Vec<bool> = market
        .activity
        .iter()
        .flat_map(|a| (0..a.failed).map(|_| true))
        .collect();
    release("failed_payments".into(), &failed);

    let mut checks = vec![
        Check::new(
            "ledger_conserved",
            conserved,
            format!("total stays {initial_total} after every settlement"),
        ),
        Check::new(
            "payments_attested",
            attested,
            "every receipt has one verifying PaymentSettled attestation",
        ),
        Check::new(
            "header_round_trip",
            wire_ok,
            "rendered headers parse back to themselves",
        ),
        Check::new(
            "only_expected_failures",
            unexpected.is_empty(),
            unexpected.join("; "),
        ),
    ];
    if p.tasks_per_agent == 0 {
        checks.push(Check::new(
            "idle_market_keeps_trust",
            unchanged,
            "no tasks, no trust change",
        ));
    }
    let deadbeat_trust_fell = (deadbeat_history.len() > 2)
        .then(|| deadbeat_history[deadbeat_history.len() - 1] < deadbeat_history[1]);
    let outcome = MarketOutcome {
        agents: n,
        rounds: rows,
        receipts: ledger.receipts().len(),
        attestations: market.attestations.len(),
        ledger_total: initial_total,
        deadbeat_history,
        deadbeat_trust_fell,
        final_trust: trust,
        dp,
        dp_spent: budget.spent(),
    };
    Ok(ScenarioReport::new(
        config,
        checks,
        Outcome::Marketplace(outcome),
    ))
}

fn tier_name(t: VerificationTier) -> &'static str {
    match t {
        VerificationTier::Streamlined => "streamlined",
        VerificationTier::Standard => "standard",
        VerificationTier::Enhanced => "enhanced",
        VerificationTier::Quarantine => "quarantine",
    }
}
