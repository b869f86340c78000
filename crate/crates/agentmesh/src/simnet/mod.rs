//! Deterministic scenario harness.
//!
//! A scenario is a pure function of its [`ScenarioConfig`] and inputs:
//! logical time only, and every random choice drawn from a stream keyed by
//! the root seed and a subsystem label. Re-running a config gives the same
//! report bytes.

pub mod convergence;
pub mod discovery;
pub mod marketplace;
pub mod sybil;

use std::path::{Path, PathBuf};

use agentmesh_core::trust::Context;
use agentmesh_core::{AgentFactCard, TopologyKind};
use serde::{Deserialize, Serialize};

use crate::corpus::{adopt_corpus, synthetic_corpus, SimAgent};
use crate::error::{AppError, Result};
use crate::files;

pub use convergence::run_convergence;
pub use discovery::run_discovery_e2e;
pub use marketplace::run_marketplace;
pub use sybil::run_sybil;

pub const VERSION: &str = concat!("agentmesh ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Convergence,
    Sybil,
    Marketplace,
    #[serde(rename = "discovery_e2e")]
    DiscoveryE2E,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Convergence => "convergence",
            ScenarioKind::Sybil => "sybil",
            ScenarioKind::Marketplace => "marketplace",
            ScenarioKind::DiscoveryE2E => "discovery_e2e",
        }
    }
}

fn default_seed() -> u64 {
    7
}
fn default_topology() -> TopologyKind {
    TopologyKind::Complete
}
fn default_alpha() -> f64 {
    0.85
}
fn default_tau() -> f64 {
    0.95
}
fn default_epsilon() -> f64 {
    0.5
}
fn default_budget() -> f64 {
    agentmesh_core::privacy::DEFAULT_BUDGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SybilParams {
    /// Share of the `n` agents that are Sybils, in `[0, 0.5)`.
    pub fraction: f64,
    /// Edge weights tried inside the Sybil clique.
    pub internal_weights: Vec<f64>,
    /// Random out-edges per honest agent, on top of a ring.
    pub honest_degree: u32,
}

impl Default for SybilParams {
    fn default() -> Self {
        Self {
            fraction: 0.2,
            internal_weights: vec![0.1, 0.5, 0.9],
            honest_degree: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarketParams {
    /// Requests each agent makes per round; zero gives an idle market.
    pub tasks_per_agent: u32,
    /// Fixed price of every task, in micro-units.
    pub price: u64,
    pub initial_balance: u64,
    /// Index of an agent that starts with `deadbeat_balance` instead.
    pub deadbeat: Option<usize>,
    pub deadbeat_balance: u64,
    /// Policy limit: largest single payment.
    pub max_amount: u64,
    /// Policy limit: requests per agent per round.
    pub max_requests_per_round: u32,
    /// Logical time an invoice stays payable.
    pub invoice_ttl: u64,
    pub context: Context,
}

impl Default for MarketParams {
    fn default() -> Self {
        Self {
            tasks_per_agent: 1,
            price: 100,
            initial_balance: 10_000,
            deadbeat: None,
            deadbeat_balance: 150,
            max_amount: 1_000,
            max_requests_per_round: 2,
            invoice_ttl: 5,
            context: Context::Financial,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscoveryParams {
    /// Registry replicas in the mesh.
    pub replicas: u32,
    pub k: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub training_pairs: usize,
    /// Logical "now" for recency.
    pub now: u64,
    pub horizon: f64,
    /// Query strings, in addition to any read from `query_file`.
    pub queries: Vec<String>,
    pub query_file: Option<PathBuf>,
}

impl Default for DiscoveryParams {
    fn default() -> Self {
        Self {
            replicas: 8,
            k: 5,
            learning_rate: 0.1,
            iterations: 300,
            training_pairs: 400,
            now: 1_000,
            horizon: 1_000.0,
            queries: vec![
                "weather forecast".into(),
                "book a flight and hotel".into(),
                "review my code".into(),
                "translate a contract".into(),
            ],
            query_file: None,
        }
    }
}

/// Everything a scenario run depends on besides its input files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    /// Replicas for convergence, agents for the other scenarios when no
    /// corpus is given.
    pub n: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Independent trials; only the convergence scenario runs more than one.
    #[serde(default)]
    pub trials: Option<u32>,
    /// Gossip round cap (defaults to `64·log2 n + 64`), or marketplace
    /// rounds (defaults to 20).
    #[serde(default)]
    pub rounds: Option<u32>,
    #[serde(default = "default_topology")]
    pub topology: TopologyKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Privacy cost of each published aggregate.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_budget")]
    pub budget: f64,
    /// JSONL card corpus; a synthetic one of `n` agents is used otherwise.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub sybil: SybilParams,
    #[serde(default)]
    pub market: MarketParams,
    #[serde(default)]
    pub discovery: DiscoveryParams,
}

pub const MARKET_DEFAULT_ROUNDS: u32 = 20;
pub const CONVERGENCE_DEFAULT_TRIALS: u32 = 100;

fn invalid(msg: impl Into<String>) -> AppError {
    AppError::validation(msg)
}

impl ScenarioConfig {
    pub fn new(scenario: ScenarioKind, n: u32, seed: u64) -> Self {
        Self {
            scenario,
            n,
            seed,
            trials: None,
            rounds: None,
            topology: default_topology(),
            alpha: default_alpha(),
            tau: default_tau(),
            epsilon: default_epsilon(),
            budget: default_budget(),
            corpus: None,
            sybil: SybilParams::default(),
            market: MarketParams::default(),
            discovery: DiscoveryParams::default(),
        }
    }

    pub fn trial_count(&self) -> u32 {
        match (self.trials, self.scenario) {
            (Some(t), _) => t,
            (None, ScenarioKind::Convergence) => CONVERGENCE_DEFAULT_TRIALS,
            (None, _) => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("n must be at least 1"));
        }
        let trials = self.trial_count();
        if trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        if trials > 1 && self.scenario != ScenarioKind::Convergence {
            return Err(invalid(format!(
                "{} runs a single trial; trials = {trials}",
                self.scenario.name()
            )));
        }
        if self.rounds == Some(0) {
            return Err(invalid("rounds must be at least 1"));
        }
        if let TopologyKind::RandomRegular(k) = self.topology {
            if k == 0 {
                return Err(invalid("random regular degree must be at least 1"));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(invalid(format!("tau {} outside (0, 1]", self.tau)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(invalid(format!(
                "epsilon {} must be positive",
                self.epsilon
            )));
        }
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return Err(invalid(format!("budget {} must be positive", self.budget)));
        }
        let s = &self.sybil;
        if !(0.0..0.5).contains(&s.fraction) {
            return Err(invalid(format!(
                "Sybil fraction {} outside [0, 0.5)",
                s.fraction
            )));
        }
        if s.internal_weights.is_empty()
            || s.internal_weights.iter().any(|w| !(*w > 0.0 && *w <= 1.0))
        {
            return Err(invalid(
                "Sybil internal weights must be a non-empty list in (0, 1]",
            ));
        }
        let m = &self.market;
        if m.price == 0 {
            return Err(invalid("task price must be positive"));
        }
        if m.invoice_ttl == 0 {
            return Err(invalid("invoice ttl must be positive"));
        }
        let d = &self.discovery;
        if d.replicas == 0 {
            return Err(invalid("discovery needs at least one replica"));
        }
        if d.k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        if !(d.learning_rate > 0.0 && d.learning_rate.is_finite()) {
            return Err(invalid("learning rate must be positive"));
        }
        if d.iterations == 0 {
            return Err(invalid("training needs at least one iteration"));
        }
        if d.training_pairs == 0 {
            return Err(invalid("training needs at least one pair"));
        }
        if !(d.horizon > 0.0 && d.horizon.is_finite()) {
            return Err(invalid("recency horizon must be positive"));
        }
        Ok(())
    }
}

/// Files a scenario reads, loaded up front so runs never touch the disk.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScenarioInputs {
    pub cards: Option<Vec<AgentFactCard>>,
    pub queries: Vec<String>,
}

impl ScenarioInputs {
    /// Reads the corpus and query file named by `config`. Relative paths
    /// resolve against `base_dir`, normally the config file's directory.
    pub fn load(config: &ScenarioConfig, base_dir: &Path) -> Result<Self> {
        let cards = match &config.corpus {
            Some(p) => Some(files::read_jsonl(&base_dir.join(p))?),
            None => None,
        };
        let mut queries = config.discovery.queries.clone();
        if let Some(p) = &config.discovery.query_file {
            let text = files::read_text(&base_dir.join(p))?;
            queries.extend(
                text.lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(String::from),
            );
        }
        Ok(Self { cards, queries })
    }

    pub fn from_config(config: &ScenarioConfig) -> Self {
        Self {
            cards: None,
            queries: config.discovery.queries.clone(),
        }
    }

    pub(crate) fn agents(&self, config: &ScenarioConfig) -> Vec<SimAgent> {
        match &self.cards {
            Some(cards) => adopt_corpus(cards.clone(), config.seed),
            None => synthetic_corpus(config.n as usize, config.seed),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads for independent trials; `None` runs them in order on
    /// the calling thread. Results are ordered by trial index either way.
    pub parallel: Option<usize>,
}

/// A named invariant and whether it held throughout the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scenario")]
pub enum Outcome {
    Convergence(convergence::ConvergenceOutcome),
    Sybil(sybil::SybilOutcome),
    Marketplace(marketplace::MarketOutcome),
    #[serde(rename = "discovery_e2e")]
    DiscoveryE2E(discovery::DiscoveryOutcome),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub version: String,
    pub config: ScenarioConfig,
    pub checks: Vec<Check>,
    pub outcome: Outcome,
}

impl ScenarioReport {
    pub fn new(config: &ScenarioConfig, checks: Vec<Check>, outcome: Outcome) -> Self {
        Self {
            version: VERSION.into(),
            config: config.clone(),
            checks,
            outcome,
        }
    }

    pub fn all_checks_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed_checks(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    /// Whether any gossip run hit its round cap.
    pub fn has_non_convergence(&self) -> bool {
        match &self.outcome {
            Outcome::Convergence(c) => c.summary.non_convergent > 0,
            Outcome::DiscoveryE2E(d) => d.mesh.rounds.is_none(),
            _ => false,
        }
    }

    pub fn to_json(&self) -> String {
        files::to_json_string(self)
    }

    /// Per-round time series as CSV.
    pub fn time_series_csv(&self) -> Vec<u8> {
        match &self.outcome {
            Outcome::Convergence(c) => files::to_csv(&c.rounds),
            Outcome::Sybil(s) => files::to_csv(&s.settings),
            Outcome::Marketplace(m) => files::to_csv(&m.rounds),
            Outcome::DiscoveryE2E(d) => files::to_csv(&d.mesh.round_stats),
        }
    }
}

/// Propagated trust as a share of each agent's prior, clamped to `[0, 1]`.
/// Under the transpose orientation the mean equals the prior, so an agent
/// with average standing scores 1 and one the graph ignores scores about
/// `1 − α`.
pub fn relative_to_base(t: &agentmesh_core::trust::TrustVector) -> Vec<f64> {
    t.values
        .iter()
        .zip(&t.base)
        .map(|(v, b)| {
            if *b > 0.0 {
                (v / b).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect()
}

/// A 64-bit seed for a numbered sub-task, for APIs that take an integer.
pub(crate) fn sub_seed(seed: u64, label: &str, index: u64) -> u64 {
    let b = agentmesh_core::rng::seed_bytes(&mut agentmesh_core::rng::indexed_stream(
        seed, label, index,
    ));
    u64::from_be_bytes(b[..8].try_into().expect("eight bytes"))
}

pub fn run_scenario(
    config: &ScenarioConfig,
    inputs: &ScenarioInputs,
    options: RunOptions,
) -> Result<ScenarioReport> {
    config.validate()?;
    match config.scenario {
        ScenarioKind::Convergence => run_convergence(config, options),
        ScenarioKind::Sybil => run_sybil(config),
        ScenarioKind::Marketplace => run_marketplace(config, inputs),
        ScenarioKind::DiscoveryE2E => run_discovery_e2e(config, inputs),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_fill_in() {
        let c: ScenarioConfig = serde_json::from_str(r#"{"scenario": "sybil", "n": 20}"#).unwrap();
        assert_eq!(c, ScenarioConfig::new(ScenarioKind::Sybil, 20, 7));
        c.validate().unwrap();
    }

    #[test]
    fn unknown_config_fields_are_rejected() {
        let r: std::result::Result<ScenarioConfig, _> =
            serde_json::from_str(r#"{"scenario": "sybil", "n": 20, "alhpa": 0.5}"#);
        assert!(r.is_err());
    }

    #[test]
    fn ranges_are_enforced() {
        let base = ScenarioConfig::new(ScenarioKind::Sybil, 20, 1);
        let mut c = base.clone();
        c.alpha = 1.0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.sybil.fraction = 0.5;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.trials = Some(3);
        assert!(c.validate().is_err());
        let mut c = base;
        c.n = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn topology_spelling() {
        let c: ScenarioConfig = serde_json::from_str(
            r#"{"scenario": "convergence", "n": 8, "topology": {"random_regular": 3}}"#,
        )
        .unwrap();
        assert_eq!(c.topology, TopologyKind::RandomRegular(3));
        let c: ScenarioConfig =
            serde_json::from_str(r#"{"scenario": "discovery_e2e", "n": 8, "topology": "ring"}"#)
                .unwrap();
        assert_eq!(c.topology, TopologyKind::Ring);
    }
}
