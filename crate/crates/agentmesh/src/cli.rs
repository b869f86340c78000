//! The `agentmesh` command line.
//!
//! Output goes to stdout as JSON. Failures are one JSON object per line on
//! stderr, and the exit status is 0 on success, 1 for bad input and 2 when
//! a scenario ran but failed.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use agentmesh_core::discovery::{
    embed_text, rank, train_traced, L2RModel, RankOptions, TrainingPair,
};
use agentmesh_core::identity::generate_keypair;
use agentmesh_core::micropay::{
    create_invoice, parse_payment_header, EphemeralKey, Invoice, Ledger, Nonce, PaymentHeader,
};
use agentmesh_core::privacy::{laplace_mechanism, DpParams, PrivacyBudget};
use agentmesh_core::registry::verify_proof;
use agentmesh_core::rng::{seed_bytes, stream};
use agentmesh_core::trust::{
    fuse_signals, propagate_trust, verification_tier, Context, ContextWeights, PropagationParams,
    TierThresholds, TrustReportEntry, TrustSignals,
};
use agentmesh_core::{AgentDid, AgentFactCard, KeyPair, RegistryKey};
use clap::error::{ContextKind, ContextValue, ErrorKind};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::error::{AppError, Diagnostic, Result};
use crate::files::{self, KeysFile, RegistryFile, TrustGraphFile};
use crate::simnet::{relative_to_base, run_scenario, RunOptions, ScenarioConfig, ScenarioInputs};

#[derive(Debug, Parser)]
#[command(
    name = "agentmesh",
    version,
    about = "Federated agent registry: simulate, resolve, rank, score, pay"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario from a JSON config and write its report.
    Sim(SimArgs),
    /// Look up a DID or name in a registry snapshot, with an inclusion proof.
    Resolve(ResolveArgs),
    /// Rank a card corpus against a free-text query.
    Rank(RankArgs),
    /// Fit the pairwise ranking model to preference pairs.
    Train(TrainArgs),
    /// Propagate and fuse trust over a graph file.
    Trust(TrustArgs),
    /// Create invoices, sign payment headers and settle them on a ledger.
    Pay(PayArgs),
    /// Publish a count or value under the Laplace mechanism.
    Dp(DpArgs),
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Scenario config (JSON). Relative paths inside resolve against its directory.
    #[arg(long)]
    pub config: PathBuf,
    /// Root seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of trials; overrides the config.
    #[arg(long)]
    pub trials: Option<u32>,
    /// Run trials on this many threads. Output order is by trial index.
    #[arg(long)]
    pub parallel: Option<usize>,
    /// Exit with status 2 if any gossip run hits its round cap.
    #[arg(long)]
    pub strict: bool,
    /// Report path [default: ./out/<scenario>-<seed>.json]. The CSV time
    /// series is written next to it with a .csv extension.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ResolveArgs {
    /// Registry snapshot with owner keys (JSON).
    #[arg(long)]
    pub registry: PathBuf,
    /// A did:nanda: identifier or a registry name.
    #[arg(long)]
    pub key: String,
    /// Include the inclusion proof in the output.
    #[arg(long)]
    pub proof: bool,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    /// Free-text query.
    #[arg(long)]
    pub query: String,
    /// Card corpus, one JSON card per line.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Number of results.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Near-duplicate threshold on cosine similarity, in (0, 1].
    #[arg(long, default_value_t = 0.95)]
    pub tau: f64,
    /// Keep near duplicates.
    #[arg(long)]
    pub no_dedup: bool,
    /// Trained model (JSON) [default: built-in weights].
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Trust report from `agentmesh trust`; its fused scores become the
    /// trust feature. Agents not in it get zero.
    #[arg(long)]
    pub trust: Option<PathBuf>,
    /// Logical time for recency [default: latest last_active in the corpus].
    #[arg(long)]
    pub now: Option<u64>,
    /// Recency decay horizon.
    #[arg(long, default_value_t = 1000.0)]
    pub horizon: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Preference pairs, one JSON pair per line.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Gradient descent step size.
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    /// Full-batch iterations.
    #[arg(long, default_value_t = 300)]
    pub iters: usize,
    /// Write the model here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OrientationArg {
    Literal,
    Transpose,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ContextArg {
    Financial,
    Analytical,
    Default,
}

#[derive(Debug, Args)]
pub struct TrustArgs {
    /// Trust graph (JSON): nodes, weighted edges, optional signals.
    #[arg(long)]
    pub graph: PathBuf,
    /// Damping factor in (0, 1).
    #[arg(long, default_value_t = 0.85)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = OrientationArg::Transpose)]
    pub orientation: OrientationArg,
    /// Fusion weights preset.
    #[arg(long, value_enum, default_value_t = ContextArg::Default)]
    pub context: ContextArg,
    /// Convergence tolerance.
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PayArgs {
    #[command(subcommand)]
    pub command: PayCommand,
}

#[derive(Debug, Subcommand)]
pub enum PayCommand {
    /// Derive a key pair from a seed.
    Keygen {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Delegate an ephemeral key valid over [from, until).
    Delegate {
        /// Owner key pair (JSON from `pay keygen`).
        #[arg(long)]
        owner: PathBuf,
        #[arg(long)]
        from: u32,
        #[arg(long)]
        until: u32,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Issue an invoice.
    Invoice {
        #[arg(long)]
        payee: AgentDid,
        /// Micro-units.
        #[arg(long)]
        amount: u64,
        #[arg(long)]
        task: String,
        /// Last logical time at which the invoice can be paid.
        #[arg(long)]
        expires: u64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Sign a payment header for an invoice.
    Authorize {
        #[arg(long)]
        invoice: PathBuf,
        /// Payer key pair (JSON).
        #[arg(long)]
        owner: PathBuf,
        /// Ephemeral key (JSON from `pay delegate`).
        #[arg(long)]
        ephemeral: PathBuf,
        #[arg(long)]
        now: u64,
        /// Seed for the nonce.
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Check a header against the grammar and print its fields.
    Parse {
        #[arg(long)]
        header: String,
    },
    /// Credit an account, creating the ledger file if needed.
    Deposit {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        account: AgentDid,
        #[arg(long)]
        amount: u64,
    },
    /// Verify and apply a payment. Without --out this is a dry run.
    Settle {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        invoice: PathBuf,
        #[arg(long)]
        header: String,
        /// Public keys (JSON list of hex) for resolving payers.
        #[arg(long)]
        keys: PathBuf,
        #[arg(long)]
        now: u64,
        /// Where to write the updated ledger.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct DpArgs {
    /// Privacy cost of each release.
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Publish this value.
    #[arg(long, allow_negative_numbers = true, conflicts_with = "corpus")]
    pub value: Option<f64>,
    /// Sensitivity of --value.
    #[arg(long, default_value_t = 1.0)]
    pub sensitivity: f64,
    /// Count cards in this corpus...
    #[arg(long, requires = "capability")]
    pub corpus: Option<PathBuf>,
    /// ...that list this capability.
    #[arg(long)]
    pub capability: Option<String>,
    /// Number of releases, each charged to the budget.
    #[arg(long, default_value_t = 1)]
    pub repeat: u32,
    /// Total epsilon available.
    #[arg(long, default_value_t = agentmesh_core::privacy::DEFAULT_BUDGET)]
    pub budget: f64,
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run(args: Vec<OsString>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                let _ = write!(stdout, "{}", e.render());
                return 0;
            }
            _ => {
                let _ = writeln!(stderr, "{}", usage_diagnostic(&e).to_line());
                return 1;
            }
        },
    };
    match dispatch(cli.command, stdout) {
        Ok(Status::Ok) => 0,
        Ok(Status::Failed(diags)) => {
            for d in diags {
                let _ = writeln!(stderr, "{}", d.to_line());
            }
            2
        }
        Err(e) => {
            let _ = writeln!(stderr, "{}", e.diagnostic().to_line());
            e.exit_code()
        }
    }
}

fn usage_diagnostic(e: &clap::Error) -> Diagnostic {
    let argument = match e.get(ContextKind::InvalidArg) {
        Some(ContextValue::String(s)) => Some(s.clone()),
        Some(ContextValue::Strings(v)) => Some(v.join(" ")),
        _ => None,
    };
    let rendered = e.render().to_string();
    let message = rendered
        .lines()
        .next()
        .unwrap_or_default()
        .trim_start_matches("error: ")
        .to_string();
    Diagnostic {
        level: "error",
        kind: "usage",
        message,
        argument,
    }
}

enum Status {
    Ok,
    Failed(Vec<Diagnostic>),
}

fn emit<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    out.write_all(files::to_json_string(value).as_bytes())
        .map_err(|e| AppError::io("<stdout>", e))
}

fn emit_or_write<T: Serialize>(out: &mut dyn Write, path: Option<&Path>, value: &T) -> Result<()> {
    match path {
        Some(p) => {
            files::write_json(p, value)?;
            emit(out, &json!({ "written": p }))
        }
        None => emit(out, value),
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<Status> {
    match cmd {
        Command::Sim(a) => sim(a, out),
        Command::Resolve(a) => resolve(a, out).map(|_| Status::Ok),
        Command::Rank(a) => rank_cmd(a, out).map(|_| Status::Ok),
        Command::Train(a) => train_cmd(a, out).map(|_| Status::Ok),
        Command::Trust(a) => trust_cmd(a, out).map(|_| Status::Ok),
        Command::Pay(a) => pay(a.command, out).map(|_| Status::Ok),
        Command::Dp(a) => dp(a, out).map(|_| Status::Ok),
    }
}

fn sim(a: SimArgs, out: &mut dyn Write) -> Result<Status> {
    let mut config: ScenarioConfig = files::read_json(&a.config)?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if let Some(t) = a.trials {
        config.trials = Some(t);
    }
    if a.parallel == Some(0) {
        return Err(AppError::validation("--parallel must be at least 1"));
    }
    config.validate()?;
    let base = a.config.parent().unwrap_or(Path::new("."));
    let inputs = ScenarioInputs::load(&config, base)?;
    let report = run_scenario(
        &config,
        &inputs,
        RunOptions {
            parallel: a.parallel,
        },
    )?;

    let report_path = a
        .out
        .unwrap_or_else(|| files::default_report_path(config.scenario.name(), config.seed));
    let csv_path = files::csv_path_for(&report_path);
    files::write_bytes(&report_path, report.to_json().as_bytes())?;
    files::write_bytes(&csv_path, &report.time_series_csv())?;

    let failed = report.failed_checks();
    let non_convergent = report.has_non_convergence();
    emit(
        out,
        &json!({
            "scenario": config.scenario.name(),
            "seed": config.seed,
            "report": report_path,
            "time_series": csv_path,
            "checks": report.checks.len(),
            "failed_checks": failed.iter().map(|c| &c.name).collect::<Vec<_>>(),
            "non_convergent": non_convergent,
        }),
    )?;

    let mut diags: Vec<Diagnostic> = failed
        .iter()
        .map(|c| Diagnostic {
            level: "error",
            kind: "scenario",
            message: format!("check {} failed: {}", c.name, c.detail),
            argument: None,
        })
        .collect();
    if a.strict && non_convergent {
        diags.push(Diagnostic {
            level: "error",
            kind: "scenario",
            message: "gossip hit the round cap (NonConvergent)".into(),
            argument: Some("--strict".into()),
        });
    }
    Ok(if diags.is_empty() {
        Status::Ok
    } else {
        Status::Failed(diags)
    })
}

fn resolve(a: ResolveArgs, out: &mut dyn Write) -> Result<()> {
    let file: RegistryFile = files::read_json(&a.registry)?;
    let (index, _) = file.load()?;
    let key =
        RegistryKey::parse(&a.key).map_err(|e| AppError::validation(format!("--key: {e}")))?;
    let record = index
        .resolve(&key)
        .ok_or_else(|| AppError::validation(format!("{key} is not registered")))?;
    let root = index.root_digest();
    let mut body = json!({
        "key": key,
        "record": record,
        "root": hex::encode(root),
    });
    if a.proof {
        let proof = index
            .prove_inclusion(&key)
            .map_err(|e| AppError::validation(e.to_string()))?;
        body["verified"] = json!(verify_proof(&root, &proof));
        body["proof"] = serde_json::to_value(&proof).expect("proofs serialize");
    }
    emit(out, &body)
}

/// Weights used when no trained model is supplied.
pub fn default_model() -> L2RModel {
    L2RModel {
        weights: [1.0, 0.5, 0.05, 0.2],
        ..L2RModel::default()
    }
}

fn load_trust(path: &Path) -> Result<BTreeMap<AgentDid, f64>> {
    let entries: Vec<TrustReportEntry> = files::read_json(path)?;
    Ok(entries.into_iter().map(|e| (e.did, e.fused)).collect())
}

#[derive(Serialize)]
struct RankLine<'a> {
    rank: usize,
    did: AgentDid,
    display_name: &'a str,
    score: f64,
    cos_sim: f64,
    trust: f64,
    log_usage: f64,
    recency: f64,
}

fn rank_cmd(a: RankArgs, out: &mut dyn Write) -> Result<()> {
    let cards: Vec<AgentFactCard> = files::read_jsonl(&a.corpus)?;
    let model = match &a.model {
        Some(p) => files::read_json(p)?,
        None => default_model(),
    };
    let trust = match &a.trust {
        Some(p) => load_trust(p)?,
        None => BTreeMap::new(),
    };
    let now = a
        .now
        .unwrap_or_else(|| cards.iter().map(|c| c.last_active).max().unwrap_or(0));
    let options = RankOptions {
        k: a.k,
        tau: (!a.no_dedup).then_some(a.tau),
        now,
        horizon: a.horizon,
    };
    let ranked = rank(
        &embed_text(&a.query),
        &cards,
        |d| trust.get(d).copied(),
        &model,
        &options,
    )
    .map_err(|e| AppError::validation(e.to_string()))?;
    let names: BTreeMap<AgentDid, &str> = cards
        .iter()
        .map(|c| (c.did, c.display_name.as_str()))
        .collect();
    let lines: Vec<RankLine> = ranked
        .iter()
        .enumerate()
        .map(|(i, r)| RankLine {
            rank: i + 1,
            did: r.did,
            display_name: names[&r.did],
            score: r.score,
            cos_sim: r.features.cos_sim,
            trust: r.features.trust,
            log_usage: r.features.log_usage,
            recency: r.features.recency,
        })
        .collect();
    emit(out, &lines)
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let pairs: Vec<TrainingPair> = files::read_jsonl(&a.pairs)?;
    let (model, _) =
        train_traced(&pairs, a.lr, a.iters).map_err(|e| AppError::validation(e.to_string()))?;
    emit_or_write(out, a.out.as_deref(), &model)
}

fn trust_cmd(a: TrustArgs, out: &mut dyn Write) -> Result<()> {
    let file: TrustGraphFile = files::read_json(&a.graph)?;
    let graph = file.to_graph()?;
    let n = graph.len();
    let params = match a.orientation {
        OrientationArg::Transpose => PropagationParams::transpose_scoring(n),
        OrientationArg::Literal => PropagationParams::literal(n),
    };
    let params = PropagationParams {
        alpha: a.alpha,
        tol: a.tol,
        ..params
    };
    let t = propagate_trust(&graph, &params).map_err(|e| AppError::validation(e.to_string()))?;
    let context = match a.context {
        ContextArg::Financial => Context::Financial,
        ContextArg::Analytical => Context::Analytical,
        ContextArg::Default => Context::Default,
    };
    let weights = ContextWeights::for_context(context);
    let thresholds = TierThresholds::default();
    let standing = relative_to_base(&t);
    let neutral = TrustSignals {
        policy_pass_rate: 1.0,
        anomaly_score: 1.0,
        attestation_score: 0.0,
    };
    let report = file
        .nodes
        .iter()
        .zip(standing)
        .map(|(did, propagated)| {
            let s = file.signals.get(did).copied().unwrap_or(neutral);
            let fused = fuse_signals(&s, &weights, propagated)
                .map_err(|e| AppError::validation(format!("{did}: {e}")))?;
            Ok(TrustReportEntry {
                did: *did,
                propagated,
                policy: s.policy_pass_rate,
                behavior: s.anomaly_score,
                attest: s.attestation_score,
                fused,
                tier: verification_tier(fused, &thresholds),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    emit_or_write(out, a.out.as_deref(), &report)
}

fn pay(cmd: PayCommand, out: &mut dyn Write) -> Result<()> {
    match cmd {
        PayCommand::Keygen { seed } => {
            let keys = generate_keypair(seed_bytes(&mut stream(seed, "cli/keygen")));
            emit(out, &json!({ "did": keys.did(), "keys": keys }))
        }
        PayCommand::Delegate {
            owner,
            from,
            until,
            seed,
        } => {
            let owner: KeyPair = read_keys(&owner)?;
            let eph = EphemeralKey::delegate(
                &owner,
                seed_bytes(&mut stream(seed, "cli/ephemeral")),
                from,
                until,
            )
            .map_err(|e| AppError::validation(e.to_string()))?;
            emit(out, &eph)
        }
        PayCommand::Invoice {
            payee,
            amount,
            task,
            expires,
            seed,
        } => {
            let inv = create_invoice(
                payee,
                amount,
                &task,
                expires,
                &mut stream(seed, "cli/invoice"),
            )
            .map_err(|e| AppError::validation(e.to_string()))?;
            emit(out, &inv)
        }
        PayCommand::Authorize {
            invoice,
            owner,
            ephemeral,
            now,
            seed,
        } => {
            let invoice: Invoice = files::read_json(&invoice)?;
            let owner = read_keys(&owner)?;
            let eph: EphemeralKey = files::read_json(&ephemeral)?;
            let b = seed_bytes(&mut stream(seed, "cli/nonce"));
            let nonce = Nonce(b[..16].try_into().expect("sixteen bytes"));
            let h = PaymentHeader::authorize(&invoice, &owner, &eph, nonce, now)
                .map_err(|e| AppError::validation(e.to_string()))?;
            emit(out, &json!({ "header": h.render() }))
        }
        PayCommand::Parse { header } => {
            let h = parse_payment_header(&header)
                .map_err(|e| AppError::validation(format!("header: {e}")))?;
            emit(out, &h)
        }
        PayCommand::Deposit {
            ledger,
            account,
            amount,
        } => {
            let mut l: Ledger = if ledger.exists() {
                files::read_json(&ledger)?
            } else {
                Ledger::new()
            };
            l.deposit(account, amount)
                .map_err(|e| AppError::validation(e.to_string()))?;
            files::write_json(&ledger, &l)?;
            emit(
                out,
                &json!({ "account": account, "balance": l.balance(&account) }),
            )
        }
        PayCommand::Settle {
            ledger,
            invoice,
            header,
            keys,
            now,
            out: dest,
        } => {
            let mut l: Ledger = files::read_json(&ledger)?;
            let invoice: Invoice = files::read_json(&invoice)?;
            let keys: KeysFile = files::read_json(&keys)?;
            let h = parse_payment_header(&header)
                .map_err(|e| AppError::validation(format!("header: {e}")))?;
            let receipt = l
                .settle(&h, &invoice, &keys.directory(), now)
                .map_err(|e| AppError::validation(format!("settlement refused: {e}")))?;
            if let Some(p) = &dest {
                files::write_json(p, &l)?;
            }
            emit(out, &json!({ "receipt": receipt, "written": dest }))
        }
    }
}

fn read_keys(path: &Path) -> Result<KeyPair> {
    #[derive(serde::Deserialize)]
    #[serde(untagged)]
    enum Form {
        Wrapped { keys: KeyPair },
        Bare(KeyPair),
    }
    let form: Form = files::read_json(path)?;
    let keys = match form {
        Form::Wrapped { keys } | Form::Bare(keys) => keys,
    };
    if generate_keypair(keys.seed) != keys {
        return Err(AppError::validation(format!(
            "{}: key pair is inconsistent",
            path.display()
        )));
    }
    Ok(keys)
}

fn dp(a: DpArgs, out: &mut dyn Write) -> Result<()> {
    let params = DpParams::new(a.epsilon, 0.0, a.sensitivity)
        .map_err(|e| AppError::validation(e.to_string()))?;
    let mut budget =
        PrivacyBudget::new(a.budget).map_err(|e| AppError::validation(e.to_string()))?;
    let mut rng = stream(a.seed, "cli/dp");
    let (query, releases): (String, Vec<Option<f64>>) = match (&a.value, &a.corpus, &a.capability) {
        (Some(v), None, _) => {
            let r = (0..a.repeat)
                .map(|_| {
                    budget.charge(a.epsilon).ok()?;
                    laplace_mechanism(*v, a.sensitivity, a.epsilon, &mut rng).ok()
                })
                .collect();
            ("value".into(), r)
        }
        (None, Some(corpus), Some(cap)) => {
            let cards: Vec<AgentFactCard> = files::read_jsonl(corpus)?;
            let r = (0..a.repeat)
                .map(|_| {
                    budget
                        .count(
                            &cards,
                            |c| c.capabilities.iter().any(|x| x == cap),
                            a.epsilon,
                            &mut rng,
                        )
                        .ok()
                })
                .collect();
            (format!("cards_with_capability:{cap}"), r)
        }
        _ => {
            return Err(AppError::validation(
                "give either --value or --corpus with --capability",
            ))
        }
    };
    emit(
        out,
        &json!({
            "query": query,
            "epsilon": a.epsilon,
            "scale": if a.corpus.is_some() { 1.0 / a.epsilon } else { params.scale() },
            "releases": releases,
            "refused": releases.iter().filter(|r| r.is_none()).count(),
            "spent": budget.spent(),
            "budget": budget.limit(),
        }),
    )
}
