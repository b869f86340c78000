use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}

fn agentmesh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agentmesh"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json_stdout(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn diagnostics(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stderr)
        .lines()
        .map(|l| serde_json::from_str(l).expect("stderr lines are JSON"))
        .collect()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn sim_writes_report_and_time_series() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("conv.json");
    let out = agentmesh(&[
        "sim",
        "--config",
        p(&data("convergence.json")),
        "--seed",
        "7",
        "--trials",
        "5",
        "--out",
        p(&report),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = json_stdout(&out);
    assert_eq!(summary["failed_checks"], serde_json::json!([]));
    let body: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(body["outcome"]["scenario"], "convergence");
    assert_eq!(body["outcome"]["trials"].as_array().unwrap().len(), 5);
    let csv = std::fs::read_to_string(dir.path().join("conv.csv")).unwrap();
    assert!(csv.starts_with("trial,round,converged_count,messages,bytes"));
}

#[test]
fn sim_output_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    for config in ["sybil.json", "marketplace.json"] {
        let a = dir.path().join(format!("a-{config}"));
        let b = dir.path().join(format!("b-{config}"));
        for path in [&a, &b] {
            let out = agentmesh(&["sim", "--config", p(&data(config)), "--out", p(path)]);
            assert_eq!(out.status.code(), Some(0));
        }
        assert_eq!(
            std::fs::read(&a).unwrap(),
            std::fs::read(&b).unwrap(),
            "{config}"
        );
    }
}

#[test]
fn parallel_trials_match_sequential() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("seq.json");
    let b = dir.path().join("par.json");
    let config = data("convergence.json");
    assert!(agentmesh(&[
        "sim",
        "--config",
        p(&config),
        "--trials",
        "8",
        "--out",
        p(&a)
    ])
    .status
    .success());
    assert!(agentmesh(&[
        "sim",
        "--config",
        p(&config),
        "--trials",
        "8",
        "--parallel",
        "4",
        "--out",
        p(&b)
    ])
    .status
    .success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn strict_exits_two_on_non_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let config = data("partitioned.json");
    let report = dir.path().join("r.json");
    let lenient = agentmesh(&["sim", "--config", p(&config), "--out", p(&report)]);
    assert_eq!(lenient.status.code(), Some(0));
    assert_eq!(json_stdout(&lenient)["non_convergent"], true);
    let strict = agentmesh(&[
        "sim",
        "--config",
        p(&config),
        "--out",
        p(&report),
        "--strict",
    ]);
    assert_eq!(strict.status.code(), Some(2));
    assert_eq!(diagnostics(&strict)[0]["kind"], "scenario");
}

#[test]
fn unknown_flag_is_a_usage_error_naming_the_flag() {
    let out = agentmesh(&[
        "sim",
        "--config",
        p(&data("convergence.json")),
        "--frobnicate",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let d = diagnostics(&out);
    assert_eq!(d.len(), 1);
    assert_eq!(d[0]["kind"], "usage");
    assert_eq!(d[0]["argument"], "--frobnicate");
    assert!(out.stdout.is_empty());
}

#[test]
fn bad_config_reports_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(&config, r#"{ "scenario": "sybil", "n": 50, "alpha": 1.5 }"#).unwrap();
    let out = agentmesh(&["sim", "--config", p(&config)]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(diagnostics(&out)[0]["kind"], "validation");

    std::fs::write(&config, r#"{ "scenario": "sybil", "n": 50, "colour": 3 }"#).unwrap();
    let out = agentmesh(&["sim", "--config", p(&config)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(diagnostics(&out)[0]["message"]
        .as_str()
        .unwrap()
        .contains("colour"));

    let out = agentmesh(&["sim", "--config", p(&dir.path().join("missing.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(diagnostics(&out)[0]["kind"], "io");
}

#[test]
fn every_subcommand_has_help() {
    for sub in ["sim", "resolve", "rank", "train", "trust", "pay", "dp"] {
        let out = agentmesh(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(
            String::from_utf8_lossy(&out.stdout).contains("Usage"),
            "{sub}"
        );
    }
    let out = agentmesh(&["--version"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn rank_returns_at_most_k_distinct_results() {
    let out = agentmesh(&[
        "rank",
        "--query",
        "weather",
        "--corpus",
        p(&data("cards.jsonl")),
        "--k",
        "5",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let hits = json_stdout(&out);
    let hits = hits.as_array().unwrap();
    assert!(!hits.is_empty() && hits.len() <= 5);
    let mut dids: Vec<&str> = hits.iter().map(|h| h["did"].as_str().unwrap()).collect();
    let scores: Vec<f64> = hits.iter().map(|h| h["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    dids.sort();
    dids.dedup();
    assert_eq!(dids.len(), hits.len());
}

#[test]
fn rank_uses_trained_model_and_trust_report() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    let trust = dir.path().join("trust.json");
    assert!(agentmesh(&[
        "train",
        "--pairs",
        p(&data("pairs.jsonl")),
        "--out",
        p(&model)
    ])
    .status
    .success());
    assert!(agentmesh(&[
        "trust",
        "--graph",
        p(&data("trust_graph.json")),
        "--out",
        p(&trust)
    ])
    .status
    .success());
    let out = agentmesh(&[
        "rank",
        "--query",
        "code review",
        "--corpus",
        p(&data("cards.jsonl")),
        "--model",
        p(&model),
        "--trust",
        p(&trust),
        "--k",
        "64",
        "--no-dedup",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let hits = json_stdout(&out);
    let hits = hits.as_array().unwrap();
    assert_eq!(hits.len(), 64);
    assert!(hits.iter().any(|h| h["trust"].as_f64().unwrap() > 0.0));
}

#[test]
fn train_is_deterministic_and_fits_the_pairs() {
    let a = agentmesh(&["train", "--pairs", p(&data("pairs.jsonl"))]);
    let b = agentmesh(&["train", "--pairs", p(&data("pairs.jsonl"))]);
    assert_eq!(a.stdout, b.stdout);
    let model = json_stdout(&a);
    assert!(model["final_loss"].as_f64().unwrap() < std::f64::consts::LN_2);
}

#[test]
fn trust_report_flags_the_misbehaving_node() {
    let out = agentmesh(&[
        "trust",
        "--graph",
        p(&data("trust_graph.json")),
        "--context",
        "financial",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let report = json_stdout(&out);
    let rows = report.as_array().unwrap();
    assert_eq!(rows.len(), 12);
    assert_eq!(rows[3]["tier"], "quarantine");
    for r in rows {
        let fused = r["fused"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&fused));
    }
    let literal = agentmesh(&[
        "trust",
        "--graph",
        p(&data("trust_graph.json")),
        "--orientation",
        "literal",
    ]);
    assert_eq!(literal.status.code(), Some(0));
}

#[test]
fn resolve_proves_inclusion() {
    let registry = data("registry.json");
    let out = agentmesh(&[
        "resolve",
        "--registry",
        p(&registry),
        "--key",
        "agent-0003",
        "--proof",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let body = json_stdout(&out);
    assert_eq!(body["verified"], true);
    let did = body["record"]["owner"].as_str().unwrap().to_string();
    let by_did = json_stdout(&agentmesh(&[
        "resolve",
        "--registry",
        p(&registry),
        "--key",
        &did,
    ]));
    assert_eq!(by_did["record"]["owner"], did.as_str());
    assert_eq!(by_did["root"], body["root"]);

    let missing = agentmesh(&[
        "resolve",
        "--registry",
        p(&registry),
        "--key",
        "nobody-here",
    ]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn tampered_registry_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(data("registry.json")).unwrap();
    let tampered = text.replacen("https://agents.example/3", "https://evil.example/3", 1);
    assert_ne!(text, tampered);
    let path = dir.path().join("registry.json");
    std::fs::write(&path, tampered).unwrap();
    let out = agentmesh(&["resolve", "--registry", p(&path), "--key", "agent-0003"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(diagnostics(&out)[0]["kind"], "validation");
}

fn write(dir: &Path, name: &str, out: &Output) -> PathBuf {
    assert!(
        out.status.success(),
        "{name}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let path = dir.join(name);
    std::fs::write(&path, &out.stdout).unwrap();
    path
}

#[test]
fn payment_flow_settles_once() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let payer = write(
        d,
        "payer.json",
        &agentmesh(&["pay", "keygen", "--seed", "1"]),
    );
    let payee = write(
        d,
        "payee.json",
        &agentmesh(&["pay", "keygen", "--seed", "2"]),
    );
    let payer_v: Value = serde_json::from_slice(&std::fs::read(&payer).unwrap()).unwrap();
    let payee_v: Value = serde_json::from_slice(&std::fs::read(&payee).unwrap()).unwrap();
    let (payer_did, payee_did) = (
        payer_v["did"].as_str().unwrap(),
        payee_v["did"].as_str().unwrap(),
    );

    let eph = write(
        d,
        "eph.json",
        &agentmesh(&[
            "pay",
            "delegate",
            "--owner",
            p(&payer),
            "--from",
            "0",
            "--until",
            "100",
        ]),
    );
    let invoice = write(
        d,
        "invoice.json",
        &agentmesh(&[
            "pay",
            "invoice",
            "--payee",
            payee_did,
            "--amount",
            "40",
            "--task",
            "t-1",
            "--expires",
            "50",
        ]),
    );
    let auth = agentmesh(&[
        "pay",
        "authorize",
        "--invoice",
        p(&invoice),
        "--owner",
        p(&payer),
        "--ephemeral",
        p(&eph),
        "--now",
        "10",
    ]);
    assert!(
        auth.status.success(),
        "{}",
        String::from_utf8_lossy(&auth.stderr)
    );
    let header = json_stdout(&auth)["header"].as_str().unwrap().to_string();
    let parsed = json_stdout(&agentmesh(&["pay", "parse", "--header", &header]));
    assert_eq!(parsed["amount"], 40);

    let ledger = d.join("ledger.json");
    for (account, amount) in [(payer_did, "100"), (payee_did, "0")] {
        assert!(agentmesh(&[
            "pay",
            "deposit",
            "--ledger",
            p(&ledger),
            "--account",
            account,
            "--amount",
            amount
        ])
        .status
        .success());
    }
    let keys = d.join("keys.json");
    let pks = serde_json::json!([payer_v["keys"]["public_key"], payee_v["keys"]["public_key"]]);
    std::fs::write(&keys, pks.to_string()).unwrap();

    let settle = |out: &Path, now: &str| {
        agentmesh(&[
            "pay",
            "settle",
            "--ledger",
            p(&ledger),
            "--invoice",
            p(&invoice),
            "--header",
            &header,
            "--keys",
            p(&keys),
            "--now",
            now,
            "--out",
            p(out),
        ])
    };
    let before = std::fs::read(&ledger).unwrap();
    let dry = agentmesh(&[
        "pay",
        "settle",
        "--ledger",
        p(&ledger),
        "--invoice",
        p(&invoice),
        "--header",
        &header,
        "--keys",
        p(&keys),
        "--now",
        "10",
    ]);
    assert!(dry.status.success());
    assert_eq!(std::fs::read(&ledger).unwrap(), before);

    let settled = settle(&ledger, "10");
    assert!(
        settled.status.success(),
        "{}",
        String::from_utf8_lossy(&settled.stderr)
    );
    let l: Value = serde_json::from_slice(&std::fs::read(&ledger).unwrap()).unwrap();
    let text = l.to_string();
    assert!(text.contains("60") && text.contains("40"));

    let again = settle(&ledger, "11");
    assert_eq!(again.status.code(), Some(1));
    assert!(diagnostics(&again)[0]["message"]
        .as_str()
        .unwrap()
        .contains("settlement refused"));

    let garbage = agentmesh(&["pay", "parse", "--header", "X-Payment: nope"]);
    assert_eq!(garbage.status.code(), Some(1));
}

#[test]
fn dp_refuses_past_the_budget() {
    let out = agentmesh(&["dp", "--epsilon", "1.5", "--value", "10", "--repeat", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let body = json_stdout(&out);
    assert_eq!(body["refused"], 1);
    assert_eq!(body["spent"], 3.0);

    let counted = agentmesh(&[
        "dp",
        "--epsilon",
        "0.5",
        "--corpus",
        p(&data("cards.jsonl")),
        "--capability",
        "weather-forecasting",
    ]);
    assert_eq!(
        counted.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&counted.stderr)
    );
    assert!(json_stdout(&counted)["releases"][0].is_f64());

    let bad = agentmesh(&["dp", "--epsilon", "-1", "--value", "3"]);
    assert_eq!(bad.status.code(), Some(1));
}
