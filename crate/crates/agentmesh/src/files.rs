//! On-disk formats: JSONL corpora, JSON documents and CSV time series.
//!
//! JSON output is pretty-printed with a trailing newline. Every map that
//! reaches a file is a `BTreeMap`, so identical values give identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use agentmesh_core::hexser;
use agentmesh_core::registry::RegistrySnapshot;
use agentmesh_core::trust::{TrustGraph, TrustSignals};
use agentmesh_core::{AgentDid, Digest32, KeyDirectory, MerkleRadixIndex, RegistryRecord};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| AppError::io(path, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))
        }
        _ => Ok(()),
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}

pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_bytes(path, to_json_string(value).as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|source| AppError::Json {
        path: path.to_path_buf(),
        line: source.line(),
        source,
    })
}

/// One value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = read_text(path)?;
    parse_jsonl(&text, path)
}

pub fn parse_jsonl<T: DeserializeOwned>(text: &str, origin: &Path) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| AppError::Json {
                path: origin.to_path_buf(),
                line: i + 1,
                source,
            })
        })
        .collect()
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    write_bytes(path, to_jsonl(items).as_bytes())
}

/// CSV with a header row taken from the field names of `T`.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("flat rows serialize");
    }
    w.into_inner().expect("in-memory writer")
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_bytes(path, &to_csv(rows))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let err = |source| AppError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(err)
}

/// A registry snapshot together with the owner keys needed to re-verify
/// every record when it is loaded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryFile {
    #[serde(with = "hexser")]
    pub root: Digest32,
    pub records: Vec<RegistryRecord>,
    #[serde(with = "hexser::list")]
    pub owner_keys: Vec<[u8; 32]>,
}

impl RegistryFile {
    pub fn from_index(index: &MerkleRadixIndex, directory: &KeyDirectory) -> Self {
        let RegistrySnapshot { root, records } = index.snapshot();
        let owners: std::collections::BTreeSet<AgentDid> =
            records.iter().map(|r| r.owner).collect();
        let owner_keys = directory
            .iter()
            .filter(|(did, _)| owners.contains(did))
            .map(|(_, pk)| *pk)
            .collect();
        Self {
            root,
            records,
            owner_keys,
        }
    }

    /// Rebuilds the index, re-checking every signature and the root.
    pub fn load(&self) -> Result<(MerkleRadixIndex, KeyDirectory)> {
        let mut dir = KeyDirectory::new();
        for pk in &self.owner_keys {
            dir.register(*pk);
        }
        let snapshot = RegistrySnapshot {
            root: self.root,
            records: self.records.clone(),
        };
        let index = MerkleRadixIndex::from_snapshot(&snapshot, &dir)
            .map_err(|e| AppError::validation(format!("registry snapshot rejected: {e}")))?;
        Ok((index, dir))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeEntry {
    pub from: AgentDid,
    pub to: AgentDid,
    pub weight: f64,
}

/// Trust graph keyed by DID. Node order fixes the index of each agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrustGraphFile {
    pub nodes: Vec<AgentDid>,
    pub edges: Vec<EdgeEntry>,
    /// Optional per-agent signals for fusion; agents not listed get
    /// neutral signals.
    #[serde(default)]
    pub signals: BTreeMap<AgentDid, TrustSignals>,
}

impl TrustGraphFile {
    pub fn to_graph(&self) -> Result<TrustGraph> {
        let index: BTreeMap<AgentDid, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, d)| (*d, i))
            .collect();
        if index.len() != self.nodes.len() {
            return Err(AppError::validation("trust graph lists a node twice"));
        }
        let mut g = TrustGraph::new(self.nodes.len());
        for e in &self.edges {
            let at = |d: &AgentDid| {
                index
                    .get(d)
                    .copied()
                    .ok_or_else(|| AppError::validation(format!("edge names unknown node {d}")))
            };
            g.add_edge(at(&e.from)?, at(&e.to)?, e.weight)
                .map_err(|err| {
                    AppError::validation(format!("edge {} -> {}: {err}", e.from, e.to))
                })?;
        }
        Ok(g)
    }
}

/// Public keys, one hex string each, for verifying payers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeysFile(#[serde(with = "hexser::list")] pub Vec<[u8; 32]>);

impl KeysFile {
    pub fn directory(&self) -> KeyDirectory {
        let mut d = KeyDirectory::new();
        for pk in &self.0 {
            d.register(*pk);
        }
        d
    }
}

/// Default report location: `./out/<scenario>-<seed>.json`.
pub fn default_report_path(scenario: &str, seed: u64) -> PathBuf {
    PathBuf::from("out").join(format!("{scenario}-{seed}.json"))
}

/// Companion CSV for a report path: same stem, `.csv` extension.
pub fn csv_path_for(report: &Path) -> PathBuf {
    report.with_extension("csv")
}
