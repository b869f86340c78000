//! Replication of registry records across a mesh of replicas.
//!
//! Each replica holds a state-based LWW map from registry key to the winning
//! `(record, tag)` plus a version vector of the highest writer sequence it
//! has absorbed. Tags order lexicographically by `(logical_time, writer_id,
//! sequence)`, so equal times are won by the higher writer id.
//!
//! Gossip is push-pull with fanout one: every round each replica picks one
//! neighbour uniformly, sends its version vector, and the two swap deltas.
//! All deltas in a round are computed from the states at the start of the
//! round and applied together.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::card::CardDigest;
use crate::encoding::Writer;
use crate::identity::{generate_keypair, KeyDirectory, KeyResolver};
use crate::registry::{MerkleRadixIndex, RegistryError, RegistryKey, RegistryRecord};
use crate::rng::{below, indexed_stream, seed_bytes};
use crate::topology::{Topology, TopologyError, TopologyKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SyncError {
    #[error("record rejected: {0}")]
    BadSignature(RegistryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LwwTag {
    pub logical_time: u64,
    pub writer_id: u32,
    pub sequence: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub record: RegistryRecord,
    pub tag: LwwTag,
}

impl Entry {
    fn encode(&self, w: &mut Writer) {
        w.u64(self.tag.logical_time)
            .u32(self.tag.writer_id)
            .u64(self.tag.sequence)
            .bytes(&self.record.canonical_bytes());
    }
}

pub type VersionVector = BTreeMap<u32, u64>;

fn encode_vv(vv: &VersionVector, w: &mut Writer) {
    w.u32(vv.len() as u32);
    for (id, seq) in vv {
        w.u32(*id).u64(*seq);
    }
}

/// Entries a peer is missing, plus the sender's version vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaSet {
    pub entries: Vec<Entry>,
    pub version_vector: VersionVector,
}

impl DeltaSet {
    pub fn encoded_len(&self) -> usize {
        let mut w = Writer::new();
        encode_vv(&self.version_vector, &mut w);
        w.u32(self.entries.len() as u32);
        for e in &self.entries {
            e.encode(&mut w);
        }
        w.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplicaState {
    pub replica_id: u32,
    store: BTreeMap<RegistryKey, Entry>,
    version_vector: VersionVector,
}

impl ReplicaState {
    pub fn new(replica_id: u32) -> Self {
        Self {
            replica_id,
            store: BTreeMap::new(),
            version_vector: VersionVector::new(),
        }
    }

    pub fn store(&self) -> &BTreeMap<RegistryKey, Entry> {
        &self.store
    }

    pub fn version_vector(&self) -> &VersionVector {
        &self.version_vector
    }

    pub fn get(&self, key: &RegistryKey) -> Option<&RegistryRecord> {
        self.store.get(key).map(|e| &e.record)
    }

    /// Writes a record locally, tagged with this replica's next sequence.
    pub fn local_put(
        &mut self,
        record: RegistryRecord,
        logical_time: u64,
        resolver: &impl KeyResolver,
    ) -> Result<LwwTag, SyncError> {
        record.check(resolver).map_err(SyncError::BadSignature)?;
        let seq = self
            .version_vector
            .get(&self.replica_id)
            .copied()
            .unwrap_or(0)
            + 1;
        self.version_vector.insert(self.replica_id, seq);
        let tag = LwwTag {
            logical_time,
            writer_id: self.replica_id,
            sequence: seq,
        };
        self.absorb(Entry { record, tag });
        Ok(tag)
    }

    fn absorb(&mut self, entry: Entry) {
        match self.store.get(&entry.record.key) {
            Some(existing) if existing.tag >= entry.tag => {}
            _ => {
                self.store.insert(entry.record.key.clone(), entry);
            }
        }
    }

    fn absorb_vv(&mut self, vv: &VersionVector) {
        for (id, &seq) in vv {
            let slot = self.version_vector.entry(*id).or_insert(0);
            *slot = (*slot).max(seq);
        }
    }

    /// Join: per-key LWW maximum and pointwise-max version vectors.
    pub fn merge(&mut self, other: &ReplicaState) {
        for e in other.store.values() {
            self.absorb(e.clone());
        }
        self.absorb_vv(&other.version_vector);
    }

    pub fn merged(&self, other: &ReplicaState) -> ReplicaState {
        let mut out = self.clone();
        out.merge(other);
        out
    }

    pub fn digest(&self) -> VersionVector {
        self.version_vector.clone()
    }

    /// Entries whose writer sequence is beyond what `peer` has seen.
    pub fn delta_for(&self, peer: &VersionVector) -> DeltaSet {
        let entries = self
            .store
            .values()
            .filter(|e| e.tag.sequence > peer.get(&e.tag.writer_id).copied().unwrap_or(0))
            .cloned()
            .collect();
        DeltaSet {
            entries,
            version_vector: self.version_vector.clone(),
        }
    }

    pub fn apply_delta(&mut self, delta: &DeltaSet) {
        for e in &delta.entries {
            self.absorb(e.clone());
        }
        self.absorb_vv(&delta.version_vector);
    }

    /// Canonical bytes of the store alone.
    pub fn store_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_domain("agentmesh/replica-store/v1");
        w.u32(self.store.len() as u32);
        for e in self.store.values() {
            e.encode(&mut w);
        }
        w.finish()
    }

    /// Canonical bytes of the replicated content (store and version vector).
    /// The replica id is not part of the lattice value.
    pub fn content_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(&self.store_bytes());
        encode_vv(&self.version_vector, &mut w);
        w.finish()
    }

    pub fn same_content(&self, other: &ReplicaState) -> bool {
        self.store == other.store && self.version_vector == other.version_vector
    }

    /// Builds a registry index over the stored records.
    pub fn to_index(&self, resolver: &impl KeyResolver) -> Result<MerkleRadixIndex, RegistryError> {
        let mut idx = MerkleRadixIndex::new();
        for e in self.store.values() {
            idx.insert(e.record.clone(), resolver)?;
        }
        Ok(idx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundStats {
    pub round: u32,
    pub converged_count: u32,
    pub messages: u64,
    pub bytes: u64,
}

fn digest_len(vv: &VersionVector) -> usize {
    4 + 12 * vv.len()
}

/// Join of every replica's content.
pub fn union_state(mesh: &[ReplicaState]) -> ReplicaState {
    let mut u = ReplicaState::new(u32::MAX);
    for r in mesh {
        u.merge(r);
    }
    u
}

pub fn converged_count(mesh: &[ReplicaState]) -> u32 {
    let u = union_state(mesh);
    mesh.iter().filter(|r| r.same_content(&u)).count() as u32
}

/// One synchronous push-pull round. Replicas without neighbours sit idle.
pub fn gossip_round<R: RngCore + ?Sized>(
    mesh: &mut [ReplicaState],
    topology: &Topology,
    round: u32,
    rng: &mut R,
) -> RoundStats {
    assert_eq!(mesh.len(), topology.len(), "mesh and topology sizes differ");
    let n = mesh.len();
    let mut inbox: Vec<Vec<DeltaSet>> = vec![Vec::new(); n];
    let mut messages = 0u64;
    let mut bytes = 0u64;
    for i in 0..n {
        let nb = topology.neighbors(i);
        if nb.is_empty() {
            continue;
        }
        let j = nb[below(rng, nb.len() as u64) as usize] as usize;
        let to_i = mesh[j].delta_for(&mesh[i].version_vector);
        let to_j = mesh[i].delta_for(&mesh[j].version_vector);
        messages += 3;
        bytes +=
            (digest_len(&mesh[i].version_vector) + to_i.encoded_len() + to_j.encoded_len()) as u64;
        inbox[i].push(to_i);
        inbox[j].push(to_j);
    }
    for (replica, deltas) in mesh.iter_mut().zip(&inbox) {
        for d in deltas {
            replica.apply_delta(d);
        }
    }
    RoundStats {
        round,
        converged_count: converged_count(mesh),
        messages,
        bytes,
    }
}

/// Rounds allowed before a run is declared non-convergent: `64·log2(n) + 64`.
pub fn round_cap(n: usize) -> u32 {
    libm::ceil(64.0 * libm::log2(n.max(1) as f64) + 64.0) as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum Convergence {
    Converged { rounds: u32 },
    NonConvergent { cap: u32 },
}

impl Convergence {
    pub fn rounds(&self) -> Option<u32> {
        match self {
            Convergence::Converged { rounds } => Some(*rounds),
            Convergence::NonConvergent { .. } => None,
        }
    }
}

/// Drives gossip until every replica holds the union state or `cap` rounds
/// have run.
pub fn run_until_converged<R: RngCore + ?Sized>(
    mesh: &mut [ReplicaState],
    topology: &Topology,
    cap: u32,
    rng: &mut R,
) -> (Convergence, Vec<RoundStats>) {
    let n = mesh.len() as u32;
    let mut stats = Vec::new();
    if converged_count(mesh) == n {
        return (Convergence::Converged { rounds: 0 }, stats);
    }
    for round in 1..=cap {
        let s = gossip_round(mesh, topology, round, rng);
        stats.push(s);
        if s.converged_count == n {
            return (Convergence::Converged { rounds: round }, stats);
        }
    }
    (Convergence::NonConvergent { cap }, stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrial {
    pub trial: u32,
    pub outcome: Convergence,
    pub stats: Vec<RoundStats>,
}

/// Mesh of `n` empty replicas with one freshly signed record written at
/// replica 0, plus the directory needed to verify it.
pub fn seeded_mesh(n: u32, seed: u64, trial: u32) -> (Vec<ReplicaState>, KeyDirectory) {
    let mut rng = indexed_stream(seed, "convergence/record", trial as u64);
    let owner = generate_keypair(seed_bytes(&mut rng));
    let mut dir = KeyDirectory::new();
    dir.register(owner.public_key);
    let record = RegistryRecord::signed(
        RegistryKey::Did(owner.did()),
        "https://registry.example/agent",
        CardDigest(seed_bytes(&mut rng)),
        &owner,
        1,
    );
    let mut mesh: Vec<_> = (0..n).map(ReplicaState::new).collect();
    mesh[0]
        .local_put(record, 1, &dir)
        .expect("freshly signed record verifies");
    (mesh, dir)
}

/// One seeded single-record dissemination trial.
pub fn convergence_trial(
    n: u32,
    kind: TopologyKind,
    seed: u64,
    trial: u32,
) -> Result<ConvergenceTrial, TopologyError> {
    let topology = Topology::build(kind, n, seed ^ (trial as u64).rotate_left(32))?;
    let (mut mesh, _) = seeded_mesh(n, seed, trial);
    let mut rng = indexed_stream(seed, "convergence/gossip", trial as u64);
    let (outcome, stats) =
        run_until_converged(&mut mesh, &topology, round_cap(n as usize), &mut rng);
    Ok(ConvergenceTrial {
        trial,
        outcome,
        stats,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    pub n: u32,
    pub trials: usize,
    pub non_convergent: usize,
    /// `None` when the middle of the distribution did not converge.
    pub median: Option<f64>,
    /// Nearest-rank 95th percentile.
    pub p95: Option<u32>,
    pub min: Option<u32>,
    pub max: Option<u32>,
}

/// Order statistics over trial outcomes; non-convergent trials sort last.
pub fn summarize(n: u32, outcomes: &[Convergence]) -> ConvergenceSummary {
    let mut sorted: Vec<Option<u32>> = outcomes.iter().map(|o| o.rounds()).collect();
    sorted.sort_by_key(|r| r.unwrap_or(u32::MAX));
    let len = sorted.len();
    let median = if len == 0 {
        None
    } else if len % 2 == 1 {
        sorted[len / 2].map(f64::from)
    } else {
        match (sorted[len / 2 - 1], sorted[len / 2]) {
            (Some(a), Some(b)) => Some((a as f64 + b as f64) / 2.0),
            _ => None,
        }
    };
    let p95 = if len == 0 {
        None
    } else {
        let rank = libm::ceil(0.95 * len as f64) as usize;
        sorted[rank.max(1) - 1]
    };
    ConvergenceSummary {
        n,
        trials: len,
        non_convergent: sorted.iter().filter(|r| r.is_none()).count(),
        median,
        p95,
        min: sorted.first().copied().flatten(),
        max: sorted.iter().rev().find_map(|r| *r),
    }
}

/// Runs `trials` seeded trials on `n` replicas and summarizes rounds to
/// convergence.
pub fn rounds_to_convergence(
    n: u32,
    kind: TopologyKind,
    trials: u32,
    seed: u64,
) -> Result<(ConvergenceSummary, Vec<ConvergenceTrial>), TopologyError> {
    assert!(trials >= 1, "at least one trial");
    let runs = (0..trials)
        .map(|t| convergence_trial(n, kind, seed, t))
        .collect::<Result<Vec<_>, _>>()?;
    let outcomes: Vec<_> = runs.iter().map(|r| r.outcome).collect();
    Ok((summarize(n, &outcomes), runs))
}
