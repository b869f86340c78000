//! Layer-1 registry: an authenticated map from DIDs and registered names to
//! metadata URLs.
//!
//! Records live in a path-compressed radix-16 Merkle tree over key nibbles.
//! Keys are namespaced and self-delimiting (`'D' || did digest` or
//! `'N' || len || name`), so no key is a prefix of another and every record
//! sits in a leaf. For a fixed record set the tree shape is unique, which
//! makes the root digest independent of insertion order.
//!
//! Hashing:
//! - empty tree: `H(0x00)`
//! - leaf: `H(0x01 || record bytes || signature)`
//! - branch: `H(0x02 || path_len:u16 || path nibbles || bitmap:u16 || child digests)`

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::card::CardDigest;
use crate::encoding::Writer;
use crate::identity::{verify, AgentDid, KeyPair, KeyResolver, SignatureBytes};
use crate::{hexser, sha256, Digest32};

const DID_NAMESPACE: u8 = b'D';
const NAME_NAMESPACE: u8 = b'N';
pub const MAX_NAME_BYTES: usize = 255;
const RECORD_DOMAIN: &str = "agentmesh/record/v1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("record signature does not verify under the owner's key")]
    BadSignature,
    #[error("version {attempted} is not newer than stored version {existing}")]
    StaleVersion { existing: u64, attempted: u64 },
    #[error("record owner does not control this key")]
    OwnerMismatch,
    #[error("key is not present in the index")]
    KeyAbsent,
    #[error("invalid registry key: {0}")]
    BadKey(&'static str),
    #[error("snapshot root does not match its records")]
    RootMismatch,
}

/// A DID or a registered human-readable name.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RegistryKey {
    Did(AgentDid),
    Name(String),
}

impl RegistryKey {
    pub fn name(name: &str) -> Result<Self, RegistryError> {
        if name.is_empty() {
            return Err(RegistryError::BadKey("empty name"));
        }
        if name.len() > MAX_NAME_BYTES {
            return Err(RegistryError::BadKey("name longer than 255 bytes"));
        }
        if name.starts_with("did:") {
            return Err(RegistryError::BadKey("names may not start with did:"));
        }
        Ok(Self::Name(name.into()))
    }

    pub fn parse(s: &str) -> Result<Self, RegistryError> {
        if s.starts_with("did:") {
            AgentDid::parse(s)
                .map(Self::Did)
                .map_err(|_| RegistryError::BadKey("malformed DID"))
        } else {
            Self::name(s)
        }
    }

    /// Namespaced byte form; prefix-free across all valid keys.
    pub fn key_bytes(&self) -> Vec<u8> {
        match self {
            RegistryKey::Did(d) => {
                let mut b = Vec::with_capacity(33);
                b.push(DID_NAMESPACE);
                b.extend_from_slice(d.digest());
                b
            }
            RegistryKey::Name(n) => {
                let mut b = Vec::with_capacity(n.len() + 2);
                b.push(NAME_NAMESPACE);
                b.push(n.len() as u8);
                b.extend_from_slice(n.as_bytes());
                b
            }
        }
    }

    pub fn nibbles(&self) -> Vec<u8> {
        self.key_bytes()
            .iter()
            .flat_map(|b| [b >> 4, b & 0x0f])
            .collect()
    }
}

impl fmt::Display for RegistryKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegistryKey::Did(d) => d.fmt(f),
            RegistryKey::Name(n) => f.write_str(n),
        }
    }
}

impl fmt::Debug for RegistryKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RegistryKey({self})")
    }
}

impl Serialize for RegistryKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RegistryKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Self::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryRecord {
    pub key: RegistryKey,
    pub metadata_url: String,
    pub card_digest: CardDigest,
    pub owner: AgentDid,
    pub version: u64,
    #[serde(with = "hexser")]
    pub signature: SignatureBytes,
}

impl RegistryRecord {
    pub fn signed(
        key: RegistryKey,
        metadata_url: impl Into<String>,
        card_digest: CardDigest,
        owner: &KeyPair,
        version: u64,
    ) -> Self {
        let mut r = Self {
            key,
            metadata_url: metadata_url.into(),
            card_digest,
            owner: owner.did(),
            version,
            signature: [0; 64],
        };
        r.signature = owner.sign(&r.signing_bytes());
        r
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_domain(RECORD_DOMAIN);
        w.str(&self.key.to_string())
            .str(&self.metadata_url)
            .raw(&self.card_digest.0)
            .str(&self.owner.to_string())
            .u64(self.version);
        w.finish()
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut b = self.signing_bytes();
        b.extend_from_slice(&self.signature);
        b
    }

    /// Signature check plus the rule that a DID key can only be registered
    /// by that DID.
    pub fn check(&self, resolver: &impl KeyResolver) -> Result<(), RegistryError> {
        if let RegistryKey::Did(d) = &self.key {
            if *d != self.owner {
                return Err(RegistryError::OwnerMismatch);
            }
        }
        let pk = resolver
            .public_key(&self.owner)
            .ok_or(RegistryError::BadSignature)?;
        if verify(&pk, &self.signing_bytes(), &self.signature) {
            Ok(())
        } else {
            Err(RegistryError::BadSignature)
        }
    }

    pub fn leaf_hash(&self) -> Digest32 {
        sha256(&[&[0x01], &self.canonical_bytes()])
    }
}

pub fn empty_root() -> Digest32 {
    sha256(&[&[0x00]])
}

fn branch_hash(path: &[u8], bitmap: u16, children: &[Digest32]) -> Digest32 {
    let mut w = Writer::new();
    w.u8(0x02).u16(path.len() as u16).raw(path).u16(bitmap);
    for c in children {
        w.raw(c);
    }
    sha256(&[&w.finish()])
}

type Children = [Option<Box<Node>>; 16];

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        path: Vec<u8>,
        record: RegistryRecord,
        hash: Digest32,
    },
    Branch {
        path: Vec<u8>,
        children: Box<Children>,
        hash: Digest32,
    },
}

impl Node {
    fn leaf(path: Vec<u8>, record: RegistryRecord) -> Box<Node> {
        let hash = record.leaf_hash();
        Box::new(Node::Leaf { path, record, hash })
    }

    fn branch(path: Vec<u8>, children: Box<Children>) -> Box<Node> {
        let mut node = Box::new(Node::Branch {
            path,
            children,
            hash: [0; 32],
        });
        node.rehash();
        node
    }

    fn hash(&self) -> Digest32 {
        match self {
            Node::Leaf { hash, .. } | Node::Branch { hash, .. } => *hash,
        }
    }

    fn path(&self) -> &[u8] {
        match self {
            Node::Leaf { path, .. } | Node::Branch { path, .. } => path,
        }
    }

    fn set_path(&mut self, new: Vec<u8>) {
        match self {
            Node::Leaf { path, .. } => *path = new,
            Node::Branch { path, .. } => {
                *path = new;
                self.rehash();
            }
        }
    }

    fn rehash(&mut self) {
        if let Node::Branch {
            path,
            children,
            hash,
        } = self
        {
            let (bitmap, digests) = child_digests(children, |c| c.hash());
            *hash = branch_hash(path, bitmap, &digests);
        }
    }

    /// Hash recomputed from scratch, ignoring every cached digest.
    fn fresh_hash(&self) -> Digest32 {
        match self {
            Node::Leaf { record, .. } => record.leaf_hash(),
            Node::Branch { path, children, .. } => {
                let (bitmap, digests) = child_digests(children, |c| c.fresh_hash());
                branch_hash(path, bitmap, &digests)
            }
        }
    }
}

fn child_digests(children: &Children, f: impl Fn(&Node) -> Digest32) -> (u16, Vec<Digest32>) {
    let mut bitmap = 0u16;
    let mut digests = Vec::new();
    for (i, c) in children.iter().enumerate() {
        if let Some(c) = c {
            bitmap |= 1 << i;
            digests.push(f(c));
        }
    }
    (bitmap, digests)
}

fn common_prefix(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

fn empty_children() -> Box<Children> {
    Box::default()
}

fn insert_node(node: Option<Box<Node>>, rem: &[u8], record: RegistryRecord) -> Box<Node> {
    let Some(mut node) = node else {
        return Node::leaf(rem.to_vec(), record);
    };
    let path = node.path().to_vec();
    if let Node::Leaf { .. } = *node {
        if path == rem {
            return Node::leaf(path, record);
        }
    } else if rem.starts_with(&path) {
        if let Node::Branch { children, .. } = &mut *node {
            let at = path.len();
            let idx = rem[at] as usize;
            children[idx] = Some(insert_node(children[idx].take(), &rem[at + 1..], record));
        }
        node.rehash();
        return node;
    }
    // Split: keys are prefix-free, so both sides diverge before either ends.
    let c = common_prefix(&path, rem);
    debug_assert!(c < path.len() && c < rem.len());
    let old_idx = path[c] as usize;
    node.set_path(path[c + 1..].to_vec());
    let mut children = empty_children();
    children[old_idx] = Some(node);
    children[rem[c] as usize] = Some(Node::leaf(rem[c + 1..].to_vec(), record));
    Node::branch(path[..c].to_vec(), children)
}

/// One branch on the path from the root to a proven leaf.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofLevel {
    /// Compressed nibble path of the branch.
    pub path: Vec<u8>,
    /// Child slot taken toward the leaf.
    pub position: u8,
    pub bitmap: u16,
    /// Digests of every other present child, in slot order.
    #[serde(with = "hexser::list")]
    pub siblings: Vec<Digest32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InclusionProof {
    pub key: RegistryKey,
    pub record: RegistryRecord,
    /// Root first.
    pub levels: Vec<ProofLevel>,
}

/// Recomputes the root from the leaf upward and compares with `root`.
pub fn verify_proof(root: &Digest32, proof: &InclusionProof) -> bool {
    if proof.record.key != proof.key {
        return false;
    }
    let nibbles = proof.key.nibbles();
    let mut cursor = 0usize;
    for level in &proof.levels {
        let end = cursor + level.path.len();
        if end >= nibbles.len()
            || nibbles[cursor..end] != level.path[..]
            || nibbles[end] != level.position
            || level.position >= 16
            || level.bitmap & (1 << level.position) == 0
            || level.siblings.len() + 1 != level.bitmap.count_ones() as usize
        {
            return false;
        }
        cursor = end + 1;
    }
    let mut digest = proof.record.leaf_hash();
    for level in proof.levels.iter().rev() {
        let mut children = Vec::with_capacity(level.siblings.len() + 1);
        let mut sib = level.siblings.iter();
        for slot in 0..16u8 {
            if level.bitmap & (1 << slot) == 0 {
                continue;
            }
            if slot == level.position {
                children.push(digest);
            } else {
                match sib.next() {
                    Some(d) => children.push(*d),
                    None => return false,
                }
            }
        }
        digest = branch_hash(&level.path, level.bitmap, &children);
    }
    digest == *root
}

/// Portable form of an index: its root and every record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistrySnapshot {
    #[serde(with = "hexser")]
    pub root: Digest32,
    pub records: Vec<RegistryRecord>,
}

#[derive(Debug, Clone, Default)]
pub struct MerkleRadixIndex {
    root: Option<Box<Node>>,
    len: usize,
    self_check: bool,
}

impl MerkleRadixIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// After every mutation, recompute the root from scratch and panic if it
    /// differs from the incrementally maintained one. O(n) per insert.
    pub fn with_self_check(mut self, on: bool) -> Self {
        self.self_check = on;
        self
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn root_digest(&self) -> Digest32 {
        self.root.as_ref().map_or_else(empty_root, |n| n.hash())
    }

    pub fn recompute_root(&self) -> Digest32 {
        self.root
            .as_ref()
            .map_or_else(empty_root, |n| n.fresh_hash())
    }

    pub fn insert(
        &mut self,
        record: RegistryRecord,
        resolver: &impl KeyResolver,
    ) -> Result<(), RegistryError> {
        record.check(resolver)?;
        let existing = self.resolve(&record.key);
        if let Some(old) = existing {
            if record.version <= old.version {
                return Err(RegistryError::StaleVersion {
                    existing: old.version,
                    attempted: record.version,
                });
            }
            if record.owner != old.owner {
                return Err(RegistryError::OwnerMismatch);
            }
        } else {
            self.len += 1;
        }
        let nibbles = record.key.nibbles();
        self.root = Some(insert_node(self.root.take(), &nibbles, record));
        if self.self_check {
            assert_eq!(
                self.root_digest(),
                self.recompute_root(),
                "incremental root diverged from full recomputation"
            );
        }
        Ok(())
    }

    pub fn resolve(&self, key: &RegistryKey) -> Option<&RegistryRecord> {
        self.resolve_traced(key).0
    }

    /// Lookup that also reports how many nodes were visited.
    pub fn resolve_traced(&self, key: &RegistryKey) -> (Option<&RegistryRecord>, usize) {
        let nibbles = key.nibbles();
        let mut rem: &[u8] = &nibbles;
        let mut node = self.root.as_deref();
        let mut visited = 0;
        while let Some(n) = node {
            visited += 1;
            match n {
                Node::Leaf { path, record, .. } => {
                    let hit = path[..] == *rem && record.key == *key;
                    return (hit.then_some(record), visited);
                }
                Node::Branch { path, children, .. } => {
                    if !rem.starts_with(path) || rem.len() <= path.len() {
                        return (None, visited);
                    }
                    let idx = rem[path.len()] as usize;
                    rem = &rem[path.len() + 1..];
                    node = children[idx].as_deref();
                }
            }
        }
        (None, visited)
    }

    pub fn prove_inclusion(&self, key: &RegistryKey) -> Result<InclusionProof, RegistryError> {
        let nibbles = key.nibbles();
        let mut rem: &[u8] = &nibbles;
        let mut node = self.root.as_deref();
        let mut levels = Vec::new();
        while let Some(n) = node {
            match n {
                Node::Leaf { path, record, .. } => {
                    if path[..] != *rem || record.key != *key {
                        break;
                    }
                    return Ok(InclusionProof {
                        key: key.clone(),
                        record: record.clone(),
                        levels,
                    });
                }
                Node::Branch { path, children, .. } => {
                    if !rem.starts_with(path) || rem.len() <= path.len() {
                        break;
                    }
                    let position = rem[path.len()];
                    let (bitmap, _) = child_digests(children, |c| c.hash());
                    let siblings = children
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| *i != position as usize)
                        .filter_map(|(_, c)| c.as_ref().map(|c| c.hash()))
                        .collect();
                    levels.push(ProofLevel {
                        path: path.clone(),
                        position,
                        bitmap,
                        siblings,
                    });
                    rem = &rem[path.len() + 1..];
                    node = children[position as usize].as_deref();
                }
            }
        }
        Err(RegistryError::KeyAbsent)
    }

    /// All records in key-byte order.
    pub fn records(&self) -> Vec<&RegistryRecord> {
        fn walk<'a>(n: &'a Node, out: &mut Vec<&'a RegistryRecord>) {
            match n {
                Node::Leaf { record, .. } => out.push(record),
                Node::Branch { children, .. } => {
                    children.iter().flatten().for_each(|c| walk(c, out))
                }
            }
        }
        let mut out = Vec::with_capacity(self.len);
        if let Some(r) = &self.root {
            walk(r, &mut out);
        }
        out
    }

    /// Sum and maximum of leaf depths (nodes on the root-to-leaf path).
    pub fn depth_stats(&self) -> (usize, usize) {
        fn walk(n: &Node, depth: usize, acc: &mut (usize, usize)) {
            match n {
                Node::Leaf { .. } => {
                    acc.0 += depth;
                    acc.1 = acc.1.max(depth);
                }
                Node::Branch { children, .. } => children
                    .iter()
                    .flatten()
                    .for_each(|c| walk(c, depth + 1, acc)),
            }
        }
        let mut acc = (0, 0);
        if let Some(r) = &self.root {
            walk(r, 1, &mut acc);
        }
        acc
    }

    pub fn mean_depth(&self) -> f64 {
        if self.len == 0 {
            return 0.0;
        }
        self.depth_stats().0 as f64 / self.len as f64
    }

    pub fn snapshot(&self) -> RegistrySnapshot {
        RegistrySnapshot {
            root: self.root_digest(),
            records: self.records().into_iter().cloned().collect(),
        }
    }

    /// Rebuilds an index and insists the result has the advertised root.
    pub fn from_snapshot(
        snapshot: &RegistrySnapshot,
        resolver: &impl KeyResolver,
    ) -> Result<Self, RegistryError> {
        let mut idx = Self::new();
        for r in &snapshot.records {
            idx.insert(r.clone(), resolver)?;
        }
        if idx.root_digest() != snapshot.root {
            return Err(RegistryError::RootMismatch);
        }
        Ok(idx)
    }
}
