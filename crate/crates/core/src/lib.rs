//! Core algorithms for a federated agent registry.
//!
//! Everything in this crate is a pure function of its inputs and runs
//! without `std`: signing identities, semantic agent cards, a Merkle radix
//! index, an LWW-map CRDT with push-pull gossip, trust propagation, a
//! pairwise ranker, header micropayments and a Laplace mechanism. File
//! formats, the CLI and the scenario harness live in the `agentmesh` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod card;
pub mod discovery;
pub mod encoding;
pub mod hexser;
pub mod identity;
pub mod micropay;
pub mod privacy;
pub mod registry;
pub mod rng;
pub mod sync;
pub mod topology;
pub mod trust;

pub use card::{AgentFactCard, CardDigest, CardViolation};
pub use identity::{
    AgentDid, Attestation, AttestationStatus, ClaimType, KeyDirectory, KeyPair, KeyResolver,
};
pub use registry::{InclusionProof, MerkleRadixIndex, RegistryKey, RegistryRecord};
pub use sync::{LwwTag, ReplicaState};
pub use topology::{Topology, TopologyKind};

/// Length of every digest in the system (SHA-256).
pub const DIGEST_LEN: usize = 32;

/// A raw SHA-256 digest.
pub type Digest32 = [u8; DIGEST_LEN];

/// SHA-256 over the concatenation of `parts`.
pub fn sha256(parts: &[&[u8]]) -> Digest32 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}
