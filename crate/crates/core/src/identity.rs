//! Agent identities: Ed25519 keys derived from a seed, `did:nanda` DIDs
//! derived from the public key, and signed attestations.
//!
//! A DID is `did:nanda:` followed by the lowercase hex SHA-256 of the
//! public key, so a key directory can check that a claimed key really
//! belongs to a DID without any outside registry.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{DecodeError, Reader, Writer};
use crate::{hexser, sha256, Digest32};

pub const DID_PREFIX: &str = "did:nanda:";
pub const SIGNATURE_LEN: usize = 64;

pub type SignatureBytes = [u8; SIGNATURE_LEN];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdentityError {
    #[error("issued_at {attempted} is not after the issuer's last timestamp {last}")]
    MonotonicityViolation { last: u64, attempted: u64 },
    #[error("malformed DID: {0}")]
    MalformedDid(&'static str),
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyPair {
    #[serde(with = "hexser")]
    pub seed: [u8; 32],
    #[serde(with = "hexser")]
    pub secret_key: [u8; 32],
    #[serde(with = "hexser")]
    pub public_key: [u8; 32],
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public_key", &hex::encode(self.public_key))
            .finish_non_exhaustive()
    }
}

/// Derives an Ed25519 key pair from a 32-byte seed.
///
/// The secret scalar seed is `SHA-256("agentmesh/keygen" || seed)`, so the
/// caller's seed is never used directly as key material.
pub fn generate_keypair(seed: [u8; 32]) -> KeyPair {
    let secret_key = sha256(&[b"agentmesh/keygen", &seed]);
    let public_key = public_from_secret(&secret_key);
    KeyPair {
        seed,
        secret_key,
        public_key,
    }
}

pub fn public_from_secret(secret_key: &[u8; 32]) -> [u8; 32] {
    SigningKey::from_bytes(secret_key)
        .verifying_key()
        .to_bytes()
}

impl KeyPair {
    pub fn did(&self) -> AgentDid {
        AgentDid::from_public_key(&self.public_key)
    }

    pub fn sign(&self, message: &[u8]) -> SignatureBytes {
        sign(&self.secret_key, message)
    }
}

/// Deterministic Ed25519 signature.
pub fn sign(secret_key: &[u8; 32], message: &[u8]) -> SignatureBytes {
    SigningKey::from_bytes(secret_key).sign(message).to_bytes()
}

/// Strict Ed25519 verification. Wrong-length keys or signatures, and keys
/// that are not valid curve points, verify as `false`.
pub fn verify(public_key: &[u8], message: &[u8], signature: &[u8]) -> bool {
    let Ok(pk) = <[u8; 32]>::try_from(public_key) else {
        return false;
    };
    let Ok(sig) = <[u8; 64]>::try_from(signature) else {
        return false;
    };
    let Ok(vk) = VerifyingKey::from_bytes(&pk) else {
        return false;
    };
    vk.verify_strict(message, &Signature::from_bytes(&sig))
        .is_ok()
}

/// `did:nanda:<hex sha256(public key)>`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgentDid([u8; 32]);

impl AgentDid {
    pub const METHOD: &'static str = "nanda";

    pub fn from_public_key(public_key: &[u8; 32]) -> Self {
        Self(sha256(&[public_key]))
    }

    pub fn from_digest(digest: Digest32) -> Self {
        Self(digest)
    }

    pub fn digest(&self) -> &Digest32 {
        &self.0
    }

    pub fn parse(s: &str) -> Result<Self, IdentityError> {
        let rest = s
            .strip_prefix(DID_PREFIX)
            .ok_or(IdentityError::MalformedDid("expected did:nanda: prefix"))?;
        hexser::decode_array::<32>(rest)
            .map(Self)
            .ok_or(IdentityError::MalformedDid(
                "expected 64 lowercase hex characters",
            ))
    }
}

impl fmt::Display for AgentDid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(DID_PREFIX)?;
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for AgentDid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AgentDid({self})")
    }
}

impl FromStr for AgentDid {
    type Err = IdentityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for AgentDid {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AgentDid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Self::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Looks up the public key behind a DID.
pub trait KeyResolver {
    fn public_key(&self, did: &AgentDid) -> Option<[u8; 32]>;
}

impl<F: Fn(&AgentDid) -> Option<[u8; 32]>> KeyResolver for F {
    fn public_key(&self, did: &AgentDid) -> Option<[u8; 32]> {
        self(did)
    }
}

/// In-memory DID → key map. Only keys whose digest matches the DID are
/// accepted, so the directory can never map a DID to a foreign key.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyDirectory {
    keys: BTreeMap<AgentDid, [u8; 32]>,
}

impl KeyDirectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, public_key: [u8; 32]) -> AgentDid {
        let did = AgentDid::from_public_key(&public_key);
        self.keys.insert(did, public_key);
        did
    }

    /// Registers `public_key` under `did`, returning `false` (and leaving the
    /// directory untouched) when the key does not hash to the DID.
    pub fn register_claimed(&mut self, did: AgentDid, public_key: [u8; 32]) -> bool {
        if AgentDid::from_public_key(&public_key) != did {
            return false;
        }
        self.keys.insert(did, public_key);
        true
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AgentDid, &[u8; 32])> {
        self.keys.iter()
    }
}

impl KeyResolver for KeyDirectory {
    fn public_key(&self, did: &AgentDid) -> Option<[u8; 32]> {
        self.keys.get(did).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClaimType {
    TaskCompleted,
    PaymentSettled,
    SlaMet,
    PolicyPass,
}

impl ClaimType {
    pub fn tag(self) -> u8 {
        match self {
            ClaimType::TaskCompleted => 1,
            ClaimType::PaymentSettled => 2,
            ClaimType::SlaMet => 3,
            ClaimType::PolicyPass => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            1 => ClaimType::TaskCompleted,
            2 => ClaimType::PaymentSettled,
            3 => ClaimType::SlaMet,
            4 => ClaimType::PolicyPass,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attestation {
    pub issuer: AgentDid,
    pub subject: AgentDid,
    pub claim_type: ClaimType,
    #[serde(with = "hexser")]
    pub payload_digest: Digest32,
    pub issued_at: u64,
    #[serde(with = "hexser")]
    pub signature: SignatureBytes,
}

const ATTESTATION_DOMAIN: &str = "agentmesh/attestation/v1";

impl Attestation {
    /// Bytes covered by the signature: every field except the signature.
    pub fn signing_bytes(&self) -> Vec<u8> {
        attestation_signing_bytes(
            &self.issuer,
            &self.subject,
            self.claim_type,
            &self.payload_digest,
            self.issued_at,
        )
    }

    /// Signing bytes followed by the signature.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut b = self.signing_bytes();
        b.extend_from_slice(&self.signature);
        b
    }

    pub fn from_canonical(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        r.expect_domain(ATTESTATION_DOMAIN)?;
        let issuer = AgentDid::parse(&r.string()?).map_err(|_| DecodeError::Invalid("issuer"))?;
        let subject = AgentDid::parse(&r.string()?).map_err(|_| DecodeError::Invalid("subject"))?;
        let at = r.position();
        let tag = r.u8()?;
        let claim_type = ClaimType::from_tag(tag).ok_or(DecodeError::BadTag { at, tag })?;
        let payload_digest = r.array()?;
        let issued_at = r.u64()?;
        let signature = r.array()?;
        r.finish()?;
        Ok(Self {
            issuer,
            subject,
            claim_type,
            payload_digest,
            issued_at,
            signature,
        })
    }
}

fn attestation_signing_bytes(
    issuer: &AgentDid,
    subject: &AgentDid,
    claim: ClaimType,
    payload: &Digest32,
    issued_at: u64,
) -> Vec<u8> {
    let mut w = Writer::with_domain(ATTESTATION_DOMAIN);
    w.str(&issuer.to_string())
        .str(&subject.to_string())
        .u8(claim.tag())
        .raw(payload)
        .u64(issued_at);
    w.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttestationStatus {
    Valid,
    UnknownIssuer,
    InvalidSignature,
}

/// Signs attestations on behalf of one key pair and enforces strictly
/// increasing `issued_at` across everything it issues.
#[derive(Debug, Clone)]
pub struct AttestationIssuer {
    keys: KeyPair,
    last_issued_at: Option<u64>,
}

impl AttestationIssuer {
    pub fn new(keys: KeyPair) -> Self {
        Self {
            keys,
            last_issued_at: None,
        }
    }

    pub fn did(&self) -> AgentDid {
        self.keys.did()
    }

    pub fn keys(&self) -> &KeyPair {
        &self.keys
    }

    pub fn last_issued_at(&self) -> Option<u64> {
        self.last_issued_at
    }

    pub fn issue(
        &mut self,
        subject: AgentDid,
        claim_type: ClaimType,
        payload_digest: Digest32,
        issued_at: u64,
    ) -> Result<Attestation, IdentityError> {
        if let Some(last) = self.last_issued_at {
            if issued_at <= last {
                return Err(IdentityError::MonotonicityViolation {
                    last,
                    attempted: issued_at,
                });
            }
        }
        let issuer = self.keys.did();
        let msg =
            attestation_signing_bytes(&issuer, &subject, claim_type, &payload_digest, issued_at);
        let signature = self.keys.sign(&msg);
        self.last_issued_at = Some(issued_at);
        Ok(Attestation {
            issuer,
            subject,
            claim_type,
            payload_digest,
            issued_at,
            signature,
        })
    }
}

pub fn verify_attestation(att: &Attestation, resolver: &impl KeyResolver) -> AttestationStatus {
    let Some(pk) = resolver.public_key(&att.issuer) else {
        return AttestationStatus::UnknownIssuer;
    };
    if verify(&pk, &att.signing_bytes(), &att.signature) {
        AttestationStatus::Valid
    } else {
        AttestationStatus::InvalidSignature
    }
}
