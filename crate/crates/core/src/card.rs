//! Semantic agent cards ("agent facts").
//!
//! A card describes what an agent can do (capability strings plus an
//! endpoint), carries an optional 256-dimensional unit embedding, the
//! credentials other agents have signed about it, and a compact service
//! history. Cards have an exact binary encoding (decodable) and a separate
//! digest encoding that snaps the embedding to a 1e-9 grid, so digests agree
//! across platforms whose float math differs in the last ulp.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{DecodeError, Reader, Writer};
use crate::identity::{verify_attestation, AgentDid, Attestation, AttestationStatus, KeyResolver};
use crate::{hexser, sha256, Digest32};

pub const EMBEDDING_DIM: usize = 256;
pub const MAX_DISPLAY_NAME_BYTES: usize = 128;
pub const NORM_TOLERANCE: f64 = 1e-9;
const QUANTUM: f64 = 1e9;

const CARD_DOMAIN: &str = "agentmesh/card/v1";
const DIGEST_DOMAIN: &str = "agentmesh/card-digest/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentFactCard {
    pub did: AgentDid,
    pub display_name: String,
    pub description: String,
    pub capabilities: Vec<String>,
    pub endpoint_url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    #[serde(default)]
    pub credentials: Vec<Attestation>,
    #[serde(default)]
    pub usage_count: u64,
    #[serde(default)]
    pub last_active: u64,
    pub version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CardDigest(#[serde(with = "hexser")] pub Digest32);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CardViolation {
    EmbeddingWrongDimension {
        len: usize,
    },
    EmbeddingNotFinite,
    EmbeddingNotUnit {
        norm: f64,
    },
    NoCapabilities,
    DisplayNameTooLong {
        len: usize,
    },
    CredentialInvalid {
        index: usize,
        status: AttestationStatus,
    },
    CredentialSubjectMismatch {
        index: usize,
    },
    VersionNotIncreasing {
        previous: u64,
        next: u64,
    },
    DidChanged,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CardError {
    #[error("card violates its invariants: {0:?}")]
    EncodingRefused(Vec<CardViolation>),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

impl AgentFactCard {
    /// Text fed to the fallback embedder when the card has no vector.
    pub fn search_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&self.display_name);
        s.push(' ');
        s.push_str(&self.description);
        for c in &self.capabilities {
            s.push(' ');
            s.push_str(c);
        }
        s
    }
}

/// Invariants that do not need a key resolver.
pub fn structural_violations(card: &AgentFactCard) -> Vec<CardViolation> {
    let mut out = Vec::new();
    if let Some(e) = &card.embedding {
        if e.len() != EMBEDDING_DIM {
            out.push(CardViolation::EmbeddingWrongDimension { len: e.len() });
        } else if e.iter().any(|x| !x.is_finite()) {
            out.push(CardViolation::EmbeddingNotFinite);
        } else {
            let norm = libm::sqrt(e.iter().map(|x| x * x).sum::<f64>());
            if libm::fabs(norm - 1.0) > NORM_TOLERANCE {
                out.push(CardViolation::EmbeddingNotUnit { norm });
            }
        }
    }
    if card.capabilities.is_empty() {
        out.push(CardViolation::NoCapabilities);
    }
    if card.display_name.len() > MAX_DISPLAY_NAME_BYTES {
        out.push(CardViolation::DisplayNameTooLong {
            len: card.display_name.len(),
        });
    }
    out
}

/// Every invariant, including that each credential is about this card's
/// agent and verifies against `resolver`. Empty means valid.
pub fn validate_card(card: &AgentFactCard, resolver: &impl KeyResolver) -> Vec<CardViolation> {
    let mut out = structural_violations(card);
    for (index, att) in card.credentials.iter().enumerate() {
        if att.subject != card.did {
            out.push(CardViolation::CredentialSubjectMismatch { index });
        }
        let status = verify_attestation(att, resolver);
        if status != AttestationStatus::Valid {
            out.push(CardViolation::CredentialInvalid { index, status });
        }
    }
    out
}

/// Checks that `next` is a legal successor of `previous`.
pub fn validate_update(previous: &AgentFactCard, next: &AgentFactCard) -> Vec<CardViolation> {
    let mut out = Vec::new();
    if previous.did != next.did {
        out.push(CardViolation::DidChanged);
    }
    if next.version <= previous.version {
        out.push(CardViolation::VersionNotIncreasing {
            previous: previous.version,
            next: next.version,
        });
    }
    out
}

#[derive(Clone, Copy)]
enum EmbeddingForm {
    Exact,
    Quantized,
}

fn encode(card: &AgentFactCard, domain: &str, form: EmbeddingForm) -> Vec<u8> {
    let mut w = Writer::with_domain(domain);
    w.str(&card.did.to_string())
        .str(&card.display_name)
        .str(&card.description)
        .u32(card.capabilities.len() as u32);
    for c in &card.capabilities {
        w.str(c);
    }
    w.str(&card.endpoint_url);
    match &card.embedding {
        None => {
            w.u8(0);
        }
        Some(e) => {
            w.u8(1);
            for &x in e {
                match form {
                    EmbeddingForm::Exact => w.f64_bits(x),
                    EmbeddingForm::Quantized => w.i64(libm::round(x * QUANTUM) as i64),
                };
            }
        }
    }
    w.u32(card.credentials.len() as u32);
    for att in &card.credentials {
        w.bytes(&att.canonical_bytes());
    }
    w.u64(card.usage_count)
        .u64(card.last_active)
        .u64(card.version);
    w.finish()
}

/// Exact, decodable encoding. Refuses cards that break structural invariants.
pub fn canonical_encode(card: &AgentFactCard) -> Result<Vec<u8>, CardError> {
    let violations = structural_violations(card);
    if !violations.is_empty() {
        return Err(CardError::EncodingRefused(violations));
    }
    Ok(encode(card, CARD_DOMAIN, EmbeddingForm::Exact))
}

pub fn card_digest(card: &AgentFactCard) -> Result<CardDigest, CardError> {
    let violations = structural_violations(card);
    if !violations.is_empty() {
        return Err(CardError::EncodingRefused(violations));
    }
    Ok(CardDigest(sha256(&[&encode(
        card,
        DIGEST_DOMAIN,
        EmbeddingForm::Quantized,
    )])))
}

pub fn decode_card(bytes: &[u8]) -> Result<AgentFactCard, CardError> {
    let mut r = Reader::new(bytes);
    r.expect_domain(CARD_DOMAIN)?;
    let did = AgentDid::parse(&r.string()?).map_err(|_| DecodeError::Invalid("did"))?;
    let display_name = r.string()?;
    let description = r.string()?;
    let ncap = r.u32()? as usize;
    let mut capabilities = Vec::new();
    for _ in 0..ncap {
        capabilities.push(r.string()?);
    }
    let endpoint_url = r.string()?;
    let at = r.position();
    let embedding = match r.u8()? {
        0 => None,
        1 => {
            let mut e = Vec::with_capacity(EMBEDDING_DIM);
            for _ in 0..EMBEDDING_DIM {
                e.push(r.f64_bits()?);
            }
            Some(e)
        }
        tag => return Err(DecodeError::BadTag { at, tag }.into()),
    };
    let ncred = r.u32()? as usize;
    let mut credentials = Vec::new();
    for _ in 0..ncred {
        credentials.push(Attestation::from_canonical(r.bytes()?)?);
    }
    let usage_count = r.u64()?;
    let last_active = r.u64()?;
    let version = r.u64()?;
    r.finish()?;
    let card = AgentFactCard {
        did,
        display_name,
        description,
        capabilities,
        endpoint_url,
        embedding,
        credentials,
        usage_count,
        last_active,
        version,
    };
    let violations = structural_violations(&card);
    if !violations.is_empty() {
        return Err(CardError::EncodingRefused(violations));
    }
    Ok(card)
}
