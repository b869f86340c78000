//! Discovery: a deterministic hashing text embedder, pairwise
//! learning-to-rank over four features, ranking and near-duplicate removal.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::card::{AgentFactCard, EMBEDDING_DIM};
use crate::identity::AgentDid;

pub const DEFAULT_TAU: f64 = 0.95;
pub const DEFAULT_HORIZON: f64 = 1000.0;
pub const FEATURE_COUNT: usize = 4;
const DIVERGENCE_PATIENCE: usize = 10;
const LOSS_SLACK: f64 = 1e-12;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiscoveryError {
    #[error("training needs at least one pair")]
    EmptyTrainingSet,
    #[error("learning rate must be positive and finite")]
    InvalidLearningRate,
    #[error("training loss rose for {patience} consecutive iterations (at iteration {iteration})")]
    TrainingDiverged { iteration: usize, patience: usize },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("dedup threshold {0} outside (0, 1]")]
    InvalidTau(f64),
    #[error("recency horizon must be positive")]
    InvalidHorizon,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn basis0() -> Vec<f64> {
    let mut v = vec![0.0; EMBEDDING_DIM];
    v[0] = 1.0;
    v
}

/// Signed feature hashing of character trigrams into 256 buckets.
///
/// Text is lowercased, whitespace runs collapse to one space and the result
/// is padded with a space on each side, so word boundaries show up in the
/// trigrams. The low byte of the FNV-1a hash picks the bucket and the top
/// bit picks the sign. Empty input, or input whose counts cancel exactly,
/// maps to the first basis vector.
pub fn embed_text(text: &str) -> Vec<f64> {
    let mut chars: Vec<char> = vec![' '];
    for word in text.split_whitespace() {
        chars.extend(word.chars().flat_map(char::to_lowercase));
        chars.push(' ');
    }
    if chars.len() == 1 {
        return basis0();
    }
    let mut v = vec![0.0; EMBEDDING_DIM];
    let mut buf = String::new();
    for window in chars.windows(3) {
        buf.clear();
        buf.extend(window);
        let h = fnv1a(buf.as_bytes());
        let bucket = (h % EMBEDDING_DIM as u64) as usize;
        v[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
    }
    let norm = libm::sqrt(v.iter().map(|x| x * x).sum());
    if norm == 0.0 {
        return basis0();
    }
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Cosine similarity; zero when either side is the zero vector.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = libm::sqrt(a.iter().map(|x| x * x).sum());
    let nb = libm::sqrt(b.iter().map(|x| x * x).sum());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// The card's own vector when present, else the embedding of its text.
pub fn card_embedding(card: &AgentFactCard) -> Vec<f64> {
    match &card.embedding {
        Some(e) => e.clone(),
        None => embed_text(&card.search_text()),
    }
}

pub fn recency(now: u64, last_active: u64, horizon: f64) -> f64 {
    libm::exp(-(now.saturating_sub(last_active) as f64) / horizon)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RankFeatures {
    pub cos_sim: f64,
    pub trust: f64,
    pub log_usage: f64,
    pub recency: f64,
}

impl RankFeatures {
    pub fn for_card(
        query: &[f64],
        embedding: &[f64],
        trust: f64,
        card: &AgentFactCard,
        now: u64,
        horizon: f64,
    ) -> Self {
        Self {
            cos_sim: cosine(query, embedding),
            trust,
            log_usage: libm::log1p(card.usage_count as f64),
            recency: recency(now, card.last_active, horizon),
        }
    }

    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [self.cos_sim, self.trust, self.log_usage, self.recency]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub preferred: RankFeatures,
    pub other: RankFeatures,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct L2RModel {
    pub weights: [f64; FEATURE_COUNT],
    pub bias: f64,
    pub iterations: usize,
    pub final_loss: Option<f64>,
}

impl L2RModel {
    pub fn score(&self, x: &RankFeatures) -> f64 {
        self.weights
            .iter()
            .zip(x.to_array())
            .map(|(w, v)| w * v)
            .sum::<f64>()
            + self.bias
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Gradient {
    pub weights: [f64; FEATURE_COUNT],
    /// Always zero: the bias cancels in every score difference.
    pub bias: f64,
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + libm::log1p(libm::exp(-libm::fabs(z)))
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// Mean RankNet loss `ln(1 + exp(−(s(a) − s(b))))` and its exact gradient.
pub fn score_pairwise_loss(
    model: &L2RModel,
    pairs: &[TrainingPair],
) -> Result<(f64, Gradient), DiscoveryError> {
    if pairs.is_empty() {
        return Err(DiscoveryError::EmptyTrainingSet);
    }
    let mut loss = 0.0;
    let mut grad = Gradient::default();
    for p in pairs {
        let a = p.preferred.to_array();
        let b = p.other.to_array();
        let d: f64 = (0..FEATURE_COUNT)
            .map(|k| model.weights[k] * (a[k] - b[k]))
            .sum();
        loss += softplus(-d);
        let g = -sigmoid(-d);
        for k in 0..FEATURE_COUNT {
            grad.weights[k] += g * (a[k] - b[k]);
        }
    }
    let m = pairs.len() as f64;
    grad.weights.iter_mut().for_each(|g| *g /= m);
    Ok((loss / m, grad))
}

/// Full-batch gradient descent from the zero model. Returns the model and
/// the loss before each step followed by the final loss.
pub fn train_traced(
    pairs: &[TrainingPair],
    learning_rate: f64,
    iters: usize,
) -> Result<(L2RModel, Vec<f64>), DiscoveryError> {
    if !(learning_rate > 0.0 && learning_rate.is_finite()) {
        return Err(DiscoveryError::InvalidLearningRate);
    }
    let mut model = L2RModel::default();
    let mut losses = Vec::with_capacity(iters + 1);
    let mut rising = 0;
    for iteration in 0..iters {
        let (loss, grad) = score_pairwise_loss(&model, pairs)?;
        if let Some(&prev) = losses.last() {
            rising = if loss > prev + LOSS_SLACK {
                rising + 1
            } else {
                0
            };
            if rising >= DIVERGENCE_PATIENCE {
                return Err(DiscoveryError::TrainingDiverged {
                    iteration,
                    patience: DIVERGENCE_PATIENCE,
                });
            }
        }
        losses.push(loss);
        for k in 0..FEATURE_COUNT {
            model.weights[k] -= learning_rate * grad.weights[k];
        }
    }
    let (loss, _) = score_pairwise_loss(&model, pairs)?;
    losses.push(loss);
    model.iterations = iters;
    model.final_loss = Some(loss);
    Ok((model, losses))
}

pub fn train(
    pairs: &[TrainingPair],
    learning_rate: f64,
    iters: usize,
) -> Result<L2RModel, DiscoveryError> {
    train_traced(pairs, learning_rate, iters).map(|(m, _)| m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankOptions {
    pub k: usize,
    /// `None` disables deduplication.
    pub tau: Option<f64>,
    pub now: u64,
    pub horizon: f64,
}

impl Default for RankOptions {
    fn default() -> Self {
        Self {
            k: 5,
            tau: Some(DEFAULT_TAU),
            now: 0,
            horizon: DEFAULT_HORIZON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedAgent {
    pub did: AgentDid,
    pub score: f64,
    pub features: RankFeatures,
}

/// Descending score, then higher trust, then smaller DID.
pub fn rank_order(a: &RankedAgent, b: &RankedAgent) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| b.features.trust.total_cmp(&a.features.trust))
        .then_with(|| a.did.cmp(&b.did))
}

fn check_tau(tau: f64) -> Result<(), DiscoveryError> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(DiscoveryError::InvalidTau(tau));
    }
    Ok(())
}

/// Scores every card against the query, sorts, drops near duplicates and
/// keeps the top `k`. Agents missing from `trust` get zero trust.
pub fn rank(
    query: &[f64],
    cards: &[AgentFactCard],
    trust: impl Fn(&AgentDid) -> Option<f64>,
    model: &L2RModel,
    options: &RankOptions,
) -> Result<Vec<RankedAgent>, DiscoveryError> {
    if options.k == 0 {
        return Err(DiscoveryError::InvalidK);
    }
    if options.horizon.is_nan() || options.horizon <= 0.0 {
        return Err(DiscoveryError::InvalidHorizon);
    }
    if let Some(tau) = options.tau {
        check_tau(tau)?;
    }
    let mut scored: Vec<(RankedAgent, Vec<f64>)> = cards
        .iter()
        .map(|card| {
            let embedding = card_embedding(card);
            let t = trust(&card.did).unwrap_or(0.0);
            let features =
                RankFeatures::for_card(query, &embedding, t, card, options.now, options.horizon);
            let agent = RankedAgent {
                did: card.did,
                score: model.score(&features),
                features,
            };
            (agent, embedding)
        })
        .collect();
    scored.sort_by(|a, b| rank_order(&a.0, &b.0));
    let keep = match options.tau {
        Some(tau) => {
            let embeddings: Vec<&[f64]> = scored.iter().map(|(_, e)| e.as_slice()).collect();
            dedup_limited(&embeddings, tau, options.k)
        }
        None => (0..scored.len().min(options.k)).collect(),
    };
    let mut slots: Vec<Option<RankedAgent>> = scored.into_iter().map(|(a, _)| Some(a)).collect();
    Ok(keep.into_iter().filter_map(|i| slots[i].take()).collect())
}

fn dedup_limited(embeddings: &[&[f64]], tau: f64, limit: usize) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for (i, e) in embeddings.iter().enumerate() {
        if kept.len() == limit {
            break;
        }
        if kept.iter().all(|&j| cosine(e, embeddings[j]) < tau) {
            kept.push(i);
        }
    }
    kept
}

/// Greedy scan in the given order: an item survives when its cosine to
/// every survivor so far is below `tau`. Returns the surviving indices.
pub fn dedup(embeddings: &[&[f64]], tau: f64) -> Result<Vec<usize>, DiscoveryError> {
    check_tau(tau)?;
    Ok(dedup_limited(embeddings, tau, usize::MAX))
}
