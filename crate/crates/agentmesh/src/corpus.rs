//! Agents for the simulator: a seeded synthetic corpus, or a loaded one
//! re-keyed with simulation identities.

use agentmesh_core::identity::generate_keypair;
use agentmesh_core::rng::{below, indexed_stream, seed_bytes, stream};
use agentmesh_core::{AgentFactCard, KeyPair};

pub const SKILLS: [&str; 16] = [
    "weather forecasting",
    "currency exchange",
    "invoice payment",
    "travel booking",
    "flight search",
    "hotel reservation",
    "code review",
    "legal research",
    "contract drafting",
    "language translation",
    "image tagging",
    "data cleaning",
    "sentiment analysis",
    "news summarization",
    "calendar scheduling",
    "medical coding",
];

/// An agent the simulator can act for.
#[derive(Debug, Clone)]
pub struct SimAgent {
    pub keys: KeyPair,
    pub card: AgentFactCard,
}

fn agent_keys(seed: u64, index: usize) -> KeyPair {
    generate_keypair(seed_bytes(&mut indexed_stream(
        seed,
        "corpus/keys",
        index as u64,
    )))
}

/// `count` agents with one to three skills each. Every eighth agent copies
/// the description of the agent seven places before it, so corpora always
/// contain exact semantic duplicates.
pub fn synthetic_corpus(count: usize, seed: u64) -> Vec<SimAgent> {
    let mut rng = stream(seed, "corpus/cards");
    let mut agents: Vec<SimAgent> = Vec::with_capacity(count);
    for i in 0..count {
        let keys = agent_keys(seed, i);
        let (description, capabilities) = if i % 8 == 7 {
            let src = &agents[i - 7].card;
            (src.description.clone(), src.capabilities.clone())
        } else {
            let k = 1 + below(&mut rng, 3) as usize;
            let mut picked: Vec<&str> = Vec::with_capacity(k);
            while picked.len() < k {
                let s = SKILLS[below(&mut rng, SKILLS.len() as u64) as usize];
                if !picked.contains(&s) {
                    picked.push(s);
                }
            }
            (
                format!("Agent offering {}", picked.join(" and ")),
                picked.iter().map(|s| s.replace(' ', "-")).collect(),
            )
        };
        let card = AgentFactCard {
            did: keys.did(),
            display_name: format!("agent-{i:04}"),
            description,
            capabilities,
            endpoint_url: format!("https://agents.example/{i}"),
            embedding: None,
            credentials: Vec::new(),
            usage_count: below(&mut rng, 10_000),
            last_active: below(&mut rng, 1_000),
            version: 1,
        };
        agents.push(SimAgent { keys, card });
    }
    agents
}

/// Gives each loaded card a simulation key pair derived from `seed` and
/// its position. The card's DID is replaced and its credentials dropped,
/// since they were issued to the old identity.
pub fn adopt_corpus(cards: Vec<AgentFactCard>, seed: u64) -> Vec<SimAgent> {
    cards
        .into_iter()
        .enumerate()
        .map(|(i, mut card)| {
            let keys = agent_keys(seed, i);
            card.did = keys.did();
            card.credentials.clear();
            SimAgent { keys, card }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use agentmesh_core::card::structural_violations;

    #[test]
    fn synthetic_cards_are_valid_and_reproducible() {
        let a = synthetic_corpus(40, 3);
        let b = synthetic_corpus(40, 3);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.card, y.card);
            assert!(structural_violations(&x.card).is_empty());
            assert_eq!(x.card.did, x.keys.did());
        }
        assert_eq!(a[15].card.description, a[8].card.description);
    }

    #[test]
    fn adopted_cards_take_simulation_identities() {
        let mut cards: Vec<AgentFactCard> =
            synthetic_corpus(3, 1).into_iter().map(|a| a.card).collect();
        cards[0].credentials.clear();
        let adopted = adopt_corpus(cards, 9);
        assert!(adopted.iter().all(|a| a.card.did == a.keys.did()));
        assert_ne!(adopted[0].card.did, synthetic_corpus(1, 1)[0].card.did);
    }
}
