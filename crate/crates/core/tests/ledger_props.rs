use std::collections::HashSet;

use agentmesh_core::identity::generate_keypair;
use agentmesh_core::micropay::*;
use agentmesh_core::rng::{below, seed_bytes, stream, SimRng};
use agentmesh_core::{KeyDirectory, KeyPair};
use rand::RngCore;

struct Agent {
    keys: KeyPair,
    eph: EphemeralKey,
}

fn agents(n: usize, rng: &mut SimRng) -> (Vec<Agent>, KeyDirectory) {
    let mut dir = KeyDirectory::new();
    let list = (0..n)
        .map(|_| {
            let keys = generate_keypair(seed_bytes(rng));
            dir.register(keys.public_key);
            let eph = EphemeralKey::delegate(&keys, seed_bytes(rng), 0, 20_000).unwrap();
            Agent { keys, eph }
        })
        .collect();
    (list, dir)
}

fn nonce(rng: &mut SimRng) -> Nonce {
    let mut n = [0u8; 16];
    rng.fill_bytes(&mut n);
    Nonce(n)
}

#[test]
fn mixed_settlements_conserve_and_stay_atomic() {
    let mut rng = stream(51, "test/ledger");
    let (agents, dir) = agents(12, &mut rng);
    let mut ledger = Ledger::new();
    for a in &agents {
        ledger.deposit(a.keys.did(), 5_000).unwrap();
    }
    let total = ledger.total();
    let mut history: Vec<(PaymentHeader, Invoice)> = Vec::new();
    let mut outcomes = [0usize; 2];
    for now in 1..=10_000u64 {
        let payer = &agents[below(&mut rng, 12) as usize];
        let payee = &agents[below(&mut rng, 12) as usize];
        let amount = 1 + below(&mut rng, 400);
        let invoice = create_invoice(
            payee.keys.did(),
            amount,
            "task",
            now + below(&mut rng, 3),
            &mut rng,
        )
        .unwrap();
        let mut header =
            PaymentHeader::authorize(&invoice, &payer.keys, &payer.eph, nonce(&mut rng), now)
                .unwrap();
        let mut inv = invoice.clone();
        let mut at = now;
        match below(&mut rng, 8) {
            0 if !history.is_empty() => {
                let (h, i) = history[below(&mut rng, history.len() as u64) as usize].clone();
                header = h;
                inv = i;
            }
            1 => header.signature[below(&mut rng, 64) as usize] ^= 1,
            2 => header.amount += 1,
            3 => at = now + 10,
            4 => inv.invoice_id.0[0] ^= 0xff,
            5 => {
                let other = &agents[below(&mut rng, 12) as usize];
                header.delegation = other.eph.delegation;
            }
            _ => {}
        }
        let before = ledger.canonical_bytes();
        match ledger.settle(&header, &inv, &dir, at) {
            Ok(_) => {
                outcomes[0] += 1;
                history.push((header, inv));
            }
            Err(e) => {
                outcomes[1] += 1;
                assert_eq!(ledger.canonical_bytes(), before, "{e:?} mutated the ledger");
            }
        }
        assert_eq!(ledger.total(), total);
    }
    assert!(outcomes[0] > 1_000 && outcomes[1] > 1_000, "{outcomes:?}");
    let mut nonces = HashSet::new();
    for r in ledger.receipts() {
        assert!(nonces.insert((r.payer, r.nonce)));
    }
    for (h, i) in history.iter().take(200) {
        let before = ledger.canonical_bytes();
        assert_eq!(
            ledger.settle(h, i, &dir, 1),
            Err(SettleError::DuplicateNonce)
        );
        assert_eq!(ledger.canonical_bytes(), before);
    }
}

#[test]
fn settle_moves_exact_amounts_once() {
    let mut rng = stream(52, "test/ledger-example");
    let (agents, dir) = agents(2, &mut rng);
    let (payer, payee) = (&agents[0], &agents[1]);
    let mut ledger = Ledger::new();
    ledger.deposit(payer.keys.did(), 100).unwrap();
    ledger.deposit(payee.keys.did(), 0).unwrap();
    let invoice = create_invoice(payee.keys.did(), 40, "t", 10, &mut rng).unwrap();
    let h =
        PaymentHeader::authorize(&invoice, &payer.keys, &payer.eph, nonce(&mut rng), 1).unwrap();
    ledger.settle(&h, &invoice, &dir, 1).unwrap();
    assert_eq!(
        (
            ledger.balance(&payer.keys.did()),
            ledger.balance(&payee.keys.did())
        ),
        (60, 40)
    );
    assert_eq!(
        ledger.settle(&h, &invoice, &dir, 2),
        Err(SettleError::DuplicateNonce)
    );
    assert_eq!(
        (
            ledger.balance(&payer.keys.did()),
            ledger.balance(&payee.keys.did())
        ),
        (60, 40)
    );
    let big = create_invoice(payee.keys.did(), 200, "t", 10, &mut rng).unwrap();
    let h = PaymentHeader::authorize(&big, &payer.keys, &payer.eph, nonce(&mut rng), 1).unwrap();
    assert!(matches!(
        ledger.settle(&h, &big, &dir, 1),
        Err(SettleError::InsufficientFunds { .. })
    ));
}

fn mutate(rng: &mut SimRng, s: &str) -> String {
    let mut bytes = s.as_bytes().to_vec();
    for _ in 0..1 + below(rng, 3) {
        if bytes.is_empty() {
            break;
        }
        let at = below(rng, bytes.len() as u64) as usize;
        match below(rng, 4) {
            0 => bytes[at] = (below(rng, 95) + 32) as u8,
            1 => {
                bytes.remove(at);
            }
            2 => bytes.insert(at, b";=0aF:"[below(rng, 6) as usize]),
            _ => bytes.truncate(at),
        }
    }
    String::from_utf8_lossy(&bytes).into_owned()
}

#[test]
fn parser_survives_fuzz_and_round_trips() {
    let mut rng = stream(53, "test/header-fuzz");
    let (agents, _) = agents(3, &mut rng);
    let mut valid = Vec::new();
    for (i, a) in agents.iter().enumerate() {
        let inv = create_invoice(
            agents[(i + 1) % 3].keys.did(),
            1 + i as u64 * 999,
            "t",
            9,
            &mut rng,
        )
        .unwrap();
        let h = PaymentHeader::authorize(&inv, &a.keys, &a.eph, nonce(&mut rng), 3).unwrap();
        let text = h.render();
        assert_eq!(parse_payment_header(&text).unwrap(), h);
        valid.push(text);
    }
    let mut accepted = 0;
    for i in 0..100_000 {
        let input = if i % 2 == 0 {
            mutate(&mut rng, &valid[i % 3])
        } else {
            let len = below(&mut rng, 400) as usize;
            let mut raw = vec![0u8; len];
            rng.fill_bytes(&mut raw);
            if i % 4 == 1 {
                format!("X-Payment: {}", String::from_utf8_lossy(&raw))
            } else {
                String::from_utf8_lossy(&raw).into_owned()
            }
        };
        if let Ok(h) = parse_payment_header(&input) {
            // The grammar has exactly one spelling per header.
            assert_eq!(h.render(), input);
            accepted += 1;
        }
    }
    assert!(accepted < 100_000);
}
