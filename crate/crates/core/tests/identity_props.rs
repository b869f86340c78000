use std::collections::HashSet;

use agentmesh_core::identity::{
    generate_keypair, sign, verify, verify_attestation, AttestationIssuer, AttestationStatus,
    ClaimType,
};
use agentmesh_core::rng::{seed_bytes, stream};
use agentmesh_core::{AgentDid, Attestation, KeyDirectory};

#[test]
fn ten_thousand_dids_are_distinct_and_parse_back() {
    let mut rng = stream(31, "test/dids");
    let mut seen = HashSet::new();
    for _ in 0..10_000 {
        let kp = generate_keypair(seed_bytes(&mut rng));
        let did = kp.did();
        let text = did.to_string();
        assert_eq!(text.len(), "did:nanda:".len() + 64);
        assert_eq!(AgentDid::parse(&text).unwrap(), did);
        assert!(seen.insert(did));
    }
}

#[test]
fn every_single_bit_flip_breaks_a_signature() {
    let kp = generate_keypair([4; 32]);
    let msg = b"registry record bytes";
    let sig = sign(&kp.secret_key, msg);
    assert!(verify(&kp.public_key, msg, &sig));
    for bit in 0..512 {
        let mut s = sig;
        s[bit / 8] ^= 1 << (bit % 8);
        assert!(!verify(&kp.public_key, msg, &s), "bit {bit}");
    }
    for bit in 0..msg.len() * 8 {
        let mut m = msg.to_vec();
        m[bit / 8] ^= 1 << (bit % 8);
        assert!(!verify(&kp.public_key, &m, &sig));
    }
    assert!(!verify(&kp.public_key[..31], msg, &sig));
    assert!(!verify(&kp.public_key, msg, &sig[..63]));
}

#[test]
fn malformed_dids_are_rejected() {
    let good = generate_keypair([1; 32]).did().to_string();
    for bad in [
        "",
        "did:nanda:",
        "did:web:abc",
        &good.to_uppercase(),
        &good[..good.len() - 1],
        &format!("{good}0"),
        &good.replace("did:nanda:", "did:nanda: "),
    ] {
        assert!(AgentDid::parse(bad).is_err(), "{bad:?}");
    }
}

#[test]
fn attestations_round_trip_and_detect_tampering() {
    let issuer_keys = generate_keypair([5; 32]);
    let subject = generate_keypair([6; 32]).did();
    let mut dir = KeyDirectory::new();
    dir.register(issuer_keys.public_key);
    let mut issuer = AttestationIssuer::new(issuer_keys);
    let att = issuer
        .issue(subject, ClaimType::PaymentSettled, [9; 32], 10)
        .unwrap();
    assert_eq!(verify_attestation(&att, &dir), AttestationStatus::Valid);
    assert_eq!(
        Attestation::from_canonical(&att.canonical_bytes()).unwrap(),
        att
    );
    assert!(issuer
        .issue(subject, ClaimType::SlaMet, [0; 32], 10)
        .is_err());

    let mut tampered = att.clone();
    tampered.issued_at += 1;
    assert_eq!(
        verify_attestation(&tampered, &dir),
        AttestationStatus::InvalidSignature
    );
    assert_eq!(
        verify_attestation(&att, &KeyDirectory::new()),
        AttestationStatus::UnknownIssuer
    );
}
