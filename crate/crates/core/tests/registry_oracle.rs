use std::collections::HashMap;

use agentmesh_core::identity::generate_keypair;
use agentmesh_core::registry::{verify_proof, RegistryError};
use agentmesh_core::rng::{below, stream, SimRng};
use agentmesh_core::{
    CardDigest, KeyDirectory, KeyPair, MerkleRadixIndex, RegistryKey, RegistryRecord,
};

struct World {
    owners: Vec<KeyPair>,
    dir: KeyDirectory,
}

fn world(owners: usize) -> World {
    let owners: Vec<KeyPair> = (0..owners)
        .map(|i| {
            let mut seed = [0u8; 32];
            seed[..8].copy_from_slice(&(i as u64).to_be_bytes());
            generate_keypair(seed)
        })
        .collect();
    let mut dir = KeyDirectory::new();
    for o in &owners {
        dir.register(o.public_key);
    }
    World { owners, dir }
}

fn random_key(rng: &mut SimRng, w: &World, names: u64) -> (RegistryKey, usize) {
    let owner = below(rng, w.owners.len() as u64) as usize;
    if below(rng, 2) == 0 {
        // Mostly self-registrations, sometimes a foreign signer.
        let subject = if below(rng, 10) == 0 {
            below(rng, w.owners.len() as u64) as usize
        } else {
            owner
        };
        (RegistryKey::Did(w.owners[subject].did()), owner)
    } else {
        (
            RegistryKey::name(&format!("svc-{}", below(rng, names))).unwrap(),
            owner,
        )
    }
}

/// What the registry should do, written against a plain hash map.
fn oracle_insert(
    map: &mut HashMap<RegistryKey, RegistryRecord>,
    r: &RegistryRecord,
    forged: bool,
) -> bool {
    if forged {
        return false;
    }
    if let RegistryKey::Did(d) = &r.key {
        if *d != r.owner {
            return false;
        }
    }
    match map.get(&r.key) {
        Some(old) if r.version <= old.version || r.owner != old.owner => false,
        _ => {
            map.insert(r.key.clone(), r.clone());
            true
        }
    }
}

#[test]
fn resolution_matches_hash_map_oracle() {
    let w = world(40);
    let mut rng = stream(21, "test/registry-oracle");
    let mut idx = MerkleRadixIndex::new();
    let mut oracle: HashMap<RegistryKey, RegistryRecord> = HashMap::new();
    let mut accepted = 0;
    for step in 0..10_000u64 {
        let (key, owner) = random_key(&mut rng, &w, 300);
        if below(&mut rng, 3) == 0 {
            let got = idx.resolve(&key);
            assert_eq!(got, oracle.get(&key), "lookup mismatch at step {step}");
            continue;
        }
        let version = 1 + below(&mut rng, step / 20 + 2);
        let mut r = RegistryRecord::signed(
            key,
            format!("https://reg.example/{step}"),
            CardDigest([step as u8; 32]),
            &w.owners[owner],
            version,
        );
        let forged = below(&mut rng, 10) == 0;
        if forged {
            r.signature[below(&mut rng, 64) as usize] ^= 1 << below(&mut rng, 8);
        }
        let expect = oracle_insert(&mut oracle, &r, forged);
        let got = idx.insert(r, &w.dir);
        assert_eq!(
            got.is_ok(),
            expect,
            "insert mismatch at step {step}: {got:?}"
        );
        accepted += expect as usize;
    }
    assert!(accepted > 1000, "only {accepted} inserts accepted");
    assert_eq!(idx.len(), oracle.len());
    for (k, v) in &oracle {
        assert_eq!(idx.resolve(k), Some(v));
    }
}

#[test]
fn incremental_root_matches_recomputation() {
    let w = world(10);
    let mut rng = stream(22, "test/registry-selfcheck");
    let mut idx = MerkleRadixIndex::new().with_self_check(true);
    for step in 0..500u64 {
        let (key, owner) = random_key(&mut rng, &w, 60);
        let version = 1 + below(&mut rng, 20);
        let r = RegistryRecord::signed(
            key,
            "https://x.example",
            CardDigest([7; 32]),
            &w.owners[owner],
            version,
        );
        let _ = idx.insert(r, &w.dir);
        assert_eq!(idx.root_digest(), idx.recompute_root(), "step {step}");
    }
}

#[test]
fn order_of_insertion_does_not_change_the_root() {
    let w = world(1);
    let records: Vec<RegistryRecord> = (0..200)
        .map(|i| {
            RegistryRecord::signed(
                RegistryKey::name(&format!("n{i}")).unwrap(),
                "u",
                CardDigest([0; 32]),
                &w.owners[0],
                1,
            )
        })
        .collect();
    let mut a = MerkleRadixIndex::new();
    let mut b = MerkleRadixIndex::new();
    for r in &records {
        a.insert(r.clone(), &w.dir).unwrap();
    }
    for r in records.iter().rev() {
        b.insert(r.clone(), &w.dir).unwrap();
    }
    assert_eq!(a.root_digest(), b.root_digest());
}

fn name_index(n: usize, owner: &KeyPair, dir: &KeyDirectory) -> MerkleRadixIndex {
    let mut idx = MerkleRadixIndex::new();
    for i in 0..n {
        let key = RegistryKey::name(&format!("agent-{i}")).unwrap();
        idx.insert(
            RegistryRecord::signed(key, "u", CardDigest([1; 32]), owner, 1),
            dir,
        )
        .unwrap();
    }
    idx
}

#[test]
fn traversal_depth_grows_sublinearly() {
    let w = world(1);
    let depths: Vec<f64> = [100, 1_000, 10_000]
        .iter()
        .map(|&n| name_index(n, &w.owners[0], &w.dir).mean_depth())
        .collect();
    assert!(depths[0] < depths[1] && depths[1] < depths[2], "{depths:?}");
    // 100x the records, well under 10x (√100) the depth.
    assert!(depths[2] / depths[0] < 10.0, "{depths:?}");
    assert!(
        depths[2] - depths[1] <= depths[1] - depths[0] + 1.0,
        "{depths:?}"
    );
}

#[test]
fn proofs_verify_and_tampering_breaks_them() {
    let w = world(1);
    let idx = name_index(300, &w.owners[0], &w.dir);
    let root = idx.root_digest();
    for i in (0..300).step_by(7) {
        let key = RegistryKey::name(&format!("agent-{i}")).unwrap();
        let proof = idx.prove_inclusion(&key).unwrap();
        assert!(verify_proof(&root, &proof));

        let mut bad = proof.clone();
        bad.record.metadata_url.push('x');
        assert!(!verify_proof(&root, &bad));
        if !proof.levels.is_empty() {
            let mut moved = proof.clone();
            moved.levels[0].position ^= 1;
            assert!(!verify_proof(&root, &moved));
        }
        if let Some(level) = proof.levels.iter().position(|l| !l.siblings.is_empty()) {
            let mut sib = proof.clone();
            sib.levels[level].siblings[0][0] ^= 1;
            assert!(!verify_proof(&root, &sib));
        }
    }
    let absent = RegistryKey::name("nobody").unwrap();
    assert_eq!(
        idx.prove_inclusion(&absent).unwrap_err(),
        RegistryError::KeyAbsent
    );
}

#[test]
fn snapshot_round_trip_checks_root() {
    let w = world(3);
    let mut idx = MerkleRadixIndex::new();
    for o in &w.owners {
        idx.insert(
            RegistryRecord::signed(RegistryKey::Did(o.did()), "u", CardDigest([2; 32]), o, 1),
            &w.dir,
        )
        .unwrap();
    }
    let snap = idx.snapshot();
    let back = MerkleRadixIndex::from_snapshot(&snap, &w.dir).unwrap();
    assert_eq!(back.root_digest(), idx.root_digest());
    let mut wrong = snap.clone();
    wrong.root[0] ^= 1;
    assert_eq!(
        MerkleRadixIndex::from_snapshot(&wrong, &w.dir).unwrap_err(),
        RegistryError::RootMismatch
    );
}
