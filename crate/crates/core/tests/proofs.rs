use ebtree_core::codec::fold_levels;
use ebtree_core::versionstore::{Mutation, VersionedTree};
use ebtree_core::{block_digest, verify_proof, verify_proof_at, AuditProof, Rejection, Seed};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn file(seed: &Seed, n: usize, t: usize) -> VersionedTree {
    let blocks: Vec<(Vec<u8>, _)> = (0..n)
        .map(|i| {
            let b = format!("block #{i:06}").into_bytes();
            let d = block_digest(seed, &b);
            (b, d)
        })
        .collect();
    VersionedTree::in_memory(t, &blocks).unwrap()
}

#[test]
fn honest_proofs_fold_through_every_level() {
    let seed = Seed([1; 32]);
    let vt = file(&seed, 2000, 4);
    let tree = vt.tree().unwrap();
    let height = tree.height(vt.nodes()).unwrap();
    for p in (1..=2000).step_by(37) {
        let proof = vt.prove(None, p).unwrap();
        assert!(proof.path.len() <= height + 1);
        let levels = fold_levels(&proof, &seed).unwrap();
        assert_eq!(*levels.last().unwrap(), tree.root_digest());
        verify_proof_at(&proof, &seed, &tree.root_digest(), p).unwrap();
    }
}

#[test]
fn single_byte_tampering_is_always_rejected() {
    let seed = Seed([2; 32]);
    let vt = file(&seed, 500, 3);
    let root = vt.latest().root_digest;
    let mut rng = StdRng::seed_from_u64(3);
    for _ in 0..300 {
        let p = rng.gen_range(1..=500);
        let honest = vt.prove(None, p).unwrap();
        let mut bad = honest.clone();
        let total: usize = bad.block.len() + bad.path.iter().map(|e| e.prefix.len() + e.suffix.len()).sum::<usize>();
        let mut k = rng.gen_range(0..total);
        let flip = 1u8 << rng.gen_range(0..8);
        if k < bad.block.len() {
            bad.block[k] ^= flip;
        } else {
            k -= bad.block.len();
            for e in bad.path.iter_mut() {
                if k < e.prefix.len() {
                    e.prefix[k] ^= flip;
                    break;
                }
                k -= e.prefix.len();
                if k < e.suffix.len() {
                    e.suffix[k] ^= flip;
                    break;
                }
                k -= e.suffix.len();
            }
        }
        assert_ne!(bad, honest);
        assert!(verify_proof_at(&bad, &seed, &root, p).is_err());
    }
}

#[test]
fn proofs_for_another_rank_or_version_are_rejected() {
    let seed = Seed([3; 32]);
    let vt = file(&seed, 300, 2);
    let v0 = vt.latest();
    let b = b"replacement".to_vec();
    let v1 = vt
        .apply(Some(0), Mutation::Update { position: 10, digest: block_digest(&seed, &b), block: b })
        .unwrap();

    // Answering a different challenge, honestly or with a relabelled position.
    let other = vt.prove(None, 11).unwrap();
    assert!(matches!(
        verify_proof_at(&other, &seed, &v1.root_digest, 12),
        Err(Rejection::PositionMismatch { .. })
    ));
    let mut relabelled = other.clone();
    relabelled.position = 12;
    verify_proof(&relabelled, &seed, &v1.root_digest).unwrap();
    assert!(verify_proof_at(&relabelled, &seed, &v1.root_digest, 11).is_err());

    // Stale version: valid against its own root only.
    let stale = vt.prove(Some(0), 200).unwrap();
    verify_proof_at(&stale, &seed, &v0.root_digest, 200).unwrap();
    assert!(matches!(
        verify_proof_at(&stale, &seed, &v1.root_digest, 200),
        Err(Rejection::DigestMismatch { .. })
    ));

    // The wrong seed cannot reproduce the digests.
    let fresh = vt.prove(None, 200).unwrap();
    assert!(verify_proof(&fresh, &Seed([4; 32]), &v1.root_digest).is_err());
}

#[test]
fn structural_edits_to_the_path_are_rejected() {
    let seed = Seed([5; 32]);
    let vt = file(&seed, 1000, 3);
    let root = vt.latest().root_digest;
    let honest = vt.prove(None, 321).unwrap();

    let mut truncated = honest.clone();
    truncated.path.pop();
    assert!(verify_proof(&truncated, &seed, &root).is_err());

    let mut dropped_root = honest.clone();
    dropped_root.path.remove(0);
    assert!(verify_proof(&dropped_root, &seed, &root).is_err());

    let mut duplicated = honest.clone();
    duplicated.path.insert(0, honest.path[0].clone());
    assert!(verify_proof(&duplicated, &seed, &root).is_err());

    let mut empty = honest.clone();
    empty.path.clear();
    assert!(matches!(verify_proof(&empty, &seed, &root), Err(Rejection::MalformedProof(_))));

    let mut shifted = honest.clone();
    let last = shifted.path.last_mut().unwrap();
    let moved: Vec<u8> = last.suffix.drain(..32.min(last.suffix.len())).collect();
    last.prefix.extend(moved);
    assert!(verify_proof(&shifted, &seed, &root).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn proofs_survive_a_json_round_trip(n in 1usize..400, t in 2usize..6, pick in any::<u64>()) {
        let seed = Seed([6; 32]);
        let vt = file(&seed, n, t);
        let p = pick % n as u64 + 1;
        let proof = vt.prove(None, p).unwrap();
        let json = serde_json::to_string(&proof).unwrap();
        let back: AuditProof = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(&back, &proof);
        prop_assert!(verify_proof_at(&back, &seed, &vt.latest().root_digest, p).is_ok());
    }
}
