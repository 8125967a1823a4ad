use std::collections::HashSet;

use ebtree_core::versionstore::{
    corrupt_record, scan_version_log, store_paths, verify_chain, Mutation, RecordLog, VersionedTree,
};
use ebtree_core::{block_digest, verify_proof_at, NodeRef, Seed};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn blocks(seed: &Seed, n: usize) -> Vec<(Vec<u8>, ebtree_core::Digest32)> {
    (0..n)
        .map(|i| {
            let b = format!("initial {i}").into_bytes();
            let d = block_digest(seed, &b);
            (b, d)
        })
        .collect()
}

fn random_mutation(rng: &mut StdRng, seed: &Seed, len: u64, i: usize) -> Mutation {
    let b = format!("mutation {i}").into_bytes();
    let d = block_digest(seed, &b);
    match rng.gen_range(0..3) {
        0 => Mutation::Insert { position: rng.gen_range(1..=len + 1), block: b, digest: d },
        1 if len > 1 => Mutation::Delete { position: rng.gen_range(1..=len) },
        _ => Mutation::Update { position: rng.gen_range(1..=len), block: b, digest: d },
    }
}

fn populate(dir: &std::path::Path, seed: &Seed, mutations: usize) -> VersionedTree {
    let vt = VersionedTree::create(dir, "doc", 3, &blocks(seed, 120)).unwrap();
    let mut rng = StdRng::seed_from_u64(77);
    for i in 0..mutations {
        let len = vt.tree().unwrap().len();
        let m = random_mutation(&mut rng, seed, len, i);
        vt.apply(Some(i as u64), m).unwrap();
    }
    vt
}

#[test]
fn history_survives_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let seed = Seed([8; 32]);
    let written = populate(dir.path(), &seed, 150);
    let before = written.records();
    drop(written);

    let vt = VersionedTree::open(dir.path(), "doc").unwrap();
    assert_eq!(vt.records(), before);
    assert_eq!(vt.min_degree(), 3);
    vt.verify_history().unwrap();
    for rec in vt.records().iter().step_by(10) {
        let tree = vt.load_version(rec.version).unwrap();
        tree.check_invariants(vt.nodes()).unwrap();
        let p = tree.len() / 2 + 1;
        let proof = vt.prove(Some(rec.version), p).unwrap();
        verify_proof_at(&proof, &seed, &rec.root_digest, p).unwrap();
    }
    // New versions continue the chain after reopening.
    let b = b"after reopen".to_vec();
    let rec = vt
        .apply(Some(150), Mutation::Insert { position: 1, digest: block_digest(&seed, &b), block: b })
        .unwrap();
    assert_eq!(rec.version, 151);
    assert_eq!(rec.op.to_string(), "insert(1)");
    vt.verify_history().unwrap();
}

#[test]
fn rewritten_node_record_breaks_history() {
    let dir = tempfile::tempdir().unwrap();
    let seed = Seed([9; 32]);
    let vt = populate(dir.path(), &seed, 40);
    let latest = vt.latest();
    drop(vt);

    let [nodes, _, _] = store_paths(dir.path(), "doc");
    let root_off = latest.root.0;
    // Flip a byte inside the root node's first block digest, keeping the
    // frame checksum valid.
    corrupt_record(&nodes, root_off, 1 + 4 + 8 + 3, true).unwrap();

    let vt = VersionedTree::open(dir.path(), "doc").unwrap();
    let err = vt.verify_history().unwrap_err();
    assert_eq!(err.version, latest.version);
    assert!(vt.load_version(latest.version).is_err());
    // Older versions that do not share the root remain auditable.
    vt.load_version(0).unwrap();
}

fn reachable_nodes(vt: &VersionedTree) -> HashSet<u64> {
    let mut seen = HashSet::new();
    let mut stack: Vec<NodeRef> = vt.records().iter().map(|r| r.root).collect();
    while let Some(r) = stack.pop() {
        if seen.insert(r.0) {
            stack.extend(vt.nodes().get(r).unwrap().children.iter().map(|c| c.node));
        }
    }
    seen
}

#[test]
fn bit_rot_in_any_reachable_node_record_is_detected() {
    let seed = Seed([10; 32]);
    let mut rng = StdRng::seed_from_u64(4);
    let mut hits = 0;
    for _ in 0..12 {
        let dir = tempfile::tempdir().unwrap();
        let vt = populate(dir.path(), &seed, 20);
        let reachable = reachable_nodes(&vt);
        drop(vt);
        let [nodes, _, _] = store_paths(dir.path(), "doc");
        let offsets = RecordLog::open(&nodes).unwrap().offsets().unwrap();
        // Record 0 is the header.
        let off = offsets[rng.gen_range(1..offsets.len())];
        corrupt_record(&nodes, off, rng.gen(), false).unwrap();
        let vt = VersionedTree::open(dir.path(), "doc").unwrap();
        assert_eq!(vt.verify_history().is_err(), reachable.contains(&off), "offset {off}");
        hits += usize::from(reachable.contains(&off));
    }
    assert!(hits > 0);
}

#[test]
fn tampered_version_record_breaks_the_chain() {
    let dir = tempfile::tempdir().unwrap();
    let seed = Seed([11; 32]);
    drop(populate(dir.path(), &seed, 30));
    let [_, _, versions] = store_paths(dir.path(), "doc");
    let offsets = RecordLog::open(&versions).unwrap().offsets().unwrap();
    // Root digest field of version 17.
    corrupt_record(&versions, offsets[17], 8 + 8 + 5, true).unwrap();
    let records = scan_version_log(&versions).unwrap().unwrap();
    assert_eq!(verify_chain(&records).unwrap_err().version, 17);
    let vt = VersionedTree::open(dir.path(), "doc").unwrap();
    assert_eq!(vt.verify_history().unwrap_err().version, 17);
}
