//! Canonical node serialization, seeded block digests and sibling-path proofs.
//!
//! Byte layouts (all integers big-endian):
//!
//! ```text
//! leaf      0x00 || u32 n || d(B_1) || ... || d(B_n)
//! internal  0x01 || u32 n || D(C_1) || d(B_1) || D(C_2) || ... || d(B_n) || D(C_n+1)
//! block     d(B) = H(0x02 || seed || B)
//! ```
//!
//! A sibling-path entry is one node's serialization cut around a single
//! 32-byte hole. Folding `H(prefix || h || suffix)` from the deepest entry
//! up to the root reproduces the root digest.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::{sha256, Digest32, Seed, DIGEST_LEN, TAG_BLOCK, TAG_INTERNAL, TAG_LEAF};
use crate::node::Node;

const HEADER_LEN: usize = 5;

/// Seeded block digest `H(0x02 || seed || block)`.
pub fn block_digest(seed: &Seed, block: &[u8]) -> Digest32 {
    sha256(&[&[TAG_BLOCK], &seed.0, block])
}

pub fn serialized_len(is_leaf: bool, n: usize) -> usize {
    if is_leaf {
        HEADER_LEN + DIGEST_LEN * n
    } else {
        HEADER_LEN + DIGEST_LEN * (2 * n + 1)
    }
}

pub fn serialize_node(node: &Node) -> Vec<u8> {
    let n = node.len();
    let mut out = Vec::with_capacity(serialized_len(node.is_leaf(), n));
    if node.is_leaf() {
        out.push(TAG_LEAF);
        out.extend_from_slice(&(n as u32).to_be_bytes());
        for e in &node.entries {
            out.extend_from_slice(e.digest.as_bytes());
        }
    } else {
        out.push(TAG_INTERNAL);
        out.extend_from_slice(&(n as u32).to_be_bytes());
        for (c, e) in node.children.iter().zip(&node.entries) {
            out.extend_from_slice(c.digest.as_bytes());
            out.extend_from_slice(e.digest.as_bytes());
        }
        out.extend_from_slice(node.children[n].digest.as_bytes());
    }
    out
}

pub fn node_digest(node: &Node) -> Digest32 {
    sha256(&[&serialize_node(node)])
}

/// Which 32-byte slot of a node's serialization becomes the hole.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Hole {
    Block(usize),
    Child(usize),
}

fn hole_offset(is_leaf: bool, hole: Hole) -> usize {
    match (is_leaf, hole) {
        (true, Hole::Block(i)) => HEADER_LEN + DIGEST_LEN * i,
        (false, Hole::Block(i)) => HEADER_LEN + DIGEST_LEN * (2 * i + 1),
        (false, Hole::Child(i)) => HEADER_LEN + DIGEST_LEN * (2 * i),
        (true, Hole::Child(_)) => panic!("leaf nodes have no child slots"),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiblingPathEntry {
    #[serde(with = "crate::digest::hex_vec")]
    pub prefix: Vec<u8>,
    #[serde(with = "crate::digest::hex_vec")]
    pub suffix: Vec<u8>,
}

impl SiblingPathEntry {
    /// Cut `node`'s canonical serialization around `hole`.
    pub fn around(node: &Node, hole: Hole) -> Self {
        let bytes = serialize_node(node);
        let off = hole_offset(node.is_leaf(), hole);
        SiblingPathEntry {
            prefix: bytes[..off].to_vec(),
            suffix: bytes[off + DIGEST_LEN..].to_vec(),
        }
    }

    pub fn fold(&self, hole: &Digest32) -> Digest32 {
        sha256(&[&self.prefix, hole.as_bytes(), &self.suffix])
    }

    pub fn byte_len(&self) -> usize {
        self.prefix.len() + self.suffix.len()
    }

    /// Checks the entry is a well-formed node serialization with one hole.
    /// `deepest` entries must hole a block slot, all others a child slot.
    fn check_shape(&self, deepest: bool) -> Result<(), String> {
        if self.prefix.len() < HEADER_LEN {
            return Err("prefix shorter than node header".into());
        }
        let is_leaf = match self.prefix[0] {
            TAG_LEAF => true,
            TAG_INTERNAL => false,
            t => return Err(format!("unknown node tag {t:#04x}")),
        };
        let n = u32::from_be_bytes(self.prefix[1..5].try_into().unwrap()) as usize;
        if n == 0 {
            return Err("node with zero blocks".into());
        }
        let total = self.prefix.len() + DIGEST_LEN + self.suffix.len();
        if total != serialized_len(is_leaf, n) {
            return Err(format!("entry length {total} does not match n={n}"));
        }
        let body = self.prefix.len() - HEADER_LEN;
        if body % DIGEST_LEN != 0 {
            return Err("hole not aligned to a digest slot".into());
        }
        let slot = body / DIGEST_LEN;
        match (deepest, is_leaf) {
            (false, true) => Err("leaf entry above the deepest level".into()),
            (false, false) if slot % 2 != 0 => Err("interior hole on a block slot".into()),
            (true, false) if slot % 2 != 1 => Err("final hole on a child slot".into()),
            _ => Ok(()),
        }
    }
}

/// A block payload plus the sibling path from the root to its node.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditProof {
    pub position: u64,
    #[serde(with = "crate::digest::hex_vec")]
    pub block: Vec<u8>,
    /// Root entry first.
    pub path: Vec<SiblingPathEntry>,
}

impl AuditProof {
    pub fn byte_len(&self) -> usize {
        8 + self.block.len() + self.path.iter().map(SiblingPathEntry::byte_len).sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Rejection {
    #[error("recomputed root {computed} does not match expected {expected}")]
    DigestMismatch { computed: Digest32, expected: Digest32 },
    #[error("malformed proof: {0}")]
    MalformedProof(String),
    #[error("proof is for position {claimed}, challenged {expected}")]
    PositionMismatch { claimed: u64, expected: u64 },
}

/// Digests reproduced by folding `proof`, deepest node first, root last.
pub fn fold_levels(proof: &AuditProof, seed: &Seed) -> Result<Vec<Digest32>, Rejection> {
    if proof.path.is_empty() {
        return Err(Rejection::MalformedProof("empty sibling path".into()));
    }
    let last = proof.path.len() - 1;
    for (i, entry) in proof.path.iter().enumerate() {
        entry
            .check_shape(i == last)
            .map_err(|e| Rejection::MalformedProof(format!("level {i}: {e}")))?;
    }
    let mut h = block_digest(seed, &proof.block);
    let mut levels = Vec::with_capacity(proof.path.len());
    for entry in proof.path.iter().rev() {
        h = entry.fold(&h);
        levels.push(h);
    }
    Ok(levels)
}

/// Folds `proof` to a root digest and compares it with `expected_root`.
pub fn verify_proof(proof: &AuditProof, seed: &Seed, expected_root: &Digest32) -> Result<(), Rejection> {
    let levels = fold_levels(proof, seed)?;
    let computed = *levels.last().unwrap();
    if computed != *expected_root {
        return Err(Rejection::DigestMismatch { computed, expected: *expected_root });
    }
    Ok(())
}

/// [`verify_proof`] plus a check that the proof answers the challenged rank.
pub fn verify_proof_at(
    proof: &AuditProof,
    seed: &Seed,
    expected_root: &Digest32,
    expected_position: u64,
) -> Result<(), Rejection> {
    if proof.position != expected_position {
        return Err(Rejection::PositionMismatch { claimed: proof.position, expected: expected_position });
    }
    verify_proof(proof, seed, expected_root)
}
