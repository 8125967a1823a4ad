//! Tree node records.
//!
//! A node holds `n` block entries and, when internal, `n + 1` child links.
//! Every child link caches the child's subtree block count and node digest,
//! so a parent can be serialized and routed through without touching its
//! children. Nodes are immutable once handed to a [`NodeStore`](crate::store::NodeStore).

use crate::digest::{Digest32, DIGEST_LEN};
use crate::error::{Error, Result};

/// Identifier of a persisted node. Never reused for different content.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeRef(pub u64);

/// Identifier of a persisted block payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockRef(pub u64);

/// One block slot: where the payload lives and its client-supplied seeded digest.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Entry {
    pub block: BlockRef,
    pub digest: Digest32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChildLink {
    pub node: NodeRef,
    /// Blocks in the child's whole subtree.
    pub size: u64,
    /// Blocks held directly by the child node.
    pub count: u32,
    pub digest: Digest32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Node {
    pub entries: Vec<Entry>,
    /// Empty for leaves, `entries.len() + 1` links otherwise.
    pub children: Vec<ChildLink>,
}

impl Node {
    pub fn leaf(entries: Vec<Entry>) -> Self {
        Node { entries, children: Vec::new() }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Number of blocks held directly in this node.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn subtree_size(&self) -> u64 {
        self.entries.len() as u64 + self.children.iter().map(|c| c.size).sum::<u64>()
    }

    /// Binary record used by the on-disk node store.
    ///
    /// `u8 leaf || u32_be n || n * (u64_be block || digest)` followed, for
    /// internal nodes, by `(n+1) * (u64_be node || u64_be size || u32_be count || digest)`.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + self.entries.len() * 40 + self.children.len() * 52);
        out.push(self.is_leaf() as u8);
        out.extend_from_slice(&(self.entries.len() as u32).to_be_bytes());
        for e in &self.entries {
            out.extend_from_slice(&e.block.0.to_be_bytes());
            out.extend_from_slice(e.digest.as_bytes());
        }
        for c in &self.children {
            out.extend_from_slice(&c.node.0.to_be_bytes());
            out.extend_from_slice(&c.size.to_be_bytes());
            out.extend_from_slice(&c.count.to_be_bytes());
            out.extend_from_slice(c.digest.as_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let corrupt = |what: &str| Error::Corrupt(format!("node record: {what}"));
        if bytes.len() < 5 {
            return Err(corrupt("truncated header"));
        }
        let leaf = match bytes[0] {
            0 => false,
            1 => true,
            _ => return Err(corrupt("bad leaf flag")),
        };
        let n = u32::from_be_bytes(bytes[1..5].try_into().unwrap()) as usize;
        let links = if leaf { 0 } else { n + 1 };
        let expected = 5 + n * (8 + DIGEST_LEN) + links * (20 + DIGEST_LEN);
        if bytes.len() != expected {
            return Err(corrupt("length mismatch"));
        }
        let mut cur = &bytes[5..];
        let mut take = |k: usize| {
            let (head, rest) = cur.split_at(k);
            cur = rest;
            head
        };
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let block = BlockRef(u64::from_be_bytes(take(8).try_into().unwrap()));
            let digest = Digest32::from_slice(take(DIGEST_LEN))?;
            entries.push(Entry { block, digest });
        }
        let mut children = Vec::with_capacity(links);
        for _ in 0..links {
            let node = NodeRef(u64::from_be_bytes(take(8).try_into().unwrap()));
            let size = u64::from_be_bytes(take(8).try_into().unwrap());
            let count = u32::from_be_bytes(take(4).try_into().unwrap());
            let digest = Digest32::from_slice(take(DIGEST_LEN))?;
            children.push(ChildLink { node, size, count, digest });
        }
        Ok(Node { entries, children })
    }
}
