//! Storage traits for tree nodes and block payloads, plus the in-memory
//! implementation used by clients, tests and benchmarks.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use crate::error::{Error, Result};
use crate::node::{BlockRef, Node, NodeRef};

/// Append-only node storage. A written node is never modified.
pub trait NodeStore: Send + Sync {
    fn get(&self, r: NodeRef) -> Result<Arc<Node>>;
    fn put(&self, node: Node) -> Result<NodeRef>;
    /// Total nodes ever written.
    fn node_count(&self) -> u64;
}

/// Append-only block payload storage.
pub trait BlockStore: Send + Sync {
    fn get_block(&self, r: BlockRef) -> Result<Vec<u8>>;
    fn put_block(&self, bytes: &[u8]) -> Result<BlockRef>;
}

impl<S: NodeStore + ?Sized> NodeStore for Arc<S> {
    fn get(&self, r: NodeRef) -> Result<Arc<Node>> {
        (**self).get(r)
    }
    fn put(&self, node: Node) -> Result<NodeRef> {
        (**self).put(node)
    }
    fn node_count(&self) -> u64 {
        (**self).node_count()
    }
}

impl<S: BlockStore + ?Sized> BlockStore for Arc<S> {
    fn get_block(&self, r: BlockRef) -> Result<Vec<u8>> {
        (**self).get_block(r)
    }
    fn put_block(&self, bytes: &[u8]) -> Result<BlockRef> {
        (**self).put_block(bytes)
    }
}

/// Vector-backed node and block store. Refs are indices.
#[derive(Default)]
pub struct MemStore {
    nodes: RwLock<Vec<Arc<Node>>>,
    blocks: RwLock<Vec<Arc<[u8]>>>,
    reads: AtomicU64,
}

impl MemStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Node reads served so far.
    pub fn reads(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn block_count(&self) -> u64 {
        self.blocks.read().unwrap().len() as u64
    }

    /// Test hook: flip one byte of a stored payload in place, the way a
    /// misbehaving server would.
    pub fn corrupt_block(&self, r: BlockRef, byte: usize) -> Result<()> {
        let mut blocks = self.blocks.write().unwrap();
        let slot = blocks
            .get_mut(r.0 as usize)
            .ok_or_else(|| Error::NotFound(format!("block {}", r.0)))?;
        let mut bytes = slot.to_vec();
        if bytes.is_empty() {
            bytes.push(0xff);
        } else {
            let i = byte % bytes.len();
            bytes[i] ^= 0xff;
        }
        *slot = bytes.into();
        Ok(())
    }
}

impl NodeStore for MemStore {
    fn get(&self, r: NodeRef) -> Result<Arc<Node>> {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.nodes
            .read()
            .unwrap()
            .get(r.0 as usize)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("node {}", r.0)))
    }

    fn put(&self, node: Node) -> Result<NodeRef> {
        let mut nodes = self.nodes.write().unwrap();
        nodes.push(Arc::new(node));
        Ok(NodeRef(nodes.len() as u64 - 1))
    }

    fn node_count(&self) -> u64 {
        self.nodes.read().unwrap().len() as u64
    }
}

impl BlockStore for MemStore {
    fn get_block(&self, r: BlockRef) -> Result<Vec<u8>> {
        self.blocks
            .read()
            .unwrap()
            .get(r.0 as usize)
            .map(|b| b.to_vec())
            .ok_or_else(|| Error::NotFound(format!("block {}", r.0)))
    }

    fn put_block(&self, bytes: &[u8]) -> Result<BlockRef> {
        let mut blocks = self.blocks.write().unwrap();
        blocks.push(bytes.into());
        Ok(BlockRef(blocks.len() as u64 - 1))
    }
}
