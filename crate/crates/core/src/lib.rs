//! Rank-addressed, hash-authenticated, copy-on-write B-tree for auditing
//! outsourced block storage.
//!
//! * [`tree`]: the keyless counted B-tree and its positional operations.
//! * [`codec`]: canonical node bytes, seeded block digests, sibling-path proofs.
//! * [`versionstore`]: append-only node/block files and the hash-chained version log.
//! * [`filepipe`]: client-side chunking, AES-256-GCM and manifests.
//! * [`baselines`]: Merkle hash tree baselines and test oracles.

pub mod baselines;
pub mod codec;
pub mod digest;
pub mod error;
pub mod filepipe;
pub mod node;
pub mod store;
pub mod tree;
pub mod versionstore;

pub use codec::{block_digest, verify_proof, verify_proof_at, AuditProof, Rejection, SiblingPathEntry};
pub use digest::{Digest32, Seed};
pub use error::{Error, Result};
pub use node::{BlockRef, ChildLink, Entry, Node, NodeRef};
pub use store::{BlockStore, MemStore, NodeStore};
pub use tree::{EBTree, Route, DEFAULT_MIN_DEGREE};
