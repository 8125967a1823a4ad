//! Versioned persistence: every committed mutation appends a
//! [`VersionRecord`] whose `commit` chains over its predecessor, so history
//! is tamper-evident. Nodes and blocks are never rewritten, so every
//! committed version stays loadable.
//!
//! On disk a stored file `NAME` is three [`RecordLog`]s under one data
//! directory: `NAME.nodes`, `NAME.blocks` and `NAME.versions`.

mod log;

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use self::log::{corrupt_record, FileBlockStore, FileNodeStore, RecordLog};
use crate::codec::{node_digest, AuditProof};
use crate::digest::{sha256, Digest32, TAG_COMMIT};
use crate::error::{Error, Result};
use crate::node::{Entry, NodeRef};
use crate::store::{BlockStore, MemStore, NodeStore};
use crate::tree::EBTree;

/// What a version changed. Hashed into the commit as its display string,
/// e.g. `init`, `insert(5)`, `batch`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpDescriptor {
    Init,
    Insert(u64),
    Delete(u64),
    Update(u64),
    Batch,
}

impl OpDescriptor {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        self.to_string().into_bytes()
    }
}

impl fmt::Display for OpDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpDescriptor::Init => f.write_str("init"),
            OpDescriptor::Insert(p) => write!(f, "insert({p})"),
            OpDescriptor::Delete(p) => write!(f, "delete({p})"),
            OpDescriptor::Update(p) => write!(f, "update({p})"),
            OpDescriptor::Batch => f.write_str("batch"),
        }
    }
}

impl FromStr for OpDescriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Codec(format!("bad op descriptor {s:?}"));
        match s {
            "init" => return Ok(OpDescriptor::Init),
            "batch" => return Ok(OpDescriptor::Batch),
            _ => {}
        }
        let (name, rest) = s.split_once('(').ok_or_else(bad)?;
        let p: u64 = rest.strip_suffix(')').ok_or_else(bad)?.parse().map_err(|_| bad())?;
        match name {
            "insert" => Ok(OpDescriptor::Insert(p)),
            "delete" => Ok(OpDescriptor::Delete(p)),
            "update" => Ok(OpDescriptor::Update(p)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for OpDescriptor {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for OpDescriptor {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VersionRecord {
    pub version: u64,
    pub root: NodeRef,
    pub root_digest: Digest32,
    pub op: OpDescriptor,
    pub commit: Digest32,
}

/// `H(0x03 || prev_commit || root_digest || op)`.
pub fn chain_commit(prev_commit: &Digest32, root_digest: &Digest32, op: &OpDescriptor) -> Digest32 {
    sha256(&[&[TAG_COMMIT], prev_commit.as_bytes(), root_digest.as_bytes(), &op.canonical_bytes()])
}

impl VersionRecord {
    pub fn genesis(root: NodeRef, root_digest: Digest32) -> Self {
        let op = OpDescriptor::Init;
        VersionRecord { version: 0, root, root_digest, op, commit: chain_commit(&Digest32::ZERO, &root_digest, &op) }
    }

    pub fn next(&self, root: NodeRef, root_digest: Digest32, op: OpDescriptor) -> Self {
        VersionRecord {
            version: self.version + 1,
            root,
            root_digest,
            op,
            commit: chain_commit(&self.commit, &root_digest, &op),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let op = self.op.canonical_bytes();
        let mut out = Vec::with_capacity(84 + op.len());
        out.extend_from_slice(&self.version.to_be_bytes());
        out.extend_from_slice(&self.root.0.to_be_bytes());
        out.extend_from_slice(self.root_digest.as_bytes());
        out.extend_from_slice(&(op.len() as u32).to_be_bytes());
        out.extend_from_slice(&op);
        out.extend_from_slice(self.commit.as_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let corrupt = || Error::Corrupt("version record".into());
        if bytes.len() < 84 {
            return Err(corrupt());
        }
        let op_len = u32::from_be_bytes(bytes[48..52].try_into().unwrap()) as usize;
        if bytes.len() != 84 + op_len {
            return Err(corrupt());
        }
        let op = std::str::from_utf8(&bytes[52..52 + op_len]).map_err(|_| corrupt())?;
        Ok(VersionRecord {
            version: u64::from_be_bytes(bytes[0..8].try_into().unwrap()),
            root: NodeRef(u64::from_be_bytes(bytes[8..16].try_into().unwrap())),
            root_digest: Digest32::from_slice(&bytes[16..48])?,
            op: op.parse().map_err(|_| corrupt())?,
            commit: Digest32::from_slice(&bytes[52 + op_len..])?,
        })
    }
}

/// First point at which a version history fails verification.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChainBreak {
    pub version: u64,
    pub reason: String,
}

impl fmt::Display for ChainBreak {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "version {}: {}", self.version, self.reason)
    }
}

/// Recomputes every commit and checks versions are dense from 0.
pub fn verify_chain(records: &[VersionRecord]) -> std::result::Result<(), ChainBreak> {
    let mut prev = Digest32::ZERO;
    for (i, r) in records.iter().enumerate() {
        let i = i as u64;
        if r.version != i {
            return Err(ChainBreak { version: i, reason: format!("expected version {i}, found {}", r.version) });
        }
        if chain_commit(&prev, &r.root_digest, &r.op) != r.commit {
            return Err(ChainBreak { version: i, reason: "commit does not match recomputation".into() });
        }
        prev = r.commit;
    }
    Ok(())
}

/// Reads every record of a version log file without trusting it. An
/// unreadable record is reported as a break at its index.
pub fn scan_version_log(path: &Path) -> Result<std::result::Result<Vec<VersionRecord>, ChainBreak>> {
    let log = RecordLog::open(path)?;
    let mut out = Vec::new();
    for (i, off) in log.offsets()?.into_iter().enumerate() {
        match log.read(off).and_then(|b| VersionRecord::decode(&b)) {
            Ok(r) => out.push(r),
            Err(e) => return Ok(Err(ChainBreak { version: i as u64, reason: e.to_string() })),
        }
    }
    Ok(Ok(out))
}

/// One positional mutation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Mutation {
    Insert { position: u64, block: Vec<u8>, digest: Digest32 },
    Delete { position: u64 },
    Update { position: u64, block: Vec<u8>, digest: Digest32 },
}

impl Mutation {
    pub fn descriptor(&self) -> OpDescriptor {
        match *self {
            Mutation::Insert { position, .. } => OpDescriptor::Insert(position),
            Mutation::Delete { position } => OpDescriptor::Delete(position),
            Mutation::Update { position, .. } => OpDescriptor::Update(position),
        }
    }
}

enum Backend {
    Mem(Arc<MemStore>),
    Files { nodes: Arc<FileNodeStore>, blocks: Arc<FileBlockStore>, versions: RecordLog },
}

/// Paths of the three record files backing stored file `name`.
pub fn store_paths(dir: &Path, name: &str) -> [PathBuf; 3] {
    ["nodes", "blocks", "versions"].map(|ext| dir.join(format!("{name}.{ext}")))
}

/// A stored file: its tree versions plus the hash-chained version log.
///
/// Mutations are serialized by an internal writer lock; reads of committed
/// versions never wait on it.
pub struct VersionedTree {
    backend: Backend,
    t: usize,
    records: RwLock<Vec<VersionRecord>>,
    writer: Mutex<()>,
}

impl VersionedTree {
    /// A memory-backed file whose version 0 holds `blocks` in order.
    pub fn in_memory(t: usize, blocks: &[(Vec<u8>, Digest32)]) -> Result<Self> {
        let store = Arc::new(MemStore::new());
        Self::init(Backend::Mem(store), t, blocks)
    }

    /// Creates the on-disk file `name` under `dir` with `blocks` as version 0.
    pub fn create(dir: &Path, name: &str, t: usize, blocks: &[(Vec<u8>, Digest32)]) -> Result<Self> {
        let [np, bp, vp] = store_paths(dir, name);
        if np.exists() || vp.exists() {
            return Err(Error::Config(format!("stored file {name} already exists in {}", dir.display())));
        }
        std::fs::create_dir_all(dir)?;
        let backend = Backend::Files {
            nodes: Arc::new(FileNodeStore::open(&np, Some(t))?),
            blocks: Arc::new(FileBlockStore::open(&bp)?),
            versions: RecordLog::open(&vp)?,
        };
        Self::init(backend, t, blocks)
    }

    /// Reopens an existing on-disk file.
    pub fn open(dir: &Path, name: &str) -> Result<Self> {
        let [np, bp, vp] = store_paths(dir, name);
        if !vp.exists() {
            return Err(Error::NotFound(format!("stored file {name}")));
        }
        let nodes = Arc::new(FileNodeStore::open(&np, None)?);
        let t = nodes.min_degree();
        let versions = RecordLog::open(&vp)?;
        let mut records = Vec::new();
        for off in versions.offsets()? {
            records.push(VersionRecord::decode(&versions.read(off)?)?);
        }
        if records.is_empty() {
            return Err(Error::Corrupt(format!("stored file {name} has no versions")));
        }
        let backend = Backend::Files { nodes, blocks: Arc::new(FileBlockStore::open(&bp)?), versions };
        Ok(VersionedTree { backend, t, records: RwLock::new(records), writer: Mutex::new(()) })
    }

    fn init(backend: Backend, t: usize, blocks: &[(Vec<u8>, Digest32)]) -> Result<Self> {
        let me = VersionedTree { backend, t, records: RwLock::new(Vec::new()), writer: Mutex::new(()) };
        let mut entries = Vec::with_capacity(blocks.len());
        for (payload, digest) in blocks {
            entries.push(Entry { block: me.blocks().put_block(payload)?, digest: *digest });
        }
        let tree = EBTree::build(me.nodes(), &entries, t)?;
        me.sync_stores()?;
        let genesis = VersionRecord::genesis(tree.root(), tree.root_digest());
        me.append_record(genesis)?;
        Ok(me)
    }

    pub fn nodes(&self) -> &dyn NodeStore {
        match &self.backend {
            Backend::Mem(m) => m.as_ref(),
            Backend::Files { nodes, .. } => nodes.as_ref(),
        }
    }

    pub fn blocks(&self) -> &dyn BlockStore {
        match &self.backend {
            Backend::Mem(m) => m.as_ref(),
            Backend::Files { blocks, .. } => blocks.as_ref(),
        }
    }

    /// The backing memory store, for memory-backed files.
    pub fn mem_store(&self) -> Option<&Arc<MemStore>> {
        match &self.backend {
            Backend::Mem(m) => Some(m),
            Backend::Files { .. } => None,
        }
    }

    pub fn min_degree(&self) -> usize {
        self.t
    }

    pub fn latest(&self) -> VersionRecord {
        *self.records.read().unwrap().last().expect("at least the genesis record")
    }

    pub fn records(&self) -> Vec<VersionRecord> {
        self.records.read().unwrap().clone()
    }

    pub fn record(&self, v: u64) -> Result<VersionRecord> {
        self.records
            .read()
            .unwrap()
            .get(v as usize)
            .copied()
            .ok_or_else(|| Error::NotFound(format!("version {v}")))
    }

    /// The immutable tree of version `v`.
    pub fn load_version(&self, v: u64) -> Result<EBTree> {
        let rec = self.record(v)?;
        let tree = EBTree::open(self.nodes(), rec.root, self.t)?;
        if tree.root_digest() != rec.root_digest {
            return Err(Error::Corrupt(format!("version {v} root node does not match its recorded digest")));
        }
        Ok(tree)
    }

    pub fn tree(&self) -> Result<EBTree> {
        self.load_version(self.latest().version)
    }

    fn resolve(&self, v: Option<u64>) -> Result<EBTree> {
        match v {
            Some(v) => self.load_version(v),
            None => self.tree(),
        }
    }

    /// Payload and entry at rank `p` of version `v` (latest if `None`).
    pub fn get(&self, v: Option<u64>, p: u64) -> Result<(Vec<u8>, Entry)> {
        let tree = self.resolve(v)?;
        let entry = tree.get(self.nodes(), p)?;
        Ok((self.blocks().get_block(entry.block)?, entry))
    }

    /// Audit proof for rank `p` of version `v` (latest if `None`).
    pub fn prove(&self, v: Option<u64>, p: u64) -> Result<AuditProof> {
        let tree = self.resolve(v)?;
        self.prove_in(&tree, p)
    }

    pub fn prove_in(&self, tree: &EBTree, p: u64) -> Result<AuditProof> {
        let (entry, path) = tree.sibling_path(self.nodes(), p)?;
        Ok(AuditProof { position: p, block: self.blocks().get_block(entry.block)?, path })
    }

    /// Applies one mutation and commits a new version. `expected` is the
    /// version the caller believes is latest; a mismatch is a conflict.
    pub fn apply(&self, expected: Option<u64>, m: Mutation) -> Result<VersionRecord> {
        let op = m.descriptor();
        self.apply_batch_as(expected, vec![m], op)
    }

    /// Applies several mutations in order under a single `batch` version.
    pub fn apply_batch(&self, expected: Option<u64>, ms: Vec<Mutation>) -> Result<VersionRecord> {
        self.apply_batch_as(expected, ms, OpDescriptor::Batch)
    }

    fn apply_batch_as(&self, expected: Option<u64>, ms: Vec<Mutation>, op: OpDescriptor) -> Result<VersionRecord> {
        let _w = self.writer.lock().unwrap();
        let prev = self.latest();
        if let Some(e) = expected {
            if e != prev.version {
                return Err(Error::Conflict { expected: e, latest: prev.version });
            }
        }
        let mut tree = self.load_version(prev.version)?;
        for m in ms {
            tree = self.mutate(&tree, m)?;
        }
        self.sync_stores()?;
        let rec = prev.next(tree.root(), tree.root_digest(), op);
        self.append_record(rec)?;
        Ok(rec)
    }

    fn mutate(&self, tree: &EBTree, m: Mutation) -> Result<EBTree> {
        match m {
            Mutation::Insert { position, block, digest } => {
                if position == 0 || position > tree.len() + 1 {
                    return Err(Error::Range { pos: position, max: tree.len() + 1 });
                }
                let block = self.blocks().put_block(&block)?;
                tree.insert(self.nodes(), position, Entry { block, digest })
            }
            Mutation::Delete { position } => Ok(tree.delete(self.nodes(), position)?.0),
            Mutation::Update { position, block, digest } => {
                if position == 0 || position > tree.len() {
                    return Err(Error::Range { pos: position, max: tree.len() });
                }
                let block = self.blocks().put_block(&block)?;
                tree.update(self.nodes(), position, Entry { block, digest })
            }
        }
    }

    /// Checks `prev` is still the latest record and appends its successor.
    pub fn commit_version(&self, prev: &VersionRecord, root: NodeRef, op: OpDescriptor) -> Result<VersionRecord> {
        let _w = self.writer.lock().unwrap();
        let latest = self.latest();
        if *prev != latest {
            return Err(Error::Conflict { expected: prev.version, latest: latest.version });
        }
        let root_digest = node_digest(&*self.nodes().get(root)?);
        self.sync_stores()?;
        let rec = prev.next(root, root_digest, op);
        self.append_record(rec)?;
        Ok(rec)
    }

    fn sync_stores(&self) -> Result<()> {
        if let Backend::Files { nodes, blocks, .. } = &self.backend {
            blocks.sync()?;
            nodes.sync()?;
        }
        Ok(())
    }

    fn append_record(&self, rec: VersionRecord) -> Result<()> {
        if let Backend::Files { versions, .. } = &self.backend {
            versions.append(&rec.encode())?;
            versions.sync()?;
        }
        self.records.write().unwrap().push(rec);
        Ok(())
    }

    pub fn node_count(&self) -> u64 {
        self.nodes().node_count()
    }

    /// Verifies the commit chain, then recomputes every version's root
    /// digest from raw node contents, checking each stored link's digest,
    /// subtree size and block count on the way.
    pub fn verify_history(&self) -> std::result::Result<(), ChainBreak> {
        let records = self.records();
        verify_chain(&records)?;
        let mut memo = HashMap::new();
        for r in &records {
            match recompute_memo(self.nodes(), r.root, &mut memo) {
                Ok((d, _)) if d == r.root_digest => {}
                Ok(_) => {
                    return Err(ChainBreak { version: r.version, reason: "tree does not match recorded root digest".into() })
                }
                Err(e) => return Err(ChainBreak { version: r.version, reason: e.to_string() }),
            }
        }
        Ok(())
    }

    /// The node, block and version files, for on-disk backends.
    pub fn paths(&self) -> Option<[PathBuf; 3]> {
        match &self.backend {
            Backend::Mem(_) => None,
            Backend::Files { nodes, blocks, versions } => {
                Some([nodes.path().to_owned(), blocks.path().to_owned(), versions.path().to_owned()])
            }
        }
    }

    /// Forgets decoded nodes so subsequent reads go back to disk.
    pub fn drop_caches(&self) {
        if let Backend::Files { nodes, .. } = &self.backend {
            nodes.drop_cache();
        }
    }
}

/// Digest and subtree size of the node at `r`, rebuilt from raw node
/// contents. Stored link fields must agree with what is rebuilt.
fn recompute_memo(store: &dyn NodeStore, r: NodeRef, memo: &mut HashMap<NodeRef, (Digest32, u64)>) -> Result<(Digest32, u64)> {
    if let Some(v) = memo.get(&r) {
        return Ok(*v);
    }
    let node = store.get(r)?;
    let mut size = node.entries.len() as u64;
    for link in &node.children {
        let (d, n) = recompute_memo(store, link.node, memo)?;
        let count = store.get(link.node)?.entries.len() as u32;
        if d != link.digest || n != link.size || count != link.count {
            return Err(Error::Corrupt(format!("node {} holds a stale link to node {}", r.0, link.node.0)));
        }
        size += n;
    }
    let v = (node_digest(&node), size);
    memo.insert(r, v);
    Ok(v)
}
