//! Storage server: one [`VersionedTree`] per uploaded file under a data
//! directory, named by the hex file id.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use ebtree_core::digest::sha256;
use ebtree_core::filepipe::FileId;
use ebtree_core::versionstore::{corrupt_record, store_paths, Mutation, VersionRecord, VersionedTree};
use ebtree_core::DEFAULT_MIN_DEGREE;

use crate::audit::handle_challenge;
use crate::error::{Error, Result};
use crate::service::Handler;
use crate::wire::{Ack, Challenge, ErrorCode, Get, Message, Mutate, ProofBundle, Upload};

pub const DATA_DIR_ENV: &str = "EBTREE_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "./data";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MutationKind {
    Insert,
    Delete,
    Update,
}

struct StoredFile {
    tree: VersionedTree,
    /// SHA-256 of the owner's bearer token.
    token_hash: String,
}

pub struct Server {
    dir: PathBuf,
    files: Mutex<HashMap<FileId, Arc<StoredFile>>>,
}

fn token_hash(token: &str) -> String {
    sha256(&[token.as_bytes()]).to_hex()
}

fn not_found(file_id: &FileId) -> Error {
    Error::Core(ebtree_core::Error::NotFound(format!("file {}", hex::encode(file_id))))
}

impl Server {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(ebtree_core::Error::from)?;
        Ok(Server { dir, files: Mutex::new(HashMap::new()) })
    }

    pub fn data_dir(&self) -> &Path {
        &self.dir
    }

    fn token_path(&self, file_id: &FileId) -> PathBuf {
        self.dir.join(format!("{}.token", hex::encode(file_id)))
    }

    /// The stored file, opened from disk on first use.
    fn file(&self, file_id: &FileId) -> Result<Arc<StoredFile>> {
        let mut files = self.files.lock().unwrap();
        if let Some(f) = files.get(file_id) {
            return Ok(f.clone());
        }
        let name = hex::encode(file_id);
        let token_hash = std::fs::read_to_string(self.token_path(file_id)).map_err(|_| not_found(file_id))?;
        let tree = VersionedTree::open(&self.dir, &name)?;
        let f = Arc::new(StoredFile { tree, token_hash: token_hash.trim().to_owned() });
        files.insert(*file_id, f.clone());
        Ok(f)
    }

    fn owned_file(&self, file_id: &FileId, token: &str) -> Result<Arc<StoredFile>> {
        let f = self.file(file_id)?;
        if token_hash(token) != f.token_hash {
            return Err(Error::Remote { code: ErrorCode::Auth, detail: "bad token".into() });
        }
        Ok(f)
    }

    pub fn upload(&self, req: Upload) -> Result<Ack> {
        let mut files = self.files.lock().unwrap();
        let name = hex::encode(req.file_id);
        if files.contains_key(&req.file_id) || store_paths(&self.dir, &name)[2].exists() {
            return Err(Error::Remote { code: ErrorCode::Conflict, detail: format!("file {name} already exists") });
        }
        let t = req.min_degree.unwrap_or(DEFAULT_MIN_DEGREE);
        let blocks: Vec<_> = req.blocks.into_iter().map(|b| (b.block, b.digest)).collect();
        let tree = VersionedTree::create(&self.dir, &name, t, &blocks)?;
        let token_hash = token_hash(&req.token);
        std::fs::write(self.token_path(&req.file_id), &token_hash).map_err(ebtree_core::Error::from)?;
        let ack = ack(req.file_id, &tree.latest(), blocks.len() as u64);
        files.insert(req.file_id, Arc::new(StoredFile { tree, token_hash }));
        Ok(ack)
    }

    pub fn mutate(&self, kind: MutationKind, req: Mutate) -> Result<Ack> {
        let f = self.owned_file(&req.file_id, &req.token)?;
        let missing = || Error::Core(ebtree_core::Error::Codec(format!("{kind:?} needs a block")));
        let m = match kind {
            MutationKind::Insert => {
                let b = req.block.ok_or_else(missing)?;
                Mutation::Insert { position: req.position, block: b.block, digest: b.digest }
            }
            MutationKind::Update => {
                let b = req.block.ok_or_else(missing)?;
                Mutation::Update { position: req.position, block: b.block, digest: b.digest }
            }
            MutationKind::Delete => Mutation::Delete { position: req.position },
        };
        let rec = f.tree.apply(req.expected_version, m)?;
        let n = f.tree.load_version(rec.version)?.len();
        Ok(ack(req.file_id, &rec, n))
    }

    pub fn get(&self, req: Get) -> Result<ProofBundle> {
        let f = self.owned_file(&req.file_id, &req.token)?;
        let rec = match req.version {
            Some(v) => f.tree.record(v)?,
            None => f.tree.latest(),
        };
        let tree = f.tree.load_version(rec.version)?;
        let proof = f.tree.prove_in(&tree, req.position)?;
        Ok(ProofBundle {
            file_id: req.file_id,
            version: rec.version,
            root_digest: rec.root_digest,
            block_count: tree.len(),
            proofs: vec![proof],
        })
    }

    pub fn challenge(&self, ch: &Challenge) -> Result<ProofBundle> {
        let f = self.file(&ch.file_id)?;
        handle_challenge(&f.tree, ch)
    }

    /// Version records of a stored file.
    pub fn versions(&self, file_id: &FileId) -> Result<Vec<VersionRecord>> {
        Ok(self.file(file_id)?.tree.records())
    }

    /// Fault injection: flips one byte of the stored block at `rank` of the
    /// latest version, rewriting the record checksum so reads still succeed.
    pub fn corrupt_block(&self, file_id: &FileId, rank: u64, byte: usize) -> Result<()> {
        let f = self.file(file_id)?;
        let entry = f.tree.tree()?.get(f.tree.nodes(), rank)?;
        let [_, blocks, _] = store_paths(&self.dir, &hex::encode(file_id));
        corrupt_record(&blocks, entry.block.0, byte, true)?;
        Ok(())
    }
}

fn ack(file_id: FileId, rec: &VersionRecord, block_count: u64) -> Ack {
    Ack {
        file_id,
        version: rec.version,
        root_digest: rec.root_digest,
        commit: rec.commit,
        block_count,
        verdict: None,
    }
}

fn reply<T>(r: Result<T>, wrap: impl FnOnce(T) -> Message) -> Message {
    match r {
        Ok(v) => wrap(v),
        Err(Error::Remote { code, detail }) => Message::err(code, detail),
        Err(e) => Message::err(e.code(), e.to_string()),
    }
}

impl Handler for Server {
    fn handle(&self, msg: Message) -> Message {
        match msg {
            Message::Upload(u) => reply(self.upload(u), Message::Ack),
            Message::Insert(m) => reply(self.mutate(MutationKind::Insert, m), Message::Ack),
            Message::Update(m) => reply(self.mutate(MutationKind::Update, m), Message::Ack),
            Message::Delete(m) => reply(self.mutate(MutationKind::Delete, m), Message::Ack),
            Message::Get(g) => reply(self.get(g), Message::Proof),
            Message::Challenge(c) => reply(self.challenge(&c), Message::Proof),
            other => Message::err(ErrorCode::Malformed, format!("server does not accept {}", other.kind())),
        }
    }
}
