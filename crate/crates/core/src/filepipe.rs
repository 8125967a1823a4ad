//! Client-side file preparation: fixed-size chunking, per-block
//! AES-256-GCM, seeded digests over the ciphertext, and the manifest the
//! client shares with its auditor.

use std::path::{Path, PathBuf};

use aes_gcm::aead::{Aead, KeyInit};
use aes_gcm::{Aes256Gcm, Nonce};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::codec::block_digest;
use crate::digest::{sha256, Digest32, Seed};
use crate::error::{Error, Result};
use crate::node::{BlockRef, Entry};
use crate::store::MemStore;
use crate::tree::EBTree;
use crate::versionstore::VersionRecord;

pub const DEFAULT_BLOCK_SIZE: usize = 16 * 1024;
pub const NONCE_LEN: usize = 12;

pub type FileId = [u8; 16];

pub fn new_file_id() -> FileId {
    let mut id = [0u8; 16];
    rand::rngs::OsRng.fill_bytes(&mut id);
    id
}

/// Splits `bytes` into `ceil(len / block_size)` blocks; only the last may
/// be short.
pub fn chunk_file(bytes: &[u8], block_size: usize) -> Result<Vec<&[u8]>> {
    if block_size == 0 {
        return Err(Error::Config("block size must be at least 1".into()));
    }
    Ok(bytes.chunks(block_size).collect())
}

/// 32-byte AES-256 file key.
#[derive(Clone, PartialEq, Eq)]
pub struct FileKey([u8; 32]);

impl FileKey {
    pub fn generate() -> Self {
        let mut k = [0u8; 32];
        rand::rngs::OsRng.fill_bytes(&mut k);
        FileKey(k)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self> {
        let k: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::Config(format!("file key must be 32 bytes, got {}", bytes.len())))?;
        Ok(FileKey(k))
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let bytes = hex::decode(s.trim()).map_err(|e| Error::Config(format!("bad hex key: {e}")))?;
        Self::from_slice(&bytes)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl std::fmt::Debug for FileKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("FileKey(..)")
    }
}

/// An encrypted block as stored by the server: `nonce || ciphertext || tag`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CipherBlock {
    pub nonce: [u8; NONCE_LEN],
    pub ciphertext: Vec<u8>,
}

impl CipherBlock {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(NONCE_LEN + self.ciphertext.len());
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.ciphertext);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < NONCE_LEN + 16 {
            return Err(Error::Integrity("cipher block shorter than nonce and tag".into()));
        }
        Ok(CipherBlock {
            nonce: bytes[..NONCE_LEN].try_into().unwrap(),
            ciphertext: bytes[NONCE_LEN..].to_vec(),
        })
    }
}

/// First 12 bytes of `H(file_id || u64_be(ordinal) || u64_be(op_counter))`.
/// The op counter increases with every mutation, so no nonce repeats under
/// one key.
pub fn derive_nonce(file_id: &FileId, ordinal: u64, op_counter: u64) -> [u8; NONCE_LEN] {
    let h = sha256(&[file_id, &ordinal.to_be_bytes(), &op_counter.to_be_bytes()]);
    h.0[..NONCE_LEN].try_into().unwrap()
}

pub fn encrypt_block(key: &FileKey, file_id: &FileId, ordinal: u64, op_counter: u64, plaintext: &[u8]) -> Result<CipherBlock> {
    let cipher = Aes256Gcm::new_from_slice(&key.0).map_err(|e| Error::Config(e.to_string()))?;
    let nonce = derive_nonce(file_id, ordinal, op_counter);
    let ciphertext = cipher
        .encrypt(Nonce::from_slice(&nonce), plaintext)
        .map_err(|_| Error::Integrity("encryption failed".into()))?;
    Ok(CipherBlock { nonce, ciphertext })
}

pub fn decrypt_block(key: &FileKey, block: &CipherBlock) -> Result<Vec<u8>> {
    let cipher = Aes256Gcm::new_from_slice(&key.0).map_err(|e| Error::Config(e.to_string()))?;
    cipher
        .decrypt(Nonce::from_slice(&block.nonce), block.ciphertext.as_slice())
        .map_err(|_| Error::Integrity("block failed authentication".into()))
}

/// Client and auditor metadata for one stored file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FileManifest {
    #[serde(with = "crate::digest::hex_bytes")]
    pub file_id: FileId,
    pub block_size: u64,
    pub block_count: u64,
    pub version: u64,
    pub root_digest: Digest32,
    pub commit: Digest32,
    pub seed_fingerprint: Digest32,
    /// Mutations issued so far; feeds nonce derivation.
    pub op_counter: u64,
}

impl FileManifest {
    pub fn file_id_hex(&self) -> String {
        hex::encode(self.file_id)
    }

    /// Records an acknowledged version.
    pub fn apply_ack(&mut self, version: u64, root_digest: Digest32, commit: Digest32, block_count: u64) {
        self.version = version;
        self.root_digest = root_digest;
        self.commit = commit;
        self.block_count = block_count;
    }

    pub fn to_canonical_json(&self) -> String {
        canonical_json(self)
    }

    pub fn path_for(dir: &Path, name: &str) -> PathBuf {
        dir.join(format!("{name}.manifest.json"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, self.to_canonical_json())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::NotFound(format!("manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Codec(format!("manifest {}: {e}", path.display())))
    }
}

/// Canonical JSON: object keys sorted, no insignificant whitespace.
pub fn canonical_json<T: Serialize + ?Sized>(value: &T) -> String {
    // serde_json's Value map is ordered by key.
    let v = serde_json::to_value(value).expect("serializable value");
    serde_json::to_string(&v).expect("value to string")
}

/// Encrypted blocks with their seeded digests, plus the manifest describing
/// the tree the server is expected to build from them.
#[derive(Clone, Debug)]
pub struct Upload {
    pub blocks: Vec<(Vec<u8>, Digest32)>,
    pub manifest: FileManifest,
}

/// Chunks, encrypts and digests `file`. The manifest's root digest and
/// commit come from a local shadow build of the same tree, so the server's
/// acknowledgement can be checked against them.
pub fn build_upload(
    file_id: FileId,
    file: &[u8],
    block_size: usize,
    key: &FileKey,
    seed: &Seed,
    t: usize,
) -> Result<Upload> {
    let chunks = chunk_file(file, block_size)?;
    let mut blocks = Vec::with_capacity(chunks.len());
    for (i, chunk) in chunks.iter().enumerate() {
        let cb = encrypt_block(key, &file_id, i as u64 + 1, 0, chunk)?.to_bytes();
        let d = block_digest(seed, &cb);
        blocks.push((cb, d));
    }
    let root_digest = shadow_root(blocks.iter().map(|(_, d)| *d), t)?;
    let genesis = VersionRecord::genesis(crate::node::NodeRef(0), root_digest);
    let manifest = FileManifest {
        file_id,
        block_size: block_size as u64,
        block_count: blocks.len() as u64,
        version: 0,
        root_digest,
        commit: genesis.commit,
        seed_fingerprint: seed.fingerprint(),
        op_counter: 0,
    };
    Ok(Upload { blocks, manifest })
}

/// Root digest of a bulk-built tree over `digests`, computed locally.
pub fn shadow_root(digests: impl IntoIterator<Item = Digest32>, t: usize) -> Result<Digest32> {
    let entries: Vec<Entry> = digests
        .into_iter()
        .enumerate()
        .map(|(i, digest)| Entry { block: BlockRef(i as u64), digest })
        .collect();
    let store = MemStore::new();
    Ok(EBTree::build(&store, &entries, t)?.root_digest())
}
