//! Client side: raw protocol calls plus [`FileSession`], which keeps the
//! manifest in step with every acknowledged mutation.

use ebtree_core::filepipe::{build_upload, decrypt_block, encrypt_block, CipherBlock, FileId, FileKey, FileManifest};
use ebtree_core::versionstore::{chain_commit, OpDescriptor};
use ebtree_core::{block_digest, verify_proof_at, AuditProof, Digest32, Seed};

use crate::audit::Verdict;
use crate::error::{Error, Result};
use crate::wire::{
    Ack, Challenge, Connection, Get, ManifestPush, Message, Mutate, ProofBundle, Upload, WireBlock, NONCE_LEN,
};

fn unexpected(what: &str, got: &Message) -> Error {
    Error::Protocol(format!("expected {what}, got {}", got.kind()))
}

fn expect_ack(reply: Message) -> Result<Ack> {
    match reply {
        Message::Ack(a) => Ok(a),
        other => Err(unexpected("ACK", &other)),
    }
}

fn expect_proof(reply: Message) -> Result<ProofBundle> {
    match reply {
        Message::Proof(p) => Ok(p),
        other => Err(unexpected("PROOF", &other)),
    }
}

/// A connection to a storage server on behalf of one owner token.
pub struct Client {
    conn: Connection,
    token: String,
}

impl Client {
    pub fn connect(addr: &str, token: impl Into<String>) -> Result<Self> {
        Ok(Client { conn: Connection::connect(addr)?, token: token.into() })
    }

    pub fn upload(&mut self, file_id: FileId, blocks: &[(Vec<u8>, Digest32)], min_degree: Option<usize>) -> Result<Ack> {
        let msg = Message::Upload(Upload {
            file_id,
            token: self.token.clone(),
            min_degree,
            blocks: blocks.iter().map(|(b, d)| WireBlock { block: b.clone(), digest: *d }).collect(),
        });
        expect_ack(self.conn.request(&msg)?)
    }

    fn mutate(&mut self, file_id: FileId, expected: Option<u64>, position: u64, block: Option<WireBlock>) -> Mutate {
        Mutate { file_id, token: self.token.clone(), expected_version: expected, position, block }
    }

    pub fn insert(&mut self, file_id: FileId, expected: Option<u64>, position: u64, block: Vec<u8>, digest: Digest32) -> Result<Ack> {
        let m = self.mutate(file_id, expected, position, Some(WireBlock { block, digest }));
        expect_ack(self.conn.request(&Message::Insert(m))?)
    }

    pub fn update(&mut self, file_id: FileId, expected: Option<u64>, position: u64, block: Vec<u8>, digest: Digest32) -> Result<Ack> {
        let m = self.mutate(file_id, expected, position, Some(WireBlock { block, digest }));
        expect_ack(self.conn.request(&Message::Update(m))?)
    }

    pub fn delete(&mut self, file_id: FileId, expected: Option<u64>, position: u64) -> Result<Ack> {
        let m = self.mutate(file_id, expected, position, None);
        expect_ack(self.conn.request(&Message::Delete(m))?)
    }

    pub fn get(&mut self, file_id: FileId, version: Option<u64>, position: u64) -> Result<ProofBundle> {
        let msg = Message::Get(Get { file_id, token: self.token.clone(), version, position });
        expect_proof(self.conn.request(&msg)?)
    }

    pub fn challenge(&mut self, file_id: FileId, version: Option<u64>, nonce: [u8; NONCE_LEN], k: u32) -> Result<ProofBundle> {
        let msg = Message::Challenge(Challenge { file_id, version, nonce: Some(nonce), k });
        expect_proof(self.conn.request(&msg)?)
    }
}

/// Hands a manifest (and, the first time, the seed) to an auditor.
pub fn push_manifest(tpa_addr: &str, manifest: &FileManifest, seed: Option<&Seed>) -> Result<Ack> {
    let msg = Message::Manifest(ManifestPush { manifest: manifest.clone(), seed: seed.map(Seed::to_hex) });
    expect_ack(Connection::connect(tpa_addr)?.request(&msg)?)
}

/// Asks an auditor to audit `file_id` now.
pub fn request_audit(tpa_addr: &str, file_id: FileId, k: u32) -> Result<Verdict> {
    let msg = Message::Challenge(Challenge { file_id, version: None, nonce: None, k });
    let ack = expect_ack(Connection::connect(tpa_addr)?.request(&msg)?)?;
    ack.verdict.ok_or_else(|| Error::Protocol("auditor ACK without a verdict".into()))
}

/// The owner's view of one stored file: manifest, file key and seed.
pub struct FileSession {
    pub manifest: FileManifest,
    pub key: FileKey,
    pub seed: Seed,
}

impl FileSession {
    /// Encrypts and uploads `data`, and checks the server built the tree the
    /// client expects.
    pub fn upload(
        client: &mut Client,
        file_id: FileId,
        data: &[u8],
        block_size: usize,
        min_degree: usize,
        key: FileKey,
        seed: Seed,
    ) -> Result<Self> {
        let up = build_upload(file_id, data, block_size, &key, &seed, min_degree)?;
        let ack = client.upload(file_id, &up.blocks, Some(min_degree))?;
        if ack.version != 0 || ack.root_digest != up.manifest.root_digest || ack.commit != up.manifest.commit {
            return Err(Error::Verification(format!(
                "server built root {} at version {}, expected {} at version 0",
                ack.root_digest, ack.version, up.manifest.root_digest
            )));
        }
        Ok(FileSession { manifest: up.manifest, key, seed })
    }

    pub fn file_id(&self) -> FileId {
        self.manifest.file_id
    }

    fn seal(&mut self, position: u64, plaintext: &[u8]) -> Result<(Vec<u8>, Digest32)> {
        if plaintext.len() as u64 > self.manifest.block_size {
            return Err(ebtree_core::Error::Config(format!(
                "block of {} bytes exceeds block size {}",
                plaintext.len(),
                self.manifest.block_size
            ))
            .into());
        }
        // Burned even if the server rejects the mutation.
        self.manifest.op_counter += 1;
        let cb = encrypt_block(&self.key, &self.manifest.file_id, position, self.manifest.op_counter, plaintext)?;
        let bytes = cb.to_bytes();
        let d = block_digest(&self.seed, &bytes);
        Ok((bytes, d))
    }

    /// Checks `ack` extends the manifest's chain by `op` and records it.
    fn absorb(&mut self, ack: Ack, op: OpDescriptor, block_delta: i64) -> Result<Ack> {
        let m = &self.manifest;
        let want_count = (m.block_count as i64 + block_delta) as u64;
        if ack.version != m.version + 1
            || ack.commit != chain_commit(&m.commit, &ack.root_digest, &op)
            || ack.block_count != want_count
        {
            return Err(Error::Verification(format!(
                "ack for version {} does not extend version {} by {op}",
                ack.version, m.version
            )));
        }
        self.manifest.apply_ack(ack.version, ack.root_digest, ack.commit, ack.block_count);
        Ok(ack)
    }

    pub fn insert(&mut self, client: &mut Client, position: u64, plaintext: &[u8]) -> Result<Ack> {
        let (block, digest) = self.seal(position, plaintext)?;
        let ack = client.insert(self.file_id(), Some(self.manifest.version), position, block, digest)?;
        self.absorb(ack, OpDescriptor::Insert(position), 1)
    }

    pub fn update(&mut self, client: &mut Client, position: u64, plaintext: &[u8]) -> Result<Ack> {
        let (block, digest) = self.seal(position, plaintext)?;
        let ack = client.update(self.file_id(), Some(self.manifest.version), position, block, digest)?;
        self.absorb(ack, OpDescriptor::Update(position), 0)
    }

    pub fn delete(&mut self, client: &mut Client, position: u64) -> Result<Ack> {
        let ack = client.delete(self.file_id(), Some(self.manifest.version), position)?;
        self.absorb(ack, OpDescriptor::Delete(position), -1)
    }

    /// Fetches, verifies and decrypts the block at `position` of the
    /// manifest's version.
    pub fn get(&self, client: &mut Client, position: u64) -> Result<Vec<u8>> {
        let bundle = client.get(self.file_id(), Some(self.manifest.version), position)?;
        let proof = self.check_single(&bundle, position)?;
        Ok(decrypt_block(&self.key, &CipherBlock::from_bytes(&proof.block)?)?)
    }

    fn check_single<'a>(&self, bundle: &'a ProofBundle, position: u64) -> Result<&'a AuditProof> {
        let [proof] = bundle.proofs.as_slice() else {
            return Err(Error::Protocol(format!("expected one proof, got {}", bundle.proofs.len())));
        };
        if bundle.root_digest != self.manifest.root_digest {
            return Err(Error::Verification(format!("server answered from root {}", bundle.root_digest)));
        }
        verify_proof_at(proof, &self.seed, &self.manifest.root_digest, position)
            .map_err(|e| Error::Verification(format!("rank {position}: {e}")))?;
        Ok(proof)
    }

    /// Every block in order, verified and decrypted.
    pub fn download(&self, client: &mut Client) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for p in 1..=self.manifest.block_count {
            out.extend(self.get(client, p)?);
        }
        Ok(out)
    }
}
