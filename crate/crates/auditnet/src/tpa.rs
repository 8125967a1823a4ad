//! Third-party auditor: holds each file's manifest and seed, issues fresh
//! challenges to the storage server and verifies the returned bundles.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Duration;

use ebtree_core::filepipe::{FileId, FileManifest};
use ebtree_core::Seed;

use crate::audit::{fresh_nonce, verify_bundle, Failure, Verdict};
use crate::error::{Error, Result};
use crate::service::Handler;
use crate::wire::{Ack, Challenge, Connection, ErrorCode, ManifestPush, Message};

const CONNECT_ATTEMPTS: u32 = 3;

#[derive(Clone)]
struct Held {
    manifest: FileManifest,
    seed: Seed,
}

pub struct Tpa {
    server_addr: String,
    dir: Option<PathBuf>,
    files: Mutex<HashMap<FileId, Held>>,
}

impl Tpa {
    pub fn new(server_addr: impl Into<String>) -> Self {
        Tpa { server_addr: server_addr.into(), dir: None, files: Mutex::new(HashMap::new()) }
    }

    /// An auditor that keeps manifests and seeds under `dir` and reloads
    /// them on start.
    pub fn with_dir(server_addr: impl Into<String>, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(ebtree_core::Error::from)?;
        let mut files = HashMap::new();
        for entry in std::fs::read_dir(&dir).map_err(ebtree_core::Error::from)? {
            let path = entry.map_err(ebtree_core::Error::from)?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
            let Some(stem) = name.strip_suffix(".manifest.json") else { continue };
            let manifest = FileManifest::load(&path)?;
            let seed_text = std::fs::read_to_string(dir.join(format!("{stem}.seed"))).map_err(ebtree_core::Error::from)?;
            files.insert(manifest.file_id, Held { manifest, seed: Seed::from_hex(&seed_text)? });
        }
        Ok(Tpa { server_addr: server_addr.into(), dir: Some(dir), files: Mutex::new(files) })
    }

    pub fn manifest(&self, file_id: &FileId) -> Option<FileManifest> {
        self.files.lock().unwrap().get(file_id).map(|h| h.manifest.clone())
    }

    /// Installs or refreshes a manifest. Older versions than the one held
    /// are refused.
    pub fn accept_manifest(&self, push: ManifestPush) -> Result<Ack> {
        let m = push.manifest;
        let mut files = self.files.lock().unwrap();
        let seed = match (&push.seed, files.get(&m.file_id)) {
            (Some(s), _) => Seed::from_hex(s)?,
            (None, Some(h)) => h.seed.clone(),
            (None, None) => {
                return Err(Error::Remote { code: ErrorCode::Malformed, detail: "first manifest must carry the seed".into() })
            }
        };
        if seed.fingerprint() != m.seed_fingerprint {
            return Err(Error::Remote { code: ErrorCode::Auth, detail: "seed does not match the manifest fingerprint".into() });
        }
        if let Some(h) = files.get(&m.file_id) {
            if m.version < h.manifest.version {
                return Err(Error::Remote {
                    code: ErrorCode::Conflict,
                    detail: format!("manifest version {} is older than held version {}", m.version, h.manifest.version),
                });
            }
        }
        if let Some(dir) = &self.dir {
            let stem = m.file_id_hex();
            m.save(&FileManifest::path_for(dir, &stem))?;
            std::fs::write(dir.join(format!("{stem}.seed")), seed.to_hex()).map_err(ebtree_core::Error::from)?;
        }
        let ack = Ack {
            file_id: m.file_id,
            version: m.version,
            root_digest: m.root_digest,
            commit: m.commit,
            block_count: m.block_count,
            verdict: None,
        };
        files.insert(m.file_id, Held { manifest: m, seed });
        Ok(ack)
    }

    fn connect(&self) -> Result<Connection> {
        let mut last = None;
        for attempt in 0..CONNECT_ATTEMPTS {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(50 << attempt));
            }
            match Connection::connect(&self.server_addr) {
                Ok(c) => return Ok(c),
                Err(e) => last = Some(e),
            }
        }
        Err(last.unwrap())
    }

    /// One audit of `file_id` with `k` sampled ranks against the latest
    /// version the server holds.
    pub fn run_audit(&self, file_id: &FileId, k: u32) -> Result<Verdict> {
        let held = self
            .files
            .lock()
            .unwrap()
            .get(file_id)
            .cloned()
            .ok_or_else(|| ebtree_core::Error::NotFound(format!("no manifest for {}", hex::encode(file_id))))?;
        let nonce = fresh_nonce();
        let challenge = Message::Challenge(Challenge { file_id: *file_id, version: None, nonce: Some(nonce), k });
        let reply = self.connect().and_then(|mut c| c.request(&challenge));
        Ok(match reply {
            Ok(Message::Proof(bundle)) => verify_bundle(&held.manifest, &held.seed, &nonce, k, &bundle),
            Ok(other) => Verdict::Fail(Failure::Protocol { detail: format!("unexpected {} reply", other.kind()) }),
            Err(Error::Remote { code, detail }) => Verdict::Fail(Failure::Server { detail: format!("{code}: {detail}") }),
            Err(Error::Protocol(detail)) => Verdict::Fail(Failure::Protocol { detail }),
            Err(e) => Verdict::Fail(Failure::Transport { detail: e.to_string() }),
        })
    }
}

impl Handler for Tpa {
    fn handle(&self, msg: Message) -> Message {
        let result = match msg {
            Message::Manifest(push) => self.accept_manifest(push),
            Message::Challenge(Challenge { nonce: Some(_), .. }) => {
                return Message::err(ErrorCode::Malformed, "auditor requests carry no nonce");
            }
            Message::Challenge(ch) => self.run_audit(&ch.file_id, ch.k).map(|verdict| {
                let m = self.manifest(&ch.file_id).expect("audited file has a manifest");
                Ack {
                    file_id: m.file_id,
                    version: m.version,
                    root_digest: m.root_digest,
                    commit: m.commit,
                    block_count: m.block_count,
                    verdict: Some(verdict),
                }
            }),
            other => return Message::err(ErrorCode::Malformed, format!("auditor does not accept {}", other.kind())),
        };
        match result {
            Ok(ack) => Message::Ack(ack),
            Err(Error::Remote { code, detail }) => Message::err(code, detail),
            Err(e) => Message::err(e.code(), e.to_string()),
        }
    }
}
