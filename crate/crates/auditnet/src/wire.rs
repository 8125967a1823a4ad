//! Wire messages: one canonical JSON object per line, discriminated by
//! `type`. Byte fields are lowercase hex.

use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpStream;

use ebtree_core::digest::{hex_bytes, hex_vec};
use ebtree_core::filepipe::{canonical_json, FileId, FileManifest};
use ebtree_core::{AuditProof, Digest32};
use serde::{Deserialize, Serialize};

use crate::audit::Verdict;
use crate::error::{Error, Result};

pub const NONCE_LEN: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Message {
    Upload(Upload),
    Insert(Mutate),
    Delete(Mutate),
    Update(Mutate),
    Get(Get),
    Challenge(Challenge),
    Proof(ProofBundle),
    Ack(Ack),
    Err(ErrorReply),
    Manifest(ManifestPush),
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Upload(_) => "UPLOAD",
            Message::Insert(_) => "INSERT",
            Message::Delete(_) => "DELETE",
            Message::Update(_) => "UPDATE",
            Message::Get(_) => "GET",
            Message::Challenge(_) => "CHALLENGE",
            Message::Proof(_) => "PROOF",
            Message::Ack(_) => "ACK",
            Message::Err(_) => "ERR",
            Message::Manifest(_) => "MANIFEST",
        }
    }

    pub fn to_line(&self) -> String {
        let mut s = canonical_json(self);
        s.push('\n');
        s
    }

    pub fn from_line(line: &str) -> Result<Self> {
        serde_json::from_str(line.trim_end()).map_err(|e| Error::Protocol(format!("undecodable message: {e}")))
    }

    pub fn err(code: ErrorCode, detail: impl Into<String>) -> Self {
        Message::Err(ErrorReply { code, detail: detail.into() })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireBlock {
    #[serde(with = "hex_vec")]
    pub block: Vec<u8>,
    pub digest: Digest32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Upload {
    #[serde(with = "hex_bytes")]
    pub file_id: FileId,
    pub token: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_degree: Option<usize>,
    pub blocks: Vec<WireBlock>,
}

/// Body of INSERT, DELETE and UPDATE. `block` and `digest` are absent for
/// deletes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Mutate {
    #[serde(with = "hex_bytes")]
    pub file_id: FileId,
    pub token: String,
    /// Version the client believes is latest; a mismatch is a conflict.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_version: Option<u64>,
    pub position: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<WireBlock>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Get {
    #[serde(with = "hex_bytes")]
    pub file_id: FileId,
    pub token: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<u64>,
    pub position: u64,
}

/// Sent to a server with a nonce, it asks for proofs. Sent to an auditor
/// without one, it asks the auditor to run an audit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Challenge {
    #[serde(with = "hex_bytes")]
    pub file_id: FileId,
    /// `None` targets the latest version.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_nonce")]
    pub nonce: Option<[u8; NONCE_LEN]>,
    pub k: u32,
}

/// Proofs for one challenge (or one GET), with the version they prove.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProofBundle {
    #[serde(with = "hex_bytes")]
    pub file_id: FileId,
    pub version: u64,
    pub root_digest: Digest32,
    pub block_count: u64,
    pub proofs: Vec<AuditProof>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Ack {
    #[serde(with = "hex_bytes")]
    pub file_id: FileId,
    pub version: u64,
    pub root_digest: Digest32,
    pub commit: Digest32,
    pub block_count: u64,
    /// Present when an auditor reports an audit outcome.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    NotFound,
    Range,
    Conflict,
    Malformed,
    Auth,
}

impl std::fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ErrorCode::NotFound => "NOT_FOUND",
            ErrorCode::Range => "RANGE",
            ErrorCode::Conflict => "CONFLICT",
            ErrorCode::Malformed => "MALFORMED",
            ErrorCode::Auth => "AUTH",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorReply {
    pub code: ErrorCode,
    pub detail: String,
}

/// Manifest hand-off from the client to an auditor. The seed is needed to
/// recompute block digests; it may be omitted on refreshes once the auditor
/// holds it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestPush {
    pub manifest: FileManifest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<String>,
}

mod opt_nonce {
    use serde::{Deserialize, Deserializer, Serializer};

    use super::NONCE_LEN;

    pub fn serialize<S: Serializer>(v: &Option<[u8; NONCE_LEN]>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(n) => s.serialize_str(&hex::encode(n)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<[u8; NONCE_LEN]>, D::Error> {
        let Some(s) = Option::<String>::deserialize(d)? else {
            return Ok(None);
        };
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        let n: [u8; NONCE_LEN] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom(format!("nonce must be {NONCE_LEN} bytes")))?;
        Ok(Some(n))
    }
}

/// A line-framed message stream over TCP.
pub struct Connection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Connection {
    pub fn new(stream: TcpStream) -> io::Result<Self> {
        let writer = stream.try_clone()?;
        Ok(Connection { reader: BufReader::new(stream), writer })
    }

    pub fn connect(addr: &str) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(|e| Error::Transport(format!("connect {addr}: {e}")))?;
        stream.set_nodelay(true).ok();
        Connection::new(stream).map_err(|e| Error::Transport(e.to_string()))
    }

    pub fn send(&mut self, msg: &Message) -> Result<()> {
        self.writer
            .write_all(msg.to_line().as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| Error::Transport(format!("send: {e}")))
    }

    /// Next raw line, or `None` at end of stream.
    pub fn recv_line(&mut self) -> Result<Option<String>> {
        let mut line = String::new();
        match self.reader.read_line(&mut line) {
            Ok(0) => Ok(None),
            Ok(_) => Ok(Some(line)),
            Err(e) => Err(Error::Transport(format!("receive: {e}"))),
        }
    }

    pub fn recv(&mut self) -> Result<Message> {
        let line = self
            .recv_line()?
            .ok_or_else(|| Error::Transport("connection closed by peer".into()))?;
        Message::from_line(&line)
    }

    /// Sends `msg` and waits for the reply. ERR replies become [`Error::Remote`].
    pub fn request(&mut self, msg: &Message) -> Result<Message> {
        self.send(msg)?;
        match self.recv()? {
            Message::Err(e) => Err(Error::Remote { code: e.code, detail: e.detail }),
            reply => Ok(reply),
        }
    }
}
