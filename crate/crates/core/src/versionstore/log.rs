//! Append-only record files and the file-backed node and block stores.
//!
//! Every record is framed as `u32_be(len) || payload || u32_be(crc32(payload))`
//! and addressed by the byte offset of its frame. A trailing partial frame
//! (a crashed append) is ignored on open and overwritten by the next write.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use crate::error::{Error, Result};
use crate::node::{BlockRef, Node, NodeRef};
use crate::store::{BlockStore, NodeStore};

const FRAME_OVERHEAD: u64 = 8;

pub struct RecordLog {
    path: PathBuf,
    reader: File,
    writer: Mutex<File>,
    end: AtomicU64,
    records: AtomicU64,
}

impl RecordLog {
    /// Opens (creating if needed) the log at `path`, dropping any trailing
    /// partial frame.
    pub fn open(path: &Path) -> Result<Self> {
        let mut writer = OpenOptions::new().read(true).write(true).create(true).truncate(false).open(path)?;
        let reader = File::open(path)?;
        let file_len = writer.metadata()?.len();
        let (end, records) = scan_frames(&reader, file_len)?;
        if end != file_len {
            writer.set_len(end)?;
        }
        writer.seek(SeekFrom::Start(end))?;
        Ok(RecordLog {
            path: path.to_owned(),
            reader,
            writer: Mutex::new(writer),
            end: AtomicU64::new(end),
            records: AtomicU64::new(records),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends one record and returns its offset. Not durable until [`sync`](Self::sync).
    pub fn append(&self, payload: &[u8]) -> Result<u64> {
        let len = u32::try_from(payload.len()).map_err(|_| Error::Codec("record larger than 4 GiB".into()))?;
        let mut frame = Vec::with_capacity(payload.len() + FRAME_OVERHEAD as usize);
        frame.extend_from_slice(&len.to_be_bytes());
        frame.extend_from_slice(payload);
        frame.extend_from_slice(&crc32fast::hash(payload).to_be_bytes());
        let mut w = self.writer.lock().unwrap();
        let offset = self.end.load(Ordering::Acquire);
        w.write_all(&frame)?;
        self.end.store(offset + frame.len() as u64, Ordering::Release);
        self.records.fetch_add(1, Ordering::Relaxed);
        Ok(offset)
    }

    pub fn sync(&self) -> Result<()> {
        let w = self.writer.lock().unwrap();
        w.sync_data()?;
        Ok(())
    }

    pub fn read(&self, offset: u64) -> Result<Vec<u8>> {
        let end = self.end.load(Ordering::Acquire);
        read_frame(&self.reader, offset, end)
    }

    pub fn record_count(&self) -> u64 {
        self.records.load(Ordering::Relaxed)
    }

    pub fn end(&self) -> u64 {
        self.end.load(Ordering::Acquire)
    }

    /// Offsets of all complete records, in order.
    pub fn offsets(&self) -> Result<Vec<u64>> {
        frame_offsets(&self.reader, self.end())
    }
}

fn read_frame(file: &File, offset: u64, end: u64) -> Result<Vec<u8>> {
    if offset + FRAME_OVERHEAD > end {
        return Err(Error::NotFound(format!("record at offset {offset}")));
    }
    let mut len = [0u8; 4];
    file.read_exact_at(&mut len, offset)?;
    let len = u32::from_be_bytes(len) as u64;
    if offset + FRAME_OVERHEAD + len > end {
        return Err(Error::Corrupt(format!("record at offset {offset} overruns the log")));
    }
    let mut buf = vec![0u8; len as usize + 4];
    file.read_exact_at(&mut buf, offset + 4)?;
    let crc = u32::from_be_bytes(buf[len as usize..].try_into().unwrap());
    buf.truncate(len as usize);
    if crc32fast::hash(&buf) != crc {
        return Err(Error::Corrupt(format!("checksum mismatch in record at offset {offset}")));
    }
    Ok(buf)
}

fn frame_offsets(file: &File, end: u64) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    let mut at = 0u64;
    let mut len = [0u8; 4];
    while at + FRAME_OVERHEAD <= end {
        file.read_exact_at(&mut len, at)?;
        let next = at + FRAME_OVERHEAD + u32::from_be_bytes(len) as u64;
        if next > end {
            break;
        }
        out.push(at);
        at = next;
    }
    Ok(out)
}

/// Walks frame headers and returns `(end of last complete frame, frame count)`.
fn scan_frames(file: &File, file_len: u64) -> Result<(u64, u64)> {
    let offsets = frame_offsets(file, file_len)?;
    let end = match offsets.last() {
        Some(&last) => {
            let mut len = [0u8; 4];
            file.read_exact_at(&mut len, last)?;
            last + FRAME_OVERHEAD + u32::from_be_bytes(len) as u64
        }
        None => 0,
    };
    Ok((end, offsets.len() as u64))
}

/// Fault-injection hook: XOR one payload byte of the record at `offset`
/// directly in the file. With `fix_crc` the frame checksum is recomputed,
/// modelling a deliberate rewrite rather than bit rot.
pub fn corrupt_record(path: &Path, offset: u64, byte: usize, fix_crc: bool) -> Result<()> {
    let file = OpenOptions::new().read(true).write(true).open(path)?;
    let end = file.metadata()?.len();
    let mut len = [0u8; 4];
    file.read_exact_at(&mut len, offset)?;
    let len = u32::from_be_bytes(len) as usize;
    if len == 0 || offset + FRAME_OVERHEAD + len as u64 > end {
        return Err(Error::NotFound(format!("record at offset {offset}")));
    }
    let mut payload = vec![0u8; len];
    file.read_exact_at(&mut payload, offset + 4)?;
    payload[byte % len] ^= 0x01;
    file.write_all_at(&payload, offset + 4)?;
    if fix_crc {
        file.write_all_at(&crc32fast::hash(&payload).to_be_bytes(), offset + 4 + len as u64)?;
    }
    file.sync_data()?;
    Ok(())
}

const NODE_MAGIC: &[u8; 4] = b"EBTN";

/// Node store over a [`RecordLog`]. The first record is a header carrying
/// the tree's minimum degree; node refs are frame offsets. Decoded nodes
/// are cached.
pub struct FileNodeStore {
    log: RecordLog,
    cache: RwLock<HashMap<u64, Arc<Node>>>,
    t: usize,
}

impl FileNodeStore {
    /// Opens an existing store, or creates one for minimum degree `t`.
    pub fn open(path: &Path, t: Option<usize>) -> Result<Self> {
        if t.is_none() && !path.exists() {
            return Err(Error::NotFound(format!("node store {}", path.display())));
        }
        let log = RecordLog::open(path)?;
        let t = if log.record_count() == 0 {
            let t = t.ok_or_else(|| Error::NotFound(format!("node store {}", path.display())))?;
            let mut header = NODE_MAGIC.to_vec();
            header.extend_from_slice(&(t as u32).to_be_bytes());
            log.append(&header)?;
            log.sync()?;
            t
        } else {
            let header = log.read(0)?;
            if header.len() != 8 || &header[..4] != NODE_MAGIC {
                return Err(Error::Corrupt(format!("bad node store header in {}", path.display())));
            }
            u32::from_be_bytes(header[4..8].try_into().unwrap()) as usize
        };
        Ok(FileNodeStore { log, cache: RwLock::new(HashMap::new()), t })
    }

    pub fn min_degree(&self) -> usize {
        self.t
    }

    pub fn sync(&self) -> Result<()> {
        self.log.sync()
    }

    pub fn path(&self) -> &Path {
        self.log.path()
    }

    pub fn drop_cache(&self) {
        self.cache.write().unwrap().clear();
    }
}

impl NodeStore for FileNodeStore {
    fn get(&self, r: NodeRef) -> Result<Arc<Node>> {
        if let Some(n) = self.cache.read().unwrap().get(&r.0) {
            return Ok(n.clone());
        }
        if r.0 == 0 {
            return Err(Error::NotFound("node 0 is the store header".into()));
        }
        let node = Arc::new(Node::decode(&self.log.read(r.0)?)?);
        self.cache.write().unwrap().insert(r.0, node.clone());
        Ok(node)
    }

    fn put(&self, node: Node) -> Result<NodeRef> {
        let offset = self.log.append(&node.encode())?;
        self.cache.write().unwrap().insert(offset, Arc::new(node));
        Ok(NodeRef(offset))
    }

    fn node_count(&self) -> u64 {
        self.log.record_count() - 1
    }
}

/// Block payload store over a [`RecordLog`]; payload reads go to the file
/// (and the OS page cache) every time.
pub struct FileBlockStore {
    log: RecordLog,
}

impl FileBlockStore {
    pub fn open(path: &Path) -> Result<Self> {
        Ok(FileBlockStore { log: RecordLog::open(path)? })
    }

    pub fn sync(&self) -> Result<()> {
        self.log.sync()
    }

    pub fn path(&self) -> &Path {
        self.log.path()
    }
}

impl BlockStore for FileBlockStore {
    fn get_block(&self, r: BlockRef) -> Result<Vec<u8>> {
        self.log.read(r.0)
    }

    fn put_block(&self, bytes: &[u8]) -> Result<BlockRef> {
        Ok(BlockRef(self.log.append(bytes)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::node::Entry;
    use crate::Digest32;

    #[test]
    fn append_read_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.log");
        let log = RecordLog::open(&path).unwrap();
        let a = log.append(b"hello").unwrap();
        let b = log.append(b"").unwrap();
        let c = log.append(b"world!").unwrap();
        assert_eq!((a, b, c), (0, 13, 21));
        log.sync().unwrap();
        drop(log);
        let log = RecordLog::open(&path).unwrap();
        assert_eq!(log.record_count(), 3);
        assert_eq!(log.read(c).unwrap(), b"world!");
        assert_eq!(log.offsets().unwrap(), vec![0, 13, 21]);
    }

    #[test]
    fn trailing_partial_frame_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.log");
        let log = RecordLog::open(&path).unwrap();
        log.append(b"complete").unwrap();
        drop(log);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(&[0, 0, 0, 50, 1, 2, 3]).unwrap();
        drop(f);
        let log = RecordLog::open(&path).unwrap();
        assert_eq!(log.record_count(), 1);
        let next = log.append(b"next").unwrap();
        assert_eq!(next, 16);
        assert_eq!(log.read(next).unwrap(), b"next");
    }

    #[test]
    fn checksum_detects_bit_rot() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.log");
        let log = RecordLog::open(&path).unwrap();
        let at = log.append(b"payload").unwrap();
        log.sync().unwrap();
        corrupt_record(&path, at, 2, false).unwrap();
        assert!(matches!(log.read(at), Err(Error::Corrupt(_))));
        corrupt_record(&path, at, 2, true).unwrap();
        // Flipped back and checksum rewritten: readable again.
        assert_eq!(log.read(at).unwrap(), b"payload");
    }

    #[test]
    fn node_store_persists_degree_and_nodes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.nodes");
        let store = FileNodeStore::open(&path, Some(5)).unwrap();
        let node = Node::leaf(vec![Entry { block: BlockRef(3), digest: Digest32([7; 32]) }]);
        let r = store.put(node.clone()).unwrap();
        store.sync().unwrap();
        drop(store);
        assert!(FileNodeStore::open(&dir.path().join("missing.nodes"), None).is_err());
        let store = FileNodeStore::open(&path, None).unwrap();
        assert_eq!(store.min_degree(), 5);
        assert_eq!(store.node_count(), 1);
        assert_eq!(*store.get(r).unwrap(), node);
    }
}
