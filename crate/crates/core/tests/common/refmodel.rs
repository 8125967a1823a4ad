//! Independent reference B-tree for cross-checking: owned nodes mutated in
//! place, subtree sizes recounted on demand, digests rebuilt from raw bytes
//! with `sha2` on every query. Shares no code with the crate under test.

use sha2::{Digest, Sha256};

#[derive(Clone, Default)]
struct RNode {
    blocks: Vec<[u8; 32]>,
    kids: Vec<RNode>,
}

impl RNode {
    fn size(&self) -> u64 {
        self.blocks.len() as u64 + self.kids.iter().map(RNode::size).sum::<u64>()
    }

    fn is_leaf(&self) -> bool {
        self.kids.is_empty()
    }

    fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update([if self.is_leaf() { 0u8 } else { 1u8 }]);
        h.update((self.blocks.len() as u32).to_be_bytes());
        if self.is_leaf() {
            for b in &self.blocks {
                h.update(b);
            }
        } else {
            for (i, k) in self.kids.iter().enumerate() {
                h.update(k.digest());
                if let Some(b) = self.blocks.get(i) {
                    h.update(b);
                }
            }
        }
        h.finalize().into()
    }

    fn walk(&self, out: &mut Vec<[u8; 32]>) {
        if self.is_leaf() {
            out.extend_from_slice(&self.blocks);
            return;
        }
        for (i, k) in self.kids.iter().enumerate() {
            k.walk(out);
            if let Some(b) = self.blocks.get(i) {
                out.push(*b);
            }
        }
    }

    /// `Ok(i)`: block i is at rank p. `Err((i, r))`: rank r inside kid i.
    fn locate(&self, p: u64) -> Result<usize, (usize, u64)> {
        if self.is_leaf() {
            return Ok(p as usize - 1);
        }
        let mut left = 0;
        for i in 0..self.kids.len() {
            let s = self.kids[i].size();
            if p <= left + s {
                return Err((i, p - left));
            }
            if p == left + s + 1 {
                return Ok(i);
            }
            left += s + 1;
        }
        panic!("rank {p} beyond subtree");
    }

    fn insert_slot(&self, p: u64) -> (usize, u64) {
        let mut left = 0;
        for i in 0..self.kids.len() {
            let s = self.kids[i].size();
            if p <= left + s + 1 {
                return (i, p - left);
            }
            left += s + 1;
        }
        panic!("insert rank {p} beyond subtree");
    }

    fn split_kid(&mut self, i: usize, t: usize) {
        let kid = &mut self.kids[i];
        let right_blocks = kid.blocks.split_off(t);
        let median = kid.blocks.pop().unwrap();
        let right_kids = if kid.is_leaf() { vec![] } else { kid.kids.split_off(t) };
        self.blocks.insert(i, median);
        self.kids.insert(i + 1, RNode { blocks: right_blocks, kids: right_kids });
    }

    fn insert_nonfull(&mut self, p: u64, d: [u8; 32], t: usize) {
        if self.is_leaf() {
            self.blocks.insert(p as usize - 1, d);
            return;
        }
        let (mut i, _) = self.insert_slot(p);
        if self.kids[i].blocks.len() == 2 * t - 1 {
            self.split_kid(i, t);
            i = self.insert_slot(p).0;
        }
        let r = self.insert_slot(p).1;
        self.kids[i].insert_nonfull(r, d, t);
    }

    fn merge(&mut self, i: usize) {
        let sep = self.blocks.remove(i);
        let right = self.kids.remove(i + 1);
        let left = &mut self.kids[i];
        left.blocks.push(sep);
        left.blocks.extend(right.blocks);
        left.kids.extend(right.kids);
    }

    fn fill(&mut self, i: usize, t: usize) {
        if i > 0 && self.kids[i - 1].blocks.len() >= t {
            let b = self.kids[i - 1].blocks.pop().unwrap();
            let k = self.kids[i - 1].kids.pop();
            let sep = std::mem::replace(&mut self.blocks[i - 1], b);
            self.kids[i].blocks.insert(0, sep);
            if let Some(k) = k {
                self.kids[i].kids.insert(0, k);
            }
        } else if i + 1 < self.kids.len() && self.kids[i + 1].blocks.len() >= t {
            let b = self.kids[i + 1].blocks.remove(0);
            let k = if self.kids[i + 1].is_leaf() { None } else { Some(self.kids[i + 1].kids.remove(0)) };
            let sep = std::mem::replace(&mut self.blocks[i], b);
            self.kids[i].blocks.push(sep);
            if let Some(k) = k {
                self.kids[i].kids.push(k);
            }
        } else if i > 0 {
            self.merge(i - 1);
        } else {
            self.merge(0);
        }
    }

    fn delete(&mut self, p: u64, t: usize) -> [u8; 32] {
        match self.locate(p) {
            Ok(i) if self.is_leaf() => self.blocks.remove(i),
            Ok(i) => {
                if self.kids[i].blocks.len() >= t {
                    let s = self.kids[i].size();
                    let pred = self.kids[i].delete(s, t);
                    std::mem::replace(&mut self.blocks[i], pred)
                } else if self.kids[i + 1].blocks.len() >= t {
                    let succ = self.kids[i + 1].delete(1, t);
                    std::mem::replace(&mut self.blocks[i], succ)
                } else {
                    let s = self.kids[i].size();
                    self.merge(i);
                    self.kids[i].delete(s + 1, t)
                }
            }
            Err((i, _)) => {
                if self.kids[i].blocks.len() < t {
                    self.fill(i, t);
                }
                match self.locate(p) {
                    Err((j, r)) => self.kids[j].delete(r, t),
                    Ok(_) => panic!("target surfaced into the parent during fill"),
                }
            }
        }
    }

    fn replace(&mut self, p: u64, d: [u8; 32]) {
        match self.locate(p) {
            Ok(i) => self.blocks[i] = d,
            Err((i, r)) => self.kids[i].replace(r, d),
        }
    }
}

/// Replays positional operations on a classic in-place B-tree.
pub struct RefTree {
    t: usize,
    root: RNode,
}

impl RefTree {
    pub fn new(t: usize) -> Self {
        RefTree { t, root: RNode::default() }
    }

    pub fn len(&self) -> u64 {
        self.root.size()
    }

    pub fn insert(&mut self, p: u64, d: [u8; 32]) {
        let t = self.t;
        if self.root.blocks.len() == 2 * t - 1 {
            let old = std::mem::take(&mut self.root);
            self.root.kids.push(old);
            self.root.split_kid(0, t);
        }
        self.root.insert_nonfull(p, d, t);
    }

    pub fn delete(&mut self, p: u64) -> [u8; 32] {
        let d = self.root.delete(p, self.t);
        if self.root.blocks.is_empty() && !self.root.is_leaf() {
            self.root = self.root.kids.pop().unwrap();
        }
        d
    }

    pub fn update(&mut self, p: u64, d: [u8; 32]) {
        self.root.replace(p, d);
    }

    pub fn sequence(&self) -> Vec<[u8; 32]> {
        let mut out = Vec::new();
        self.root.walk(&mut out);
        out
    }

    pub fn root_digest(&self) -> [u8; 32] {
        self.root.digest()
    }

    pub fn height(&self) -> usize {
        let mut h = 0;
        let mut n = &self.root;
        while let Some(k) = n.kids.first() {
            n = k;
            h += 1;
        }
        h
    }
}
