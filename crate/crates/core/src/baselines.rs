//! Comparison structures: static binary and 8-ary Merkle hash trees, a
//! from-scratch EB-tree root oracle, and the keyed B-tree gap-exhaustion
//! simulation that motivates keyless ranks.

use crate::digest::{sha256, Digest32, TAG_PAD};
use crate::error::{Error, Result};
use crate::node::{BlockRef, Entry};
use crate::store::MemStore;
use crate::tree::EBTree;

/// Digest used for missing slots in a partially filled group, and as the
/// root of an empty tree.
pub fn pad_digest() -> Digest32 {
    sha256(&[&[TAG_PAD]])
}

fn hash_group(arity: usize, group: &[Digest32]) -> Digest32 {
    let pad = pad_digest();
    let mut buf = Vec::with_capacity(1 + 32 * arity);
    buf.push(arity as u8);
    for i in 0..arity {
        buf.extend_from_slice(group.get(i).unwrap_or(&pad).as_bytes());
    }
    sha256(&[&buf])
}

/// A static Merkle hash tree. Every level is kept so a single leaf can be
/// changed by recomputing its path.
#[derive(Clone, Debug)]
pub struct Mht {
    arity: usize,
    /// `levels[0]` are the leaves; the last level holds only the root.
    levels: Vec<Vec<Digest32>>,
}

/// Sibling groups from the leaf level upwards; each group holds the
/// `arity - 1` digests sharing a parent with the path node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MhtProof {
    pub leaf_index: usize,
    pub groups: Vec<Vec<Digest32>>,
}

impl MhtProof {
    pub fn byte_len(&self) -> usize {
        8 + self.groups.iter().map(|g| 32 * g.len()).sum::<usize>()
    }
}

impl Mht {
    pub fn build(digests: &[Digest32], arity: usize) -> Result<Self> {
        if arity != 2 && arity != 8 {
            return Err(Error::Config(format!("unsupported arity {arity}")));
        }
        let mut levels = vec![digests.to_vec()];
        if digests.is_empty() {
            levels.push(vec![pad_digest()]);
            return Ok(Mht { arity, levels });
        }
        loop {
            let next: Vec<Digest32> = levels.last().unwrap().chunks(arity).map(|g| hash_group(arity, g)).collect();
            let done = next.len() == 1;
            levels.push(next);
            if done {
                break;
            }
        }
        Ok(Mht { arity, levels })
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn len(&self) -> usize {
        self.levels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels[0].is_empty()
    }

    pub fn root(&self) -> Digest32 {
        self.levels.last().unwrap()[0]
    }

    pub fn leaves(&self) -> &[Digest32] {
        &self.levels[0]
    }

    pub fn prove(&self, leaf_index: usize) -> Result<MhtProof> {
        if leaf_index >= self.len() {
            return Err(Error::Range { pos: leaf_index as u64 + 1, max: self.len() as u64 });
        }
        let pad = pad_digest();
        let mut groups = Vec::with_capacity(self.levels.len() - 1);
        let mut idx = leaf_index;
        for level in &self.levels[..self.levels.len() - 1] {
            let start = idx - idx % self.arity;
            let group = (start..start + self.arity)
                .filter(|&j| j != idx)
                .map(|j| level.get(j).copied().unwrap_or(pad))
                .collect();
            groups.push(group);
            idx /= self.arity;
        }
        Ok(MhtProof { leaf_index, groups })
    }

    /// Replaces one leaf and recomputes only its path to the root.
    pub fn update_leaf(&mut self, leaf_index: usize, digest: Digest32) -> Result<()> {
        if leaf_index >= self.len() {
            return Err(Error::Range { pos: leaf_index as u64 + 1, max: self.len() as u64 });
        }
        self.levels[0][leaf_index] = digest;
        let mut idx = leaf_index;
        for l in 1..self.levels.len() {
            let start = idx - idx % self.arity;
            let end = (start + self.arity).min(self.levels[l - 1].len());
            let h = hash_group(self.arity, &self.levels[l - 1][start..end]);
            idx /= self.arity;
            self.levels[l][idx] = h;
        }
        Ok(())
    }
}

pub fn mht_verify(proof: &MhtProof, arity: usize, leaf: &Digest32, root: &Digest32) -> bool {
    if proof.groups.is_empty() || proof.groups.iter().any(|g| g.len() != arity - 1) {
        return false;
    }
    let mut h = *leaf;
    let mut idx = proof.leaf_index;
    let mut group = Vec::with_capacity(arity);
    for siblings in &proof.groups {
        let slot = idx % arity;
        group.clear();
        group.extend_from_slice(&siblings[..slot]);
        group.push(h);
        group.extend_from_slice(&siblings[slot..]);
        h = hash_group(arity, &group);
        idx /= arity;
    }
    idx == 0 && h == *root
}

/// Root digest of an EB-tree grown from empty by appending each digest in
/// turn.
pub fn naive_root_oracle(digests: &[Digest32], t: usize) -> Result<Digest32> {
    let store = MemStore::new();
    let mut tree = EBTree::empty(&store, t)?;
    for (i, d) in digests.iter().enumerate() {
        let entry = Entry { block: BlockRef(i as u64), digest: *d };
        tree = tree.insert(&store, tree.len() + 1, entry)?;
    }
    Ok(tree.root_digest())
}

/// Number of insertions an adversary needs to leave no integer key free
/// strictly between `lo` and `hi`, when each new key bisects the free range
/// and the adversary always continues into the smaller side.
pub fn key_exhaustion_demo(lo: i64, hi: i64) -> Result<u32> {
    if hi <= lo + 1 {
        return Err(Error::Config(format!("no free key between {lo} and {hi}")));
    }
    let mut free = (hi - lo - 1) as u64;
    let mut steps = 0;
    loop {
        steps += 1;
        let left = (free - 1) / 2;
        let right = free - 1 - left;
        let smaller = left.min(right);
        if smaller == 0 {
            return Ok(steps);
        }
        free = smaller;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::serialize_node;
    use crate::node::Node;

    fn leaves(n: usize) -> Vec<Digest32> {
        (0..n as u32).map(|i| sha256(&[b"leaf", &i.to_be_bytes()])).collect()
    }

    #[test]
    fn one_leaf_root() {
        for arity in [2usize, 8] {
            let d = leaves(1);
            let mht = Mht::build(&d, arity).unwrap();
            let mut buf = vec![arity as u8];
            buf.extend_from_slice(d[0].as_bytes());
            for _ in 1..arity {
                buf.extend_from_slice(pad_digest().as_bytes());
            }
            assert_eq!(mht.root(), sha256(&[&buf]));
            let proof = mht.prove(0).unwrap();
            assert_eq!(proof.groups.len(), 1);
            assert!(mht_verify(&proof, arity, &d[0], &mht.root()));
        }
        assert_eq!(Mht::build(&[], 8).unwrap().root(), pad_digest());
        assert!(Mht::build(&leaves(3), 4).is_err());
    }

    #[test]
    fn permutation_changes_root() {
        let d = leaves(10);
        let mut p = d.clone();
        p.swap(2, 7);
        for arity in [2, 8] {
            assert_ne!(Mht::build(&d, arity).unwrap().root(), Mht::build(&p, arity).unwrap().root());
        }
    }

    #[test]
    fn proofs_round_trip_and_have_log_length() {
        for arity in [2usize, 8] {
            for n in [1usize, 2, 3, 7, 8, 9, 63, 64, 65, 656] {
                let d = leaves(n);
                let mht = Mht::build(&d, arity).unwrap();
                let mut want = 0;
                while arity.pow(want) < n {
                    want += 1;
                }
                for i in 0..n {
                    let proof = mht.prove(i).unwrap();
                    assert_eq!(proof.groups.len(), (want as usize).max(1), "n={n} arity={arity}");
                    assert!(mht_verify(&proof, arity, &d[i], &mht.root()));
                    if n > 1 {
                        let mut wrong = proof.clone();
                        wrong.leaf_index = (i + 1) % n;
                        assert!(!mht_verify(&wrong, arity, &d[i], &mht.root()));
                    }
                }
            }
        }
        let mht = Mht::build(&leaves(656), 8).unwrap();
        assert_eq!(mht.prove(100).unwrap().groups.len(), 4);
    }

    #[test]
    fn path_update_matches_rebuild() {
        for arity in [2, 8] {
            let mut d = leaves(100);
            let mut mht = Mht::build(&d, arity).unwrap();
            for i in [0usize, 37, 99] {
                let nd = sha256(&[b"new", &[i as u8]]);
                d[i] = nd;
                mht.update_leaf(i, nd).unwrap();
                assert_eq!(mht.root(), Mht::build(&d, arity).unwrap().root());
            }
        }
    }

    #[test]
    fn naive_oracle_trivial_cases() {
        let empty = Node::leaf(vec![]);
        assert_eq!(naive_root_oracle(&[], 2).unwrap(), sha256(&[&serialize_node(&empty)]));
        let d = leaves(1);
        let one = Node::leaf(vec![Entry { block: BlockRef(0), digest: d[0] }]);
        assert_eq!(naive_root_oracle(&d, 8).unwrap(), sha256(&[&serialize_node(&one)]));
    }

    #[test]
    fn exhaustion_examples() {
        assert_eq!(key_exhaustion_demo(40, 47).unwrap(), 2);
        assert_eq!(key_exhaustion_demo(0, 2).unwrap(), 1);
        assert_eq!(key_exhaustion_demo(0, 4).unwrap(), 2);
        assert_eq!(key_exhaustion_demo(0, 8).unwrap(), 3);
        assert!(key_exhaustion_demo(5, 6).is_err());
    }
}
