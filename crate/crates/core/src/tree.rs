//! The rank-addressed B-tree.
//!
//! Blocks carry no keys. A node with blocks `B_1..B_n` and children
//! `C_1..C_n+1` orders its subtree as `C_1, B_1, C_2, ..., B_n, C_n+1`, and
//! each child link caches its subtree size, so the `p`-th block (1-based)
//! is found by accumulating sizes from the left.
//!
//! Every mutation copies the root-to-target path (plus any split, borrow or
//! merge products) into fresh nodes and returns a new [`EBTree`] handle.
//! Untouched subtrees are shared, and no stored node is ever rewritten, so
//! older handles stay valid forever.

use std::sync::Arc;

use crate::codec::{node_digest, Hole, SiblingPathEntry};
use crate::digest::Digest32;
use crate::error::{Error, Result};
use crate::node::{ChildLink, Entry, Node, NodeRef};
use crate::store::NodeStore;

pub const DEFAULT_MIN_DEGREE: usize = 8;

/// Outcome of routing a rank through one node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Route {
    /// The node's `i`-th block (0-based) is the target.
    Block(usize),
    /// The target lies in child `index` at rank `residual` within it.
    Child { index: usize, residual: u64 },
}

/// Routes 1-based rank `p` within `node`'s subtree.
pub fn get_child_id(node: &Node, p: u64) -> Result<Route> {
    if node.is_leaf() {
        if p == 0 || p > node.len() as u64 {
            return Err(Error::range(p, node.len() as u64));
        }
        return Ok(Route::Block(p as usize - 1));
    }
    let mut left = 0u64;
    for (i, child) in node.children.iter().enumerate() {
        if p > left && p <= left + child.size {
            return Ok(Route::Child { index: i, residual: p - left });
        }
        if i < node.len() && p == left + child.size + 1 {
            return Ok(Route::Block(i));
        }
        left += child.size + 1;
    }
    Err(Error::range(p, node.subtree_size()))
}

/// Insertion routing: the child whose subtree receives a new block of rank
/// `p`, for `p` in `1..=size+1`. A rank equal to `B_i`'s lands at the end
/// of `C_i`, so the new block precedes `B_i`.
fn route_insert(node: &Node, p: u64) -> Result<(usize, u64)> {
    let mut left = 0u64;
    for (i, child) in node.children.iter().enumerate() {
        if p > left && p <= left + child.size + 1 {
            return Ok((i, p - left));
        }
        left += child.size + 1;
    }
    Err(Error::range(p, node.subtree_size() + 1))
}

/// Derived attributes of a node: subtree size, direct block count and digest.
pub fn update_attributes(node: &Node) -> (u64, u32, Digest32) {
    (node.subtree_size(), node.len() as u32, node_digest(node))
}

/// Stores `node` and returns the link its parent should hold.
fn persist<S: NodeStore + ?Sized>(store: &S, node: Node) -> Result<ChildLink> {
    let (size, count, digest) = update_attributes(&node);
    let node = store.put(node)?;
    Ok(ChildLink { node, size, count, digest })
}

fn load<S: NodeStore + ?Sized>(store: &S, r: NodeRef) -> Result<Node> {
    Ok((*store.get(r)?).clone())
}

/// Splits a full node around its median: `(left, median, right)`.
fn split_node(node: Node, t: usize) -> (Node, Entry, Node) {
    debug_assert_eq!(node.len(), 2 * t - 1);
    let Node { mut entries, mut children } = node;
    let right_entries = entries.split_off(t);
    let median = entries.pop().expect("full node has a median");
    let right_children = if children.is_empty() { Vec::new() } else { children.split_off(t) };
    (
        Node { entries, children },
        median,
        Node { entries: right_entries, children: right_children },
    )
}

fn concat(mut left: Node, sep: Entry, right: Node) -> Node {
    left.entries.push(sep);
    left.entries.extend(right.entries);
    left.children.extend(right.children);
    left
}

/// Splits the full child `i` of `parent`: the median moves up into slot `i`
/// and both halves are stored as new nodes.
pub fn split_child<S: NodeStore + ?Sized>(store: &S, parent: &mut Node, i: usize, t: usize) -> Result<()> {
    if parent.len() >= 2 * t - 1 {
        return Err(Error::Contract("split into a full parent"));
    }
    let child = load(store, parent.children[i].node)?;
    if child.len() != 2 * t - 1 {
        return Err(Error::Contract("split of a non-full child"));
    }
    let (left, median, right) = split_node(child, t);
    let left = persist(store, left)?;
    let right = persist(store, right)?;
    parent.entries.insert(i, median);
    parent.children[i] = left;
    parent.children.insert(i + 1, right);
    Ok(())
}

/// Brings child `i` (holding exactly `t - 1` blocks) up to at least `t`
/// blocks before a deletion descends into it. Borrows through the parent
/// from the left sibling, else from the right, else merges with the left
/// sibling (the right one for the leftmost child).
///
/// Returns the child's possibly shifted index and its unstored contents.
/// The parent's link for that child has its `size` and `count` refreshed,
/// but its `node` and `digest` are left for the caller to replace.
fn fill_for_descent<S: NodeStore + ?Sized>(
    store: &S,
    parent: &mut Node,
    i: usize,
    mut child: Node,
    t: usize,
) -> Result<(usize, Node)> {
    if child.len() != t - 1 {
        return Err(Error::Contract("fill of a child that is not minimal"));
    }
    let n = parent.len();
    if i > 0 && parent.children[i - 1].count as usize >= t {
        let mut left = load(store, parent.children[i - 1].node)?;
        let moved = left.entries.pop().unwrap();
        child.entries.insert(0, std::mem::replace(&mut parent.entries[i - 1], moved));
        if let Some(c) = left.children.pop() {
            child.children.insert(0, c);
        }
        parent.children[i - 1] = persist(store, left)?;
        refresh_sizes(&mut parent.children[i], &child);
        return Ok((i, child));
    }
    if i < n && parent.children[i + 1].count as usize >= t {
        let mut right = load(store, parent.children[i + 1].node)?;
        let moved = right.entries.remove(0);
        child.entries.push(std::mem::replace(&mut parent.entries[i], moved));
        if !right.children.is_empty() {
            child.children.push(right.children.remove(0));
        }
        parent.children[i + 1] = persist(store, right)?;
        refresh_sizes(&mut parent.children[i], &child);
        return Ok((i, child));
    }
    if i > 0 {
        let left = load(store, parent.children[i - 1].node)?;
        let sep = parent.entries.remove(i - 1);
        parent.children.remove(i);
        let merged = concat(left, sep, child);
        refresh_sizes(&mut parent.children[i - 1], &merged);
        Ok((i - 1, merged))
    } else {
        let right = load(store, parent.children[1].node)?;
        let sep = parent.entries.remove(0);
        parent.children.remove(1);
        let merged = concat(child, sep, right);
        refresh_sizes(&mut parent.children[0], &merged);
        Ok((0, merged))
    }
}

fn refresh_sizes(link: &mut ChildLink, node: &Node) {
    link.size = node.subtree_size();
    link.count = node.len() as u32;
}

/// Rebalances the minimal child `i` of `parent` (see the delete path) and
/// stores every rewritten child. Returns the index now holding the child's
/// blocks.
pub fn fill_child<S: NodeStore + ?Sized>(store: &S, parent: &mut Node, i: usize, t: usize) -> Result<usize> {
    let child = load(store, parent.children[i].node)?;
    let (j, child) = fill_for_descent(store, parent, i, child, t)?;
    parent.children[j] = persist(store, child)?;
    Ok(j)
}

/// Handle to one immutable version of a tree living in a [`NodeStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EBTree {
    root: NodeRef,
    root_digest: Digest32,
    len: u64,
    t: usize,
}

fn check_degree(t: usize) -> Result<()> {
    if t < 2 {
        return Err(Error::Config(format!("minimum degree must be >= 2, got {t}")));
    }
    Ok(())
}

impl EBTree {
    /// A new empty tree: a stored leaf with no blocks.
    pub fn empty<S: NodeStore + ?Sized>(store: &S, t: usize) -> Result<Self> {
        check_degree(t)?;
        let link = persist(store, Node::default())?;
        Ok(Self::from_link(link, t))
    }

    /// Reopens the tree rooted at `root`, recomputing the root's derived fields.
    pub fn open<S: NodeStore + ?Sized>(store: &S, root: NodeRef, t: usize) -> Result<Self> {
        check_degree(t)?;
        let node = store.get(root)?;
        Ok(EBTree { root, root_digest: node_digest(&node), len: node.subtree_size(), t })
    }

    fn from_link(link: ChildLink, t: usize) -> Self {
        EBTree { root: link.node, root_digest: link.digest, len: link.size, t }
    }

    /// Bulk-loads `entries` in order into a densely packed tree.
    pub fn build<S: NodeStore + ?Sized>(store: &S, entries: &[Entry], t: usize) -> Result<Self> {
        check_degree(t)?;
        let mut height = 0u32;
        while capacity(height, t) < entries.len() as u128 {
            height += 1;
        }
        let link = build_range(store, entries, height, true, t)?;
        Ok(Self::from_link(link, t))
    }

    pub fn root(&self) -> NodeRef {
        self.root
    }

    pub fn root_digest(&self) -> Digest32 {
        self.root_digest
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn min_degree(&self) -> usize {
        self.t
    }

    fn max_blocks(&self) -> usize {
        2 * self.t - 1
    }

    fn check_rank(&self, p: u64) -> Result<()> {
        if p == 0 || p > self.len {
            return Err(Error::range(p, self.len));
        }
        Ok(())
    }

    /// Edges from the root to any leaf.
    pub fn height<S: NodeStore + ?Sized>(&self, store: &S) -> Result<usize> {
        let mut node = store.get(self.root)?;
        let mut h = 0;
        while let Some(c) = node.children.first() {
            node = store.get(c.node)?;
            h += 1;
        }
        Ok(h)
    }

    /// The entry at rank `p`.
    pub fn get<S: NodeStore + ?Sized>(&self, store: &S, p: u64) -> Result<Entry> {
        self.check_rank(p)?;
        let mut node = store.get(self.root)?;
        let mut p = p;
        loop {
            match get_child_id(&node, p)? {
                Route::Block(i) => return Ok(node.entries[i]),
                Route::Child { index, residual } => {
                    node = store.get(node.children[index].node)?;
                    p = residual;
                }
            }
        }
    }

    /// All entries in rank order.
    pub fn entries<S: NodeStore + ?Sized>(&self, store: &S) -> Result<Vec<Entry>> {
        fn walk<S: NodeStore + ?Sized>(store: &S, r: NodeRef, out: &mut Vec<Entry>) -> Result<()> {
            let node = store.get(r)?;
            if node.is_leaf() {
                out.extend_from_slice(&node.entries);
                return Ok(());
            }
            for (i, c) in node.children.iter().enumerate() {
                walk(store, c.node, out)?;
                if let Some(e) = node.entries.get(i) {
                    out.push(*e);
                }
            }
            Ok(())
        }
        let mut out = Vec::with_capacity(self.len as usize);
        walk(store, self.root, &mut out)?;
        Ok(out)
    }

    /// New version in which `entry` has rank `p` (`1..=len+1`) and former
    /// ranks `>= p` shift right by one.
    pub fn insert<S: NodeStore + ?Sized>(&self, store: &S, p: u64, entry: Entry) -> Result<Self> {
        if p == 0 || p > self.len + 1 {
            return Err(Error::range(p, self.len + 1));
        }
        let root = load(store, self.root)?;
        let root = if root.len() == self.max_blocks() {
            // Grow: a fresh blockless root whose only child is the old root,
            // which the descent below splits.
            let old = ChildLink {
                node: self.root,
                size: self.len,
                count: root.len() as u32,
                digest: self.root_digest,
            };
            let mut top = Node { entries: Vec::new(), children: vec![old] };
            descend_insert(store, &mut top, 0, root, p, entry, self.t)?;
            top
        } else {
            insert_nonfull(store, root, p, entry, self.t)?
        };
        Ok(Self::from_link(persist(store, root)?, self.t))
    }

    /// New version without the block at rank `p`; returns the removed entry.
    pub fn delete<S: NodeStore + ?Sized>(&self, store: &S, p: u64) -> Result<(Self, Entry)> {
        self.check_rank(p)?;
        let root = load(store, self.root)?;
        let (root, removed) = delete_rec(store, root, p, self.t)?;
        let link = if !root.is_leaf() && root.is_empty() {
            // Root emptied by a merge: its single child takes over.
            root.children[0]
        } else {
            persist(store, root)?
        };
        Ok((Self::from_link(link, self.t), removed))
    }

    /// New version with the block at rank `p` replaced. Shape and sizes are
    /// unchanged.
    pub fn update<S: NodeStore + ?Sized>(&self, store: &S, p: u64, entry: Entry) -> Result<Self> {
        self.check_rank(p)?;
        let root = load(store, self.root)?;
        let root = update_rec(store, root, p, entry)?;
        Ok(Self::from_link(persist(store, root)?, self.t))
    }

    /// The entry at rank `p` with its sibling path, root entry first.
    pub fn sibling_path<S: NodeStore + ?Sized>(
        &self,
        store: &S,
        p: u64,
    ) -> Result<(Entry, Vec<SiblingPathEntry>)> {
        self.check_rank(p)?;
        let mut node: Arc<Node> = store.get(self.root)?;
        let mut p = p;
        let mut path = Vec::new();
        loop {
            match get_child_id(&node, p)? {
                Route::Block(i) => {
                    path.push(SiblingPathEntry::around(&node, Hole::Block(i)));
                    return Ok((node.entries[i], path));
                }
                Route::Child { index, residual } => {
                    path.push(SiblingPathEntry::around(&node, Hole::Child(index)));
                    node = store.get(node.children[index].node)?;
                    p = residual;
                }
            }
        }
    }

    /// Full structural audit: occupancy bounds, uniform leaf depth, size and
    /// digest coherence of every link, and the handle's cached root fields.
    pub fn check_invariants<S: NodeStore + ?Sized>(&self, store: &S) -> Result<TreeStats> {
        let mut stats = TreeStats::default();
        let mut leaf_depth = None;
        let root = store.get(self.root)?;
        let (size, _) = check_node(store, &root, self.t, true, 0, &mut leaf_depth, &mut stats)?;
        let fail = |m: String| Err(Error::Integrity(m));
        if size != self.len {
            return fail(format!("handle length {} but tree holds {size}", self.len));
        }
        if node_digest(&root) != self.root_digest {
            return fail("handle root digest is stale".into());
        }
        if root.is_empty() && (self.len != 0 || !root.is_leaf()) {
            return fail("empty root in a non-empty tree".into());
        }
        stats.height = leaf_depth.unwrap_or(0);
        stats.blocks = size;
        let bound = height_bound(self.len, self.t);
        if stats.height > bound {
            return fail(format!("height {} exceeds bound {bound}", stats.height));
        }
        Ok(stats)
    }
}

/// `ceil(log_t((N+1)/2)) + 1`, the balance bound checked by
/// [`EBTree::check_invariants`].
pub fn height_bound(len: u64, t: usize) -> usize {
    let target = (len as f64 + 1.0) / 2.0;
    let mut h = 0usize;
    let mut reach = 1f64;
    while reach < target {
        reach *= t as f64;
        h += 1;
    }
    h + 1
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TreeStats {
    pub height: usize,
    pub nodes: u64,
    pub blocks: u64,
}

fn check_node<S: NodeStore + ?Sized>(
    store: &S,
    node: &Node,
    t: usize,
    is_root: bool,
    depth: usize,
    leaf_depth: &mut Option<usize>,
    stats: &mut TreeStats,
) -> Result<(u64, Digest32)> {
    let fail = |m: String| Err(Error::Integrity(m));
    stats.nodes += 1;
    let n = node.len();
    if n > 2 * t - 1 {
        return fail(format!("node at depth {depth} holds {n} > 2t-1 blocks"));
    }
    if !is_root && n < t - 1 {
        return fail(format!("non-root node at depth {depth} holds {n} < t-1 blocks"));
    }
    if node.is_leaf() {
        match *leaf_depth {
            None => *leaf_depth = Some(depth),
            Some(d) if d != depth => return fail(format!("leaves at depths {d} and {depth}")),
            _ => {}
        }
        return Ok((n as u64, node_digest(node)));
    }
    if node.children.len() != n + 1 {
        return fail(format!("internal node with {n} blocks has {} children", node.children.len()));
    }
    let mut total = n as u64;
    for link in &node.children {
        let child = store.get(link.node)?;
        let (size, digest) = check_node(store, &child, t, false, depth + 1, leaf_depth, stats)?;
        if size != link.size {
            return fail(format!("cached subtree size {} but counted {size}", link.size));
        }
        if child.len() as u32 != link.count {
            return fail(format!("cached block count {} but node holds {}", link.count, child.len()));
        }
        if digest != link.digest {
            return fail(format!("stale child digest at depth {}", depth + 1));
        }
        total += size;
    }
    Ok((total, node_digest(node)))
}

/// Root digest recomputed bottom-up from node contents alone, ignoring every
/// cached child digest.
pub fn recompute_digest<S: NodeStore + ?Sized>(store: &S, root: NodeRef) -> Result<Digest32> {
    let mut node = load(store, root)?;
    for link in node.children.iter_mut() {
        link.digest = recompute_digest(store, link.node)?;
    }
    Ok(node_digest(&node))
}

fn descend_insert<S: NodeStore + ?Sized>(
    store: &S,
    parent: &mut Node,
    index: usize,
    child: Node,
    residual: u64,
    entry: Entry,
    t: usize,
) -> Result<()> {
    if child.len() < 2 * t - 1 {
        let child = insert_nonfull(store, child, residual, entry, t)?;
        parent.children[index] = persist(store, child)?;
        return Ok(());
    }
    // Preemptive split, then re-route: ranks up to left_size + 1 (just
    // before the promoted median) belong to the left half.
    let (left, median, right) = split_node(child, t);
    let left_size = left.subtree_size();
    let (left, right) = if residual <= left_size + 1 {
        let right = persist(store, right)?;
        let left = insert_nonfull(store, left, residual, entry, t)?;
        (persist(store, left)?, right)
    } else {
        let left = persist(store, left)?;
        let right = insert_nonfull(store, right, residual - left_size - 1, entry, t)?;
        (left, persist(store, right)?)
    };
    parent.entries.insert(index, median);
    parent.children[index] = left;
    parent.children.insert(index + 1, right);
    Ok(())
}

fn insert_nonfull<S: NodeStore + ?Sized>(store: &S, mut node: Node, p: u64, entry: Entry, t: usize) -> Result<Node> {
    if node.is_leaf() {
        if p == 0 || p > node.len() as u64 + 1 {
            return Err(Error::range(p, node.len() as u64 + 1));
        }
        node.entries.insert(p as usize - 1, entry);
        return Ok(node);
    }
    let (index, residual) = route_insert(&node, p)?;
    let child = load(store, node.children[index].node)?;
    descend_insert(store, &mut node, index, child, residual, entry, t)?;
    Ok(node)
}

fn delete_rec<S: NodeStore + ?Sized>(store: &S, mut node: Node, p: u64, t: usize) -> Result<(Node, Entry)> {
    match get_child_id(&node, p)? {
        Route::Block(i) if node.is_leaf() => {
            let removed = node.entries.remove(i);
            Ok((node, removed))
        }
        Route::Block(i) => {
            let (left, right) = (node.children[i], node.children[i + 1]);
            if left.count as usize >= t {
                // Replace with the in-order predecessor.
                let child = load(store, left.node)?;
                let (child, pred) = delete_rec(store, child, left.size, t)?;
                let removed = std::mem::replace(&mut node.entries[i], pred);
                node.children[i] = persist(store, child)?;
                Ok((node, removed))
            } else if right.count as usize >= t {
                let child = load(store, right.node)?;
                let (child, succ) = delete_rec(store, child, 1, t)?;
                let removed = std::mem::replace(&mut node.entries[i], succ);
                node.children[i + 1] = persist(store, child)?;
                Ok((node, removed))
            } else {
                let sep = node.entries.remove(i);
                node.children.remove(i + 1);
                let merged = concat(load(store, left.node)?, sep, load(store, right.node)?);
                let (merged, removed) = delete_rec(store, merged, left.size + 1, t)?;
                node.children[i] = persist(store, merged)?;
                Ok((node, removed))
            }
        }
        Route::Child { index, residual } => {
            let child = load(store, node.children[index].node)?;
            let (index, child, residual) = if child.len() < t {
                let (j, child) = fill_for_descent(store, &mut node, index, child, t)?;
                match get_child_id(&node, p)? {
                    Route::Child { index, residual } if index == j => (j, child, residual),
                    _ => return Err(Error::Contract("rebalance moved the target out of its child")),
                }
            } else {
                (index, child, residual)
            };
            let (child, removed) = delete_rec(store, child, residual, t)?;
            node.children[index] = persist(store, child)?;
            Ok((node, removed))
        }
    }
}

fn update_rec<S: NodeStore + ?Sized>(store: &S, mut node: Node, p: u64, entry: Entry) -> Result<Node> {
    match get_child_id(&node, p)? {
        Route::Block(i) => node.entries[i] = entry,
        Route::Child { index, residual } => {
            let child = load(store, node.children[index].node)?;
            let child = update_rec(store, child, residual, entry)?;
            node.children[index] = persist(store, child)?;
        }
    }
    Ok(node)
}

/// Largest subtree of the given height: `(2t)^(h+1) - 1`.
fn capacity(height: u32, t: usize) -> u128 {
    (2 * t as u128).saturating_pow(height + 1).saturating_sub(1)
}

fn build_range<S: NodeStore + ?Sized>(
    store: &S,
    entries: &[Entry],
    height: u32,
    is_root: bool,
    t: usize,
) -> Result<ChildLink> {
    if height == 0 {
        return persist(store, Node::leaf(entries.to_vec()));
    }
    let s = entries.len() as u128;
    let child_cap = capacity(height - 1, t);
    let min_children = if is_root { 2 } else { t as u128 };
    let k = (s + 1).div_ceil(child_cap + 1).max(min_children) as usize;
    let in_children = entries.len() - (k - 1);
    let (base, extra) = (in_children / k, in_children % k);

    let mut node = Node {
        entries: Vec::with_capacity(k - 1),
        children: Vec::with_capacity(k),
    };
    let mut at = 0;
    for j in 0..k {
        let take = base + usize::from(j < extra);
        node.children.push(build_range(store, &entries[at..at + take], height - 1, false, t)?);
        at += take;
        if j + 1 < k {
            node.entries.push(entries[at]);
            at += 1;
        }
    }
    persist(store, node)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::digest::sha256;
    use crate::node::BlockRef;
    use crate::store::MemStore;

    fn e(i: u64) -> Entry {
        Entry { block: BlockRef(i), digest: sha256(&[&i.to_be_bytes()]) }
    }

    fn link(size: u64) -> ChildLink {
        ChildLink { node: NodeRef(0), size, count: 1, digest: Digest32::ZERO }
    }

    fn blocks<S: NodeStore>(tree: &EBTree, store: &S) -> Vec<u64> {
        tree.entries(store).unwrap().iter().map(|e| e.block.0).collect()
    }

    /// Node contents as block ids, level by level.
    fn shape(store: &MemStore, r: NodeRef) -> Vec<Vec<u64>> {
        let mut out = Vec::new();
        let mut level = vec![r];
        while !level.is_empty() {
            let mut next = Vec::new();
            for r in level {
                let node = store.get(r).unwrap();
                out.push(node.entries.iter().map(|e| e.block.0).collect());
                next.extend(node.children.iter().map(|c| c.node));
            }
            level = next;
        }
        out
    }

    #[test]
    fn routing_examples() {
        let node = Node { entries: vec![e(1), e(2)], children: vec![link(2), link(3), link(2)] };
        assert_eq!(get_child_id(&node, 3).unwrap(), Route::Block(0));
        assert_eq!(get_child_id(&node, 5).unwrap(), Route::Child { index: 1, residual: 2 });
        assert_eq!(get_child_id(&node, 9).unwrap(), Route::Child { index: 2, residual: 2 });
        assert_eq!(get_child_id(&node, 7).unwrap(), Route::Block(1));
        assert_eq!(get_child_id(&node, 1).unwrap(), Route::Child { index: 0, residual: 1 });
        assert!(matches!(get_child_id(&node, 10), Err(Error::Range { .. })));
        assert!(matches!(get_child_id(&node, 0), Err(Error::Range { .. })));
        assert_eq!(route_insert(&node, 3).unwrap(), (0, 3));
        assert_eq!(route_insert(&node, 10).unwrap(), (2, 3));
    }

    #[test]
    fn empty_and_singleton() {
        let store = MemStore::new();
        let empty = EBTree::empty(&store, 2).unwrap();
        assert!(empty.is_empty());
        assert!(matches!(empty.get(&store, 1), Err(Error::Range { .. })));
        assert!(matches!(empty.delete(&store, 1), Err(Error::Range { .. })));
        let one = empty.insert(&store, 1, e(1)).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.get(&store, 1).unwrap(), e(1));
        assert!(matches!(one.get(&store, 0), Err(Error::Range { .. })));
        let (back, removed) = one.delete(&store, 1).unwrap();
        assert_eq!(removed, e(1));
        assert!(back.is_empty());
        assert_eq!(back.root_digest(), empty.root_digest());
        back.check_invariants(&store).unwrap();
        assert!(matches!(EBTree::empty(&store, 1), Err(Error::Config(_))));
    }

    #[test]
    fn insert_into_full_root_splits() {
        let store = MemStore::new();
        let mut tree = EBTree::empty(&store, 2).unwrap();
        for i in 1..=3 {
            tree = tree.insert(&store, i, e(i)).unwrap();
        }
        assert_eq!(shape(&store, tree.root()), vec![vec![1, 2, 3]]);
        let tree = tree.insert(&store, 4, e(4)).unwrap();
        assert_eq!(shape(&store, tree.root()), vec![vec![2], vec![1], vec![3, 4]]);
        tree.check_invariants(&store).unwrap();
    }

    #[test]
    fn insert_on_promoted_median_rank() {
        // Inserting at the median's rank must land before the median even
        // though the split happens mid-descent.
        let store = MemStore::new();
        let mut tree = EBTree::empty(&store, 2).unwrap();
        for i in 1..=3 {
            tree = tree.insert(&store, i, e(i)).unwrap();
        }
        let tree = tree.insert(&store, 2, e(9)).unwrap();
        assert_eq!(blocks(&tree, &store), vec![1, 9, 2, 3]);
        tree.check_invariants(&store).unwrap();
    }

    #[test]
    fn delete_first_of_small_tree() {
        let store = MemStore::new();
        let mut tree = EBTree::empty(&store, 2).unwrap();
        for i in 1..=4 {
            tree = tree.insert(&store, i, e(i)).unwrap();
        }
        let (tree, removed) = tree.delete(&store, 1).unwrap();
        assert_eq!(removed, e(1));
        assert_eq!(blocks(&tree, &store), vec![2, 3, 4]);
        // Right sibling [3,4] lends: root [3], children [2], [4].
        assert_eq!(shape(&store, tree.root()), vec![vec![3], vec![2], vec![4]]);
        tree.check_invariants(&store).unwrap();
    }

    #[test]
    fn nine_block_fixture_get_and_update() {
        let store = MemStore::new();
        let mut tree = EBTree::empty(&store, 2).unwrap();
        for i in 1..=9 {
            tree = tree.insert(&store, i, e(i)).unwrap();
        }
        tree.check_invariants(&store).unwrap();
        assert_eq!(tree.get(&store, 4).unwrap(), e(4));
        let updated = tree.update(&store, 4, e(44)).unwrap();
        let mut expected: Vec<u64> = (1..=9).collect();
        expected[3] = 44;
        assert_eq!(blocks(&updated, &store), expected);
        assert_eq!(blocks(&tree, &store), (1..=9).collect::<Vec<_>>());
        updated.check_invariants(&store).unwrap();
        let same = tree.update(&store, 4, e(4)).unwrap();
        assert_eq!(same.root_digest(), tree.root_digest());
        assert_ne!(same.root(), tree.root());
    }

    #[test]
    fn split_child_examples() {
        let store = MemStore::new();
        let full = persist(&store, Node::leaf(vec![e(1), e(2), e(3)])).unwrap();
        let mut parent = Node { entries: vec![], children: vec![full] };
        split_child(&store, &mut parent, 0, 2).unwrap();
        assert_eq!(parent.entries, vec![e(2)]);
        assert_eq!(parent.subtree_size(), 3);
        let left = store.get(parent.children[0].node).unwrap();
        let right = store.get(parent.children[1].node).unwrap();
        assert_eq!(left.entries, vec![e(1)]);
        assert_eq!(right.entries, vec![e(3)]);
        assert!(matches!(split_child(&store, &mut parent, 0, 2), Err(Error::Contract(_))));

        // t = 3: internal child of 5 blocks / 6 subtrees.
        let leaves: Vec<ChildLink> = (0..6)
            .map(|k| persist(&store, Node::leaf(vec![e(100 + 2 * k), e(101 + 2 * k)])).unwrap())
            .collect();
        let child = persist(&store, Node { entries: (1..=5).map(e).collect(), children: leaves }).unwrap();
        assert_eq!(child.size, 17);
        let mut parent = Node { entries: vec![], children: vec![child] };
        split_child(&store, &mut parent, 0, 3).unwrap();
        let (l, r) = (parent.children[0], parent.children[1]);
        let (ln, rn) = (store.get(l.node).unwrap(), store.get(r.node).unwrap());
        assert_eq!((ln.len(), ln.children.len(), rn.len(), rn.children.len()), (2, 3, 2, 3));
        // Fresh recount against the cached sizes.
        let count = |n: &Node| n.len() as u64 + n.children.iter().map(|c| store.get(c.node).unwrap().len() as u64).sum::<u64>();
        assert_eq!((l.size, r.size), (count(&ln), count(&rn)));
        assert_eq!(parent.subtree_size(), 17);
    }

    #[test]
    fn fill_child_examples() {
        let store = MemStore::new();
        let leaf = |v: Vec<u64>| persist(&store, Node::leaf(v.into_iter().map(e).collect())).unwrap();

        // Neither sibling can lend: merge [a] b [c].
        let mut parent = Node { entries: vec![e(2)], children: vec![leaf(vec![1]), leaf(vec![3])] };
        let j = fill_child(&store, &mut parent, 1, 2).unwrap();
        assert_eq!(j, 0);
        assert!(parent.entries.is_empty());
        let merged = store.get(parent.children[0].node).unwrap();
        assert_eq!(merged.entries, vec![e(1), e(2), e(3)]);
        assert_eq!(parent.subtree_size(), 3);

        // Left sibling [a,b], separator c, child [d]: rotate right.
        let mut parent = Node { entries: vec![e(3)], children: vec![leaf(vec![1, 2]), leaf(vec![4])] };
        let j = fill_child(&store, &mut parent, 1, 2).unwrap();
        assert_eq!(j, 1);
        assert_eq!(parent.entries, vec![e(2)]);
        assert_eq!(store.get(parent.children[0].node).unwrap().entries, vec![e(1)]);
        assert_eq!(store.get(parent.children[1].node).unwrap().entries, vec![e(3), e(4)]);
        assert_eq!(parent.subtree_size(), 4);

        // Precondition: the child must be minimal.
        assert!(matches!(fill_child(&store, &mut parent, 1, 2), Err(Error::Contract(_))));
    }

    #[test]
    fn update_attributes_is_deterministic() {
        let node = Node::leaf(vec![e(1), e(2)]);
        let (size, count, d) = update_attributes(&node);
        assert_eq!((size, count), (2, 2));
        assert_eq!(d, update_attributes(&node).2);
        let mut expect = vec![0u8, 0, 0, 0, 2];
        expect.extend_from_slice(e(1).digest.as_bytes());
        expect.extend_from_slice(e(2).digest.as_bytes());
        assert_eq!(d, sha256(&[&expect]));
    }

    #[test]
    fn bulk_build_is_valid_for_many_sizes() {
        for t in [2, 3, 4, 8] {
            for n in (0..300).chain([1000, 4095, 4096, 4097, 20_000]) {
                let store = MemStore::new();
                let entries: Vec<Entry> = (1..=n).map(e).collect();
                let tree = EBTree::build(&store, &entries, t).unwrap();
                let stats = tree.check_invariants(&store).unwrap_or_else(|err| panic!("t={t} n={n}: {err}"));
                assert_eq!(tree.entries(&store).unwrap(), entries, "t={t} n={n}");
                assert_eq!(stats.nodes, store.node_count(), "bulk build writes only live nodes");
            }
        }
    }

    #[test]
    fn old_versions_survive_mutation() {
        let store = MemStore::new();
        let v0 = EBTree::build(&store, &(1..=50).map(e).collect::<Vec<_>>(), 2).unwrap();
        let before = blocks(&v0, &store);
        let mut tree = v0;
        for i in 0..40 {
            tree = tree.delete(&store, 1 + (i * 7) % tree.len()).unwrap().0;
        }
        assert_eq!(blocks(&v0, &store), before);
        v0.check_invariants(&store).unwrap();
        assert_eq!(recompute_digest(&store, v0.root()).unwrap(), v0.root_digest());
    }

    #[test]
    fn reads_per_operation_are_bounded_by_height() {
        let store = MemStore::new();
        let mut tree = EBTree::build(&store, &(1..=3000).map(e).collect::<Vec<_>>(), 2).unwrap();
        let mut x = 12345u64;
        for step in 0..3000u64 {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let h = tree.height(&store).unwrap() as u64;
            let before = store.reads();
            tree = match step % 3 {
                0 => tree.insert(&store, 1 + (x >> 33) % (tree.len() + 1), e(step)).unwrap(),
                1 => tree.delete(&store, 1 + (x >> 33) % tree.len()).unwrap().0,
                _ => tree.update(&store, 1 + (x >> 33) % tree.len(), e(step)).unwrap(),
            };
            let visited = store.reads() - before;
            assert!(visited <= 2 * (h + 1), "step {step}: {visited} reads at height {h}");
        }
    }
}
