//! Compressed quadtree over a set of dyadic boxes.
//!
//! Every input box is the cell of exactly one ordinary node. A node either
//! splits into its `2^d` quadrants or has two children: a nested box `H` and a
//! compressed leaf whose cell is `parent \ H`. Nodes live in an arena indexed
//! by [`NodeId`]; children of a node are contiguous and always have larger
//! ids than their parent.

mod finger;

pub use finger::{FingerTree, LocateTrace};

use crate::error::{Error, Result};
use crate::geometry::{smallest_common_box, GridKey, QtBox, KEY_BITS};

pub type NodeId = u32;

pub(crate) const NO_NODE: u32 = u32::MAX;

pub(crate) const FLAG_COMPRESSED: u8 = 1;
pub(crate) const FLAG_MARKED: u8 = 2;
pub(crate) const FLAG_SPLIT: u8 = 4;

/// The cell of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Ordinary(QtBox),
    /// `outer \ inner`; always a leaf.
    Compressed { outer: QtBox, inner: QtBox },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedQuadtree {
    pub(crate) dim: usize,
    pub(crate) level: Vec<u8>,
    /// `dim` anchors per node; the outer box for compressed nodes.
    pub(crate) anchors: Vec<u64>,
    pub(crate) parent: Vec<u32>,
    pub(crate) first_child: Vec<u32>,
    pub(crate) child_count: Vec<u16>,
    pub(crate) flags: Vec<u8>,
}

enum Pending {
    /// Node whose cell is the `k`-th key box.
    Key { id: u32, k: usize },
    /// Plain box holding a single key box strictly inside.
    Wrap { id: u32, k: usize },
}

impl CompressedQuadtree {
    /// Builds the tree storing every box of `boxes` (plus the root cell).
    ///
    /// Boxes are sorted in Morton preorder and closed under the smallest
    /// common box of Morton-consecutive pairs. Those "key boxes" are exactly
    /// the input boxes plus the branching cells; the remaining nodes are
    /// quadrants of branching cells and compressed leaves.
    pub fn build(dim: usize, boxes: &[QtBox]) -> Result<Self> {
        let root = QtBox::root(dim);
        if let Some(b) = boxes.iter().find(|b| b.dim() != dim) {
            return Err(Error::InvalidInput(format!(
                "box of dimension {} in a {dim}-dimensional tree",
                b.dim()
            )));
        }

        let mut input: Vec<(QtBox, bool)> = Vec::with_capacity(boxes.len() + 1);
        input.push((root, false));
        input.extend(boxes.iter().map(|&b| (b, true)));
        sort_dedup(&mut input);

        let mut keyed = input.clone();
        for w in input.windows(2) {
            keyed.push((smallest_common_box(&w[0].0, &w[1].0), false));
        }
        sort_dedup(&mut keyed);
        debug_assert_eq!(keyed[0].0, root);

        // hierarchy of key boxes, children in Morton order
        let m = keyed.len();
        let mut kparent = vec![usize::MAX; m];
        let mut stack: Vec<usize> = vec![0];
        for i in 1..m {
            while !keyed[*stack.last().expect("root contains all")].0.contains_box(&keyed[i].0) {
                stack.pop();
            }
            kparent[i] = *stack.last().unwrap();
            stack.push(i);
        }
        let mut kstart = vec![0usize; m + 1];
        for &p in &kparent[1..] {
            kstart[p + 1] += 1;
        }
        for i in 0..m {
            kstart[i + 1] += kstart[i];
        }
        let mut fill = kstart.clone();
        let mut kchildren = vec![0usize; m.saturating_sub(1)];
        for (i, &p) in kparent.iter().enumerate().skip(1) {
            kchildren[fill[p]] = i;
            fill[p] += 1;
        }

        let mut t = CompressedQuadtree {
            dim,
            level: Vec::new(),
            anchors: Vec::new(),
            parent: Vec::new(),
            first_child: Vec::new(),
            child_count: Vec::new(),
            flags: Vec::new(),
        };
        t.push_node(&root, NO_NODE, keyed[0].1 as u8 * FLAG_MARKED);

        let fanout = 1usize << dim;
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(Pending::Key { id: 0, k: 0 });
        while let Some(job) = queue.pop_front() {
            match job {
                Pending::Key { id, k } => {
                    let cell = keyed[k].0;
                    let kids = &kchildren[kstart[k]..kstart[k + 1]];
                    match kids.len() {
                        0 => {}
                        1 => {
                            let c = kids[0];
                            let cid = t.push_pair(id, &cell, &keyed[c].0, keyed[c].1);
                            queue.push_back(Pending::Key { id: cid, k: c });
                        }
                        _ => {
                            let mut slot = vec![usize::MAX; fanout];
                            for &c in kids {
                                let q = cell.quadrant_of_box(&keyed[c].0);
                                debug_assert_eq!(slot[q], usize::MAX);
                                slot[q] = c;
                            }
                            let first = t.len() as u32;
                            t.set_children(id, first, fanout as u16, FLAG_SPLIT);
                            for (q, &c) in slot.iter().enumerate() {
                                let quad = cell.child(q);
                                let cid = t.len() as u32;
                                if c == usize::MAX {
                                    t.push_node(&quad, id, 0);
                                } else if keyed[c].0 == quad {
                                    t.push_node(&quad, id, keyed[c].1 as u8 * FLAG_MARKED);
                                    queue.push_back(Pending::Key { id: cid, k: c });
                                } else {
                                    t.push_node(&quad, id, 0);
                                    queue.push_back(Pending::Wrap { id: cid, k: c });
                                }
                            }
                        }
                    }
                }
                Pending::Wrap { id, k } => {
                    let cell = t.cell_box(id);
                    let cid = t.push_pair(id, &cell, &keyed[k].0, keyed[k].1);
                    queue.push_back(Pending::Key { id: cid, k });
                }
            }
        }
        Ok(t)
    }

    fn push_node(&mut self, cell: &QtBox, parent: u32, flags: u8) -> u32 {
        let id = self.level.len() as u32;
        self.level.push(cell.level() as u8);
        self.anchors.extend_from_slice(cell.anchor());
        self.parent.push(parent);
        self.first_child.push(NO_NODE);
        self.child_count.push(0);
        self.flags.push(flags);
        id
    }

    fn set_children(&mut self, id: u32, first: u32, count: u16, flag: u8) {
        self.first_child[id as usize] = first;
        self.child_count[id as usize] = count;
        self.flags[id as usize] |= flag;
    }

    /// Gives `id` the children `[inner, cell \ inner]`; returns the inner node.
    fn push_pair(&mut self, id: u32, cell: &QtBox, inner: &QtBox, marked: bool) -> u32 {
        let first = self.len() as u32;
        self.set_children(id, first, 2, 0);
        self.push_node(inner, id, marked as u8 * FLAG_MARKED);
        self.push_node(cell, id, FLAG_COMPRESSED);
        first
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.level.len()
    }

    pub fn is_empty(&self) -> bool {
        self.level.is_empty()
    }

    pub fn root(&self) -> NodeId {
        0
    }

    /// The node's box; the outer box for compressed nodes.
    pub fn cell_box(&self, id: NodeId) -> QtBox {
        let d = self.dim;
        let a = &self.anchors[id as usize * d..(id as usize + 1) * d];
        QtBox::new(self.level[id as usize] as u32, a).expect("stored boxes are valid")
    }

    pub fn kind(&self, id: NodeId) -> NodeKind {
        if self.is_compressed(id) {
            let sibling = self.first_child[self.parent[id as usize] as usize];
            NodeKind::Compressed {
                outer: self.cell_box(id),
                inner: self.cell_box(sibling),
            }
        } else {
            NodeKind::Ordinary(self.cell_box(id))
        }
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        let p = self.parent[id as usize];
        (p != NO_NODE).then_some(p)
    }

    pub fn children(&self, id: NodeId) -> std::ops::Range<NodeId> {
        let first = self.first_child[id as usize];
        if first == NO_NODE {
            return 0..0;
        }
        first..first + self.child_count[id as usize] as u32
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.child_count[id as usize] == 0
    }

    pub fn is_compressed(&self, id: NodeId) -> bool {
        self.flags[id as usize] & FLAG_COMPRESSED != 0
    }

    pub fn is_marked(&self, id: NodeId) -> bool {
        self.flags[id as usize] & FLAG_MARKED != 0
    }

    /// True when the children are the `2^d` quadrants.
    pub fn is_split(&self, id: NodeId) -> bool {
        self.flags[id as usize] & FLAG_SPLIT != 0
    }

    pub fn compressed_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f & FLAG_COMPRESSED != 0).count()
    }

    pub fn marked_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f & FLAG_MARKED != 0).count()
    }

    pub fn leaf_count(&self) -> usize {
        self.child_count.iter().filter(|&&c| c == 0).count()
    }

    /// Number of nodes on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        let mut depth = vec![0u32; self.len()];
        let mut max = 0;
        for id in 0..self.len() {
            let p = self.parent[id];
            depth[id] = if p == NO_NODE { 1 } else { depth[p as usize] + 1 };
            max = max.max(depth[id]);
        }
        max as usize
    }

    /// True when the key lies in the node's cell (half-open semantics).
    #[inline]
    pub fn cell_contains(&self, id: NodeId, key: &GridKey) -> bool {
        let d = self.dim;
        let shift = KEY_BITS - self.level[id as usize] as u32;
        let a = &self.anchors[id as usize * d..(id as usize + 1) * d];
        let in_outer = a.iter().zip(key.axes()).all(|(&a, &k)| k >> shift == a);
        if !in_outer || !self.is_compressed(id) {
            return in_outer;
        }
        let sibling = self.first_child[self.parent[id as usize] as usize];
        !self.cell_contains(sibling, key)
    }

    /// Child of the internal node `id` whose cell contains `key`, which must
    /// lie in the cell of `id`.
    #[inline]
    pub fn child_containing(&self, id: NodeId, key: &GridKey) -> NodeId {
        let first = self.first_child[id as usize];
        debug_assert_ne!(first, NO_NODE);
        if self.is_split(id) {
            let d = self.dim;
            let shift = KEY_BITS - 1 - self.level[id as usize] as u32;
            let q = key
                .axes()
                .iter()
                .enumerate()
                .fold(0u32, |q, (j, &k)| q | ((((k >> shift) & 1) as u32) << (d - 1 - j)));
            first + q
        } else if self.cell_contains(first, key) {
            first
        } else {
            first + 1
        }
    }

    /// Leaf containing `key`, found by walking down from the root.
    pub fn locate_descend(&self, key: &GridKey) -> NodeId {
        self.locate_descend_counted(key).0
    }

    /// Like [`locate_descend`](Self::locate_descend), also returning the number
    /// of nodes visited.
    pub fn locate_descend_counted(&self, key: &GridKey) -> (NodeId, usize) {
        let mut id = 0;
        let mut visited = 1;
        while !self.is_leaf(id) {
            id = self.child_containing(id, key);
            visited += 1;
        }
        (id, visited)
    }

    /// Ordinary node whose cell is exactly `b`.
    pub fn lookup(&self, b: &QtBox) -> Option<NodeId> {
        if b.dim() != self.dim {
            return None;
        }
        let mut id = 0;
        loop {
            let cell = self.cell_box(id);
            if cell == *b {
                return Some(id);
            }
            if self.is_leaf(id) || cell.level() >= b.level() {
                return None;
            }
            let first = self.first_child[id as usize];
            if self.is_split(id) {
                id = first + cell.quadrant_of_box(b) as u32;
            } else if self.cell_box(first).contains_box(b) {
                id = first;
            } else {
                return None;
            }
        }
    }

    /// Structural self-check used after deserialization.
    pub(crate) fn validate(&self) -> Result<()> {
        let n = self.len();
        let d = self.dim;
        let bad = |msg: String| Err(Error::Format(msg));
        if n == 0 || self.parent[0] != NO_NODE || self.level[0] != 0 {
            return bad("tree has no root".into());
        }
        if self.anchors.len() != n * d
            || [self.parent.len(), self.first_child.len(), self.child_count.len(), self.flags.len()]
                .iter()
                .any(|&l| l != n)
        {
            return bad("node arrays have inconsistent lengths".into());
        }
        for id in 0..n {
            let lvl = self.level[id] as u32;
            if lvl > KEY_BITS {
                return bad(format!("node {id} has level {lvl}"));
            }
            if self.anchors[id * d..(id + 1) * d].iter().any(|&x| x >> lvl != 0) {
                return bad(format!("node {id} anchor outside the root"));
            }
        }
        for id in 0..n as u32 {
            let count = self.child_count[id as usize] as u32;
            let first = self.first_child[id as usize];
            let flags = self.flags[id as usize];
            if flags & !(FLAG_COMPRESSED | FLAG_MARKED | FLAG_SPLIT) != 0 {
                return bad(format!("node {id} has unknown flags"));
            }
            if count == 0 {
                if first != NO_NODE || flags & FLAG_SPLIT != 0 {
                    return bad(format!("leaf {id} has child links"));
                }
            } else {
                if flags & FLAG_COMPRESSED != 0 {
                    return bad(format!("compressed node {id} is not a leaf"));
                }
                let expect = if flags & FLAG_SPLIT != 0 { 1u32 << d } else { 2 };
                if count != expect
                    || (flags & FLAG_SPLIT != 0 && self.level[id as usize] as u32 >= KEY_BITS)
                    || first <= id
                    || first.checked_add(count).is_none_or(|end| end as usize > n)
                {
                    return bad(format!("node {id} has malformed children"));
                }
                let cell = self.cell_box(id);
                for (q, c) in (first..first + count).enumerate() {
                    if self.parent[c as usize] != id {
                        return bad(format!("node {c} does not point back to parent {id}"));
                    }
                    let ok = if flags & FLAG_SPLIT != 0 {
                        self.flags[c as usize] & FLAG_COMPRESSED == 0
                            && self.cell_box(c) == cell.child(q)
                    } else if q == 0 {
                        self.flags[c as usize] & FLAG_COMPRESSED == 0
                            && self.level[c as usize] > self.level[id as usize]
                            && cell.contains_box(&self.cell_box(c))
                    } else {
                        self.flags[c as usize] & FLAG_COMPRESSED != 0 && self.cell_box(c) == cell
                    };
                    if !ok {
                        return bad(format!("child {c} of node {id} has an inconsistent cell"));
                    }
                }
            }
        }
        Ok(())
    }
}

fn sort_dedup(v: &mut Vec<(QtBox, bool)>) {
    v.sort_by(|a, b| a.0.morton_cmp(&b.0));
    v.dedup_by(|later, kept| {
        if later.0 == kept.0 {
            kept.1 |= later.1;
            true
        } else {
            false
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{axis_key, GridKey};

    fn bx(level: u32, anchor: &[u64]) -> QtBox {
        QtBox::new(level, anchor).unwrap()
    }

    #[test]
    fn root_only() {
        let t = CompressedQuadtree::build(2, &[QtBox::root(2)]).unwrap();
        assert_eq!(t.len(), 1);
        assert!(t.is_marked(0));
        assert_eq!(t.locate_descend(&GridKey::from_normalized(&[0.3, -0.7])), 0);
        assert_eq!(t.depth(), 1);

        let empty = CompressedQuadtree::build(3, &[]).unwrap();
        assert_eq!(empty.len(), 1);
        assert!(!empty.is_marked(0));
    }

    #[test]
    fn two_boxes_in_opposite_quadrants() {
        let a = bx(10, &[0, 0]);
        let b = bx(10, &[1023, 1023]);
        let t = CompressedQuadtree::build(2, &[a, b]).unwrap();
        // root split into 4 quadrants, two of which hold a pair {box, compressed}
        assert!(t.is_split(0));
        assert_eq!(t.children(0), 1..5);
        assert_eq!(t.len(), 1 + 4 + 2 + 2);
        assert_eq!(t.compressed_count(), 2);
        for target in [a, b] {
            let id = t.lookup(&target).unwrap();
            assert!(t.is_marked(id));
            assert_eq!(t.kind(id), NodeKind::Ordinary(target));
        }
        let quad0 = 1;
        assert_eq!(t.children(quad0).len(), 2);
        assert_eq!(
            t.kind(t.children(quad0).end - 1),
            NodeKind::Compressed { outer: QtBox::root(2).child(0), inner: a }
        );
    }

    #[test]
    fn compressed_region_locates_to_compressed_leaf() {
        let a = bx(10, &[0, 0]);
        let b = bx(10, &[1023, 1023]);
        let t = CompressedQuadtree::build(2, &[a, b]).unwrap();
        // inside quadrant 0 ([-1,0)^2) but outside box a
        let key = GridKey::from_normalized(&[-0.5, -0.5]);
        let leaf = t.locate_descend(&key);
        assert!(t.is_compressed(leaf));
        match t.kind(leaf) {
            NodeKind::Compressed { outer, inner } => {
                assert!(outer.contains_key(&key) && !inner.contains_key(&key));
            }
            _ => unreachable!(),
        }
        // the lower corner of the root falls in box a itself
        let corner = GridKey::from_normalized(&[-1.0, -1.0]);
        assert_eq!(t.kind(t.locate_descend(&corner)), NodeKind::Ordinary(a));
    }

    #[test]
    fn nested_boxes_chain() {
        let outer = bx(2, &[1]);
        let inner = bx(9, &[1 << 7]);
        let t = CompressedQuadtree::build(1, &[outer, inner]).unwrap();
        let o = t.lookup(&outer).unwrap();
        let i = t.lookup(&inner).unwrap();
        assert_eq!(t.parent(i), Some(o));
        assert!(t.is_marked(o) && t.is_marked(i));
        assert!(t.lookup(&bx(5, &[8])).is_none());
    }

    #[test]
    fn shared_boundary_key_has_one_owner() {
        let t = CompressedQuadtree::build(1, &[bx(1, &[0]), bx(1, &[1])]).unwrap();
        let zero = GridKey::from_axes(&[axis_key(0.0)]);
        let leaf = t.locate_descend(&zero);
        assert_eq!(t.kind(leaf), NodeKind::Ordinary(bx(1, &[1])));
    }

    #[test]
    fn mixed_dimension_rejected() {
        assert!(matches!(
            CompressedQuadtree::build(2, &[bx(1, &[0])]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn validate_accepts_built_trees() {
        let boxes = [bx(3, &[1, 2, 3]), bx(5, &[4, 9, 13]), bx(1, &[1, 1, 1]), bx(12, &[7, 7, 7])];
        let t = CompressedQuadtree::build(3, &boxes).unwrap();
        t.validate().unwrap();
        let mut broken = t.clone();
        broken.parent[1] = 5;
        assert!(broken.validate().is_err());
    }
}
