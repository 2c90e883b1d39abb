//! Separator hierarchy for logarithmic point location.
//!
//! Each finger node owns a connected piece of the quadtree and a separator
//! node `s` of that piece whose piece-subtree holds more than half of the
//! piece while each of its children's holds at most half. A query key either
//! lies in the cell of `s`, and continues into the piece rooted at the child
//! of `s` containing it, or it does not, and continues into the piece with
//! the subtree of `s` cut away. Every step at least halves the piece.

use super::{CompressedQuadtree, NodeId, NO_NODE};
use crate::geometry::GridKey;

#[derive(Debug, Clone, PartialEq)]
pub struct FingerTree {
    pub(crate) sep: Vec<u32>,
    pub(crate) outside: Vec<u32>,
    pub(crate) inside_start: Vec<u32>,
    pub(crate) inside: Vec<u32>,
}

/// Result of a finger-tree location.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocateTrace {
    pub leaf: NodeId,
    /// Finger nodes visited on the way, including the last one.
    pub visited: usize,
}

struct Builder<'t> {
    tree: &'t CompressedQuadtree,
    removed: Vec<bool>,
    size: Vec<u32>,
    scratch: Vec<u32>,
    out: FingerTree,
}

impl Builder<'_> {
    fn piece(&mut self, root: u32) -> u32 {
        let tree = self.tree;
        self.scratch.clear();
        self.scratch.push(root);
        let mut i = 0;
        while i < self.scratch.len() {
            let v = self.scratch[i];
            i += 1;
            for c in tree.children(v) {
                if !self.removed[c as usize] {
                    self.scratch.push(c);
                }
            }
        }
        for &v in self.scratch.iter().rev() {
            let below: u32 = tree
                .children(v)
                .filter(|&c| !self.removed[c as usize])
                .map(|c| self.size[c as usize])
                .sum();
            self.size[v as usize] = 1 + below;
        }
        let total = self.size[root as usize];

        let mut sep = root;
        loop {
            let heavy = tree
                .children(sep)
                .filter(|&c| !self.removed[c as usize])
                .max_by_key(|&c| self.size[c as usize]);
            match heavy {
                Some(c) if 2 * self.size[c as usize] > total => sep = c,
                _ => break,
            }
        }
        self.removed[sep as usize] = true;

        let f = self.out.sep.len() as u32;
        let start = self.out.inside.len() as u32;
        let kids = tree.children(sep);
        self.out.sep.push(sep);
        self.out.outside.push(NO_NODE);
        self.out.inside_start.push(start);
        self.out
            .inside
            .extend(std::iter::repeat_n(NO_NODE, kids.len()));

        if sep != root {
            let o = self.piece(root);
            self.out.outside[f as usize] = o;
        }
        for (k, c) in kids.enumerate() {
            if !self.removed[c as usize] {
                let p = self.piece(c);
                self.out.inside[start as usize + k] = p;
            }
        }
        f
    }
}

impl FingerTree {
    pub fn build(tree: &CompressedQuadtree) -> Self {
        let m = tree.len();
        let mut b = Builder {
            tree,
            removed: vec![false; m],
            size: vec![0; m],
            scratch: Vec::new(),
            out: FingerTree {
                sep: Vec::with_capacity(m),
                outside: Vec::with_capacity(m),
                inside_start: Vec::with_capacity(m),
                inside: Vec::with_capacity(m),
            },
        };
        b.piece(tree.root());
        b.out
    }

    pub fn len(&self) -> usize {
        self.sep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sep.is_empty()
    }

    /// Number of finger nodes on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        let mut max = 0;
        let mut stack = vec![(0u32, 1usize)];
        while let Some((f, d)) = stack.pop() {
            max = max.max(d);
            let f = f as usize;
            let o = self.outside[f];
            if o != NO_NODE {
                stack.push((o, d + 1));
            }
            let start = self.inside_start[f] as usize;
            let end = self
                .inside_start
                .get(f + 1)
                .map(|&s| s as usize)
                .unwrap_or(self.inside.len());
            for &c in &self.inside[start..end] {
                if c != NO_NODE {
                    stack.push((c, d + 1));
                }
            }
        }
        max
    }

    pub fn locate(&self, tree: &CompressedQuadtree, key: &GridKey) -> NodeId {
        self.locate_traced(tree, key).leaf
    }

    pub fn locate_traced(&self, tree: &CompressedQuadtree, key: &GridKey) -> LocateTrace {
        let mut f = 0usize;
        let mut visited = 0;
        loop {
            visited += 1;
            let s = self.sep[f];
            let next = if tree.cell_contains(s, key) {
                if tree.is_leaf(s) {
                    return LocateTrace { leaf: s, visited };
                }
                let c = tree.child_containing(s, key);
                let k = (c - tree.first_child[s as usize]) as usize;
                self.inside[self.inside_start[f] as usize + k]
            } else {
                self.outside[f]
            };
            assert_ne!(next, NO_NODE, "finger tree routed a key outside its piece");
            f = next as usize;
        }
    }

    pub(crate) fn validate(&self, tree: &CompressedQuadtree) -> crate::error::Result<()> {
        use crate::error::Error;
        let n = self.sep.len();
        if n == 0 || self.outside.len() != n || self.inside_start.len() != n {
            return Err(Error::Format("finger arrays have inconsistent lengths".into()));
        }
        let mut seen = vec![false; tree.len()];
        let mut expected_start = 0u32;
        for f in 0..n {
            let s = self.sep[f];
            if s as usize >= tree.len() || std::mem::replace(&mut seen[s as usize], true) {
                return Err(Error::Format(format!("finger node {f} has a bad separator")));
            }
            if self.inside_start[f] != expected_start {
                return Err(Error::Format(format!("finger node {f} has a bad child table")));
            }
            expected_start += tree.children(s).len() as u32;
            let o = self.outside[f];
            if o != NO_NODE && (o as usize <= f || o as usize >= n) {
                return Err(Error::Format(format!("finger node {f} has a bad outside link")));
            }
        }
        if expected_start as usize != self.inside.len()
            || self
                .inside
                .iter()
                .any(|&c| c != NO_NODE && (c == 0 || c as usize >= n))
        {
            return Err(Error::Format("finger child table out of range".into()));
        }
        if seen.iter().any(|&s| !s) {
            return Err(Error::Format("finger tree does not cover every node".into()));
        }
        Ok(())
    }
}
