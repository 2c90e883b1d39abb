//! The reverse nearest neighbor index.
//!
//! Every point owns an empty ball reaching its nearest neighbor. The ball is
//! registered at the quadtree boxes of side `[2r, 4r)` that cover it, and each
//! ordinary node keeps the candidate list `L` of points with `r > s/4` whose
//! ball overlaps the node's cell. A query only has to locate its leaf and test
//! the leaf's candidates against their balls.

mod format;

use std::cmp::Ordering;

use serde::Serialize;

use crate::allnn::{all_nearest_neighbors_with, EmptyBall};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, map_slice, Exec};
use crate::geometry::{
    axis_key, ball_box_overlap, boundary, cmp_sq_diff, dist_sq, level_for_radius_sq, normalize,
    GridKey, LevelError, PointSet, QtBox, Transform, KEY_BITS, MAX_BALL_LEVEL, MAX_DIM,
};
use crate::quadtree::{CompressedQuadtree, FingerTree, NodeId};

/// Per-node lists in compressed-row form.
#[derive(Debug, Clone, PartialEq, Default)]
pub(crate) struct NodeLists {
    pub(crate) offsets: Vec<u32>,
    pub(crate) items: Vec<u32>,
}

impl NodeLists {
    fn get(&self, node: NodeId) -> &[u32] {
        let (s, e) = (self.offsets[node as usize], self.offsets[node as usize + 1]);
        &self.items[s as usize..e as usize]
    }

    fn validate(&self, nodes: usize, points: usize, what: &str) -> Result<()> {
        let ok = self.offsets.len() == nodes + 1
            && self.offsets[0] == 0
            && self.offsets.windows(2).all(|w| w[0] <= w[1])
            && *self.offsets.last().unwrap() as usize == self.items.len()
            && self.items.iter().all(|&i| (i as usize) < points)
            && (0..nodes).all(|v| self.get(v as u32).windows(2).all(|w| w[0] < w[1]));
        if ok {
            Ok(())
        } else {
            Err(Error::Format(format!("{what} lists are malformed")))
        }
    }
}

/// Boxes of side in `[2r, 4r)` covering the ball `|x - center|² <= r_sq`.
///
/// Per axis this is the cell containing the center plus whichever neighbor
/// cells the ball reaches; the result is the product of the per-axis ranges.
/// A neighbor cell is taken when the exact ball meets it, or when some
/// floating-point coordinate inside it still passes the rounded test
/// `(t - c)² <= r_sq`. The side is at least the exact diameter, so the exact
/// ball never spans more than two cells per axis.
pub fn boxes_for_ball(center: &[f64], r_sq: f64) -> std::result::Result<Vec<QtBox>, LevelError> {
    let k = level_for_radius_sq(r_sq)?;
    let d = center.len();
    assert!((1..=MAX_DIM).contains(&d), "unsupported dimension");
    let cells = 1u64 << k;
    let reaches = |t: f64, c: f64| {
        let g = t - c;
        g * g <= r_sq
    };
    let mut ranges = [(0u64, 0u64); MAX_DIM];
    for (j, &c) in center.iter().enumerate() {
        let idx = axis_key(c) >> (KEY_BITS - k);
        let (b0, b1) = (boundary(idx, k), boundary(idx + 1, k));
        let mut lo = idx;
        let mut hi = idx;
        // the lower neighbor is open at b0, the upper one closed at b1
        if idx > 0 && (reaches(b0.next_down(), c) || cmp_sq_diff(c, b0, r_sq) == Ordering::Less) {
            lo -= 1;
        }
        if idx + 1 < cells && (reaches(b1, c) || cmp_sq_diff(b1, c, r_sq) != Ordering::Greater) {
            hi += 1;
        }
        ranges[j] = (lo, hi);
    }

    let mut out = Vec::with_capacity(1 << d);
    let mut anchor = [0u64; MAX_DIM];
    for (j, r) in ranges[..d].iter().enumerate() {
        anchor[j] = r.0;
    }
    loop {
        out.push(QtBox::new(k, &anchor[..d]).expect("anchors inside the root"));
        // odometer over the per-axis ranges, last axis fastest
        let mut j = d;
        loop {
            if j == 0 {
                return Ok(out);
            }
            j -= 1;
            if anchor[j] < ranges[j].1 {
                anchor[j] += 1;
                break;
            }
            anchor[j] = ranges[j].0;
        }
    }
}

/// Candidate-list size bound `⌈2√d⌉^d · 2·5^d`.
pub fn candidate_bound(dim: usize) -> usize {
    let cover = (2.0 * (dim as f64).sqrt()).ceil() as usize;
    cover.pow(dim as u32) * 2 * 5usize.pow(dim as u32)
}

/// Maximum number of reverse nearest neighbors of any query, `2·5^d`.
pub fn answer_bound(dim: usize) -> usize {
    2 * 5usize.pow(dim as u32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnIndex {
    pub(crate) transform: Transform,
    pub(crate) points: PointSet,
    pub(crate) balls: Vec<EmptyBall>,
    pub(crate) tree: CompressedQuadtree,
    pub(crate) finger: FingerTree,
    pub(crate) owners: NodeLists,
    pub(crate) candidates: NodeLists,
}

/// One answered query with its location cost.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryTrace {
    pub result: Vec<usize>,
    pub leaf: Option<NodeId>,
    pub finger_visits: usize,
    pub candidates_checked: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexStats {
    pub points: usize,
    pub dim: usize,
    pub nodes: usize,
    pub ordinary_nodes: usize,
    pub compressed_nodes: usize,
    pub leaves: usize,
    pub marked_cells: usize,
    pub max_candidates: usize,
    pub mean_candidates: f64,
    pub total_candidates: usize,
    pub tree_depth: usize,
    pub finger_nodes: usize,
    pub finger_depth: usize,
    pub memory_bytes: usize,
}

impl RnnIndex {
    /// Builds the index over points given in original coordinates.
    pub fn build(points: &PointSet) -> Result<Self> {
        Self::build_with(points, Exec::default())
    }

    pub fn build_with(points: &PointSet, exec: Exec) -> Result<Self> {
        let (norm, transform) = normalize(points)?;
        let d = norm.dim();
        let n = norm.len();
        if n == 1 {
            let tree = CompressedQuadtree::build(d, &[])?;
            let finger = FingerTree::build(&tree);
            let empty = NodeLists {
                offsets: vec![0; tree.len() + 1],
                items: Vec::new(),
            };
            return Ok(RnnIndex {
                transform,
                points: norm,
                balls: Vec::new(),
                tree,
                finger,
                owners: empty.clone(),
                candidates: empty,
            });
        }

        let balls = all_nearest_neighbors_with(&norm, exec)?;
        let per_ball = map_slice(exec, &balls, |b| boxes_for_ball(norm.point(b.owner), b.r_sq));
        let mut stored: Vec<(usize, QtBox)> = Vec::with_capacity(n * 2);
        for (i, boxes) in per_ball.into_iter().enumerate() {
            let boxes = boxes.map_err(|e| level_error(e, i))?;
            // corners of the axis-range product may miss the ball entirely;
            // a query inside the ball always lands in a box that passes
            stored.extend(
                boxes
                    .into_iter()
                    .filter(|b| ball_box_overlap(norm.point(i), balls[i].r_sq, b))
                    .map(|b| (i, b)),
            );
        }
        let all_boxes: Vec<QtBox> = stored.iter().map(|s| s.1).collect();

        let tree = CompressedQuadtree::build(d, &all_boxes)?;
        let at = map_slice(exec, &stored, |(_, b)| {
            tree.lookup(b).expect("every ball box is a node")
        });
        let owners = group_by_node(tree.len(), stored.iter().map(|s| s.0 as u32).zip(at));
        let candidates = propagate_candidates(&tree, &norm, &balls, &owners);
        let finger = FingerTree::build(&tree);
        Ok(RnnIndex {
            transform,
            points: norm,
            balls,
            tree,
            finger,
            owners,
            candidates,
        })
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transform(&self) -> &Transform {
        &self.transform
    }

    /// Points in normalized coordinates.
    pub fn points(&self) -> &PointSet {
        &self.points
    }

    /// Empty balls by owner index; empty for a single-point index.
    pub fn balls(&self) -> &[EmptyBall] {
        &self.balls
    }

    pub fn tree(&self) -> &CompressedQuadtree {
        &self.tree
    }

    pub fn finger(&self) -> &FingerTree {
        &self.finger
    }

    /// Points whose ball boxes are exactly this node's cell.
    pub fn owners(&self, node: NodeId) -> &[u32] {
        self.owners.get(node)
    }

    /// Candidate list `L(node)`, ascending.
    pub fn candidates(&self, node: NodeId) -> &[u32] {
        self.candidates.get(node)
    }

    /// Reverse nearest neighbors of `q` (original coordinates), ascending.
    pub fn query(&self, q: &[f64]) -> Vec<usize> {
        self.query_traced(q).result
    }

    pub fn query_traced(&self, q: &[f64]) -> QueryTrace {
        assert_eq!(q.len(), self.dim(), "query dimension mismatch");
        self.query_normalized_traced(&self.transform.apply(q))
    }

    /// Query with a point already in normalized coordinates.
    pub fn query_normalized(&self, y: &[f64]) -> Vec<usize> {
        self.query_normalized_traced(y).result
    }

    pub fn query_normalized_traced(&self, y: &[f64]) -> QueryTrace {
        assert_eq!(y.len(), self.dim(), "query dimension mismatch");
        let empty = |finger_visits| QueryTrace {
            result: Vec::new(),
            leaf: None,
            finger_visits,
            candidates_checked: 0,
        };
        if self.len() == 1 {
            return QueryTrace {
                result: vec![0],
                leaf: None,
                finger_visits: 0,
                candidates_checked: 0,
            };
        }
        // every empty ball lies inside the root cell
        if !y.iter().all(|&v| (-1.0..=1.0).contains(&v)) {
            return empty(0);
        }
        let key = GridKey::from_normalized(y);
        let trace = self.finger.locate_traced(&self.tree, &key);
        let cands = self.candidates.get(trace.leaf);
        let result = cands
            .iter()
            .map(|&i| i as usize)
            .filter(|&i| dist_sq(y, self.points.point(i)) <= self.balls[i].r_sq)
            .collect();
        QueryTrace {
            result,
            leaf: Some(trace.leaf),
            finger_visits: trace.visited,
            candidates_checked: cands.len(),
        }
    }

    /// Answers many queries; output order matches input order.
    pub fn query_batch(&self, queries: &PointSet) -> Vec<Vec<usize>> {
        self.query_batch_with(queries, Exec::default())
    }

    pub fn query_batch_with(&self, queries: &PointSet, exec: Exec) -> Vec<Vec<usize>> {
        assert_eq!(queries.dim(), self.dim(), "query dimension mismatch");
        map_indexed(exec, queries.len(), |i| self.query(queries.point(i)))
    }

    pub fn stats(&self) -> IndexStats {
        let t = &self.tree;
        let mut max_c = 0;
        let mut sum_c = 0usize;
        let mut ordinary = 0usize;
        for v in 0..t.len() as u32 {
            if !t.is_compressed(v) {
                let c = self.candidates(v).len();
                ordinary += 1;
                sum_c += c;
                max_c = max_c.max(c);
            }
        }
        IndexStats {
            points: self.len(),
            dim: self.dim(),
            nodes: t.len(),
            ordinary_nodes: ordinary,
            compressed_nodes: t.compressed_count(),
            leaves: t.leaf_count(),
            marked_cells: t.marked_count(),
            max_candidates: max_c,
            mean_candidates: sum_c as f64 / ordinary.max(1) as f64,
            total_candidates: self.candidates.items.len(),
            tree_depth: t.depth(),
            finger_nodes: self.finger.len(),
            finger_depth: self.finger.depth(),
            memory_bytes: self.memory_bytes(),
        }
    }

    fn memory_bytes(&self) -> usize {
        use std::mem::size_of;
        let t = &self.tree;
        let f = &self.finger;
        size_of::<f64>() * (self.points.coords().len() + self.transform.center.len() + 1)
            + size_of::<EmptyBall>() * self.balls.len()
            + t.level.len() * (size_of::<u8>() * 2 + size_of::<u16>() + size_of::<u32>() * 2)
            + size_of::<u64>() * t.anchors.len()
            + size_of::<u32>()
                * (self.owners.offsets.len()
                    + self.owners.items.len()
                    + self.candidates.offsets.len()
                    + self.candidates.items.len()
                    + f.sep.len() * 3
                    + f.inside.len())
    }

    /// Corrupts the index by adding point 0 to the root's candidate list,
    /// where no empty ball qualifies. Test fixture for the invariant checkers.
    #[doc(hidden)]
    pub fn inject_candidate_fault(&mut self) {
        if self.len() < 2 || self.candidates.get(0).contains(&0) {
            return;
        }
        let lists = &mut self.candidates;
        lists.items.insert(lists.offsets[0] as usize, 0);
        for o in lists.offsets.iter_mut().skip(1) {
            *o += 1;
        }
    }
}

fn level_error(e: LevelError, point: usize) -> Error {
    match e {
        LevelError::BelowResolution(level) => Error::SpreadTooLarge {
            point,
            level,
            max: MAX_BALL_LEVEL,
        },
        LevelError::AboveRoot | LevelError::NotPositive => {
            Error::InvalidInput(format!("empty ball of point {point} has an invalid radius"))
        }
    }
}

fn group_by_node(nodes: usize, pairs: impl Iterator<Item = (u32, NodeId)> + Clone) -> NodeLists {
    let mut offsets = vec![0u32; nodes + 1];
    for (_, v) in pairs.clone() {
        offsets[v as usize + 1] += 1;
    }
    for v in 0..nodes {
        offsets[v + 1] += offsets[v];
    }
    let mut fill = offsets.clone();
    let mut items = vec![0u32; offsets[nodes] as usize];
    for (i, v) in pairs {
        items[fill[v as usize] as usize] = i;
        fill[v as usize] += 1;
    }
    for v in 0..nodes {
        let s = &mut items[offsets[v] as usize..offsets[v + 1] as usize];
        s.sort_unstable();
    }
    NodeLists { offsets, items }
}

/// Top-down candidate lists: an ordinary node keeps its owners plus the
/// parent's candidates whose balls overlap its cell; a compressed node copies
/// its parent's list. Parents precede children in the arena, so one forward
/// pass suffices.
pub(crate) fn propagate_candidates(
    tree: &CompressedQuadtree,
    points: &PointSet,
    balls: &[EmptyBall],
    owners: &NodeLists,
) -> NodeLists {
    let m = tree.len();
    let mut offsets = Vec::with_capacity(m + 1);
    offsets.push(0u32);
    let mut items: Vec<u32> = Vec::with_capacity(owners.items.len() * 4);
    let mut inherited: Vec<u32> = Vec::new();
    for v in 0..m as u32 {
        inherited.clear();
        if let Some(p) = tree.parent(v) {
            let parent = &items[offsets[p as usize] as usize..offsets[p as usize + 1] as usize];
            if tree.is_compressed(v) {
                inherited.extend_from_slice(parent);
            } else {
                let cell = tree.cell_box(v);
                inherited.extend(parent.iter().copied().filter(|&k| {
                    ball_box_overlap(points.point(k as usize), balls[k as usize].r_sq, &cell)
                }));
            }
        }
        merge_sorted(&inherited, owners.get(v), &mut items);
        offsets.push(items.len() as u32);
    }
    NodeLists { offsets, items }
}

fn merge_sorted(a: &[u32], b: &[u32], out: &mut Vec<u32>) {
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) if x == y => {
                i += 1;
                j += 1;
                x
            }
            (Some(&x), Some(&y)) if x < y => {
                i += 1;
                x
            }
            (Some(_), Some(&y)) => {
                j += 1;
                y
            }
            (Some(&x), None) => {
                i += 1;
                x
            }
            (None, Some(&y)) => {
                j += 1;
                y
            }
            (None, None) => unreachable!(),
        };
        out.push(next);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::side;

    fn anchors(boxes: &[QtBox]) -> Vec<Vec<u64>> {
        let mut v: Vec<Vec<u64>> = boxes.iter().map(|b| b.anchor().to_vec()).collect();
        v.sort();
        v
    }

    #[test]
    fn ball_boxes_1d() {
        let boxes = boxes_for_ball(&[0.0], 0.09).unwrap();
        assert!(boxes.iter().all(|b| b.level() == 1));
        assert_eq!(anchors(&boxes), vec![vec![0], vec![1]]);
    }

    #[test]
    fn ball_boxes_2d() {
        let boxes = boxes_for_ball(&[0.1, 0.1], 0.09).unwrap();
        assert!(boxes.iter().all(|b| b.level() == 1 && side(1) == 1.0));
        assert_eq!(anchors(&boxes), vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
    }

    #[test]
    fn ball_inside_one_cell() {
        // radius just under 1/16 -> side 1/8; cell [0.375, 0.5)^2 holds the ball
        let boxes = boxes_for_ball(&[0.4375, 0.4375], 0.9 / 256.0).unwrap();
        assert_eq!(boxes.len(), 1);
        assert_eq!(boxes[0].level(), 4);
        assert_eq!(boxes[0].anchor(), &[11, 11]);
    }

    #[test]
    fn tangent_ball_takes_closed_side_only() {
        // ball [-1/4, 0] with side 1/4: touches -1/4 (inside cell [-1/4,0)) and 0
        let boxes = boxes_for_ball(&[-0.125], 1.0 / 64.0).unwrap();
        assert_eq!(boxes.iter().map(|b| b.level()).collect::<Vec<_>>(), vec![3, 3]);
        let lows: Vec<f64> = boxes.iter().map(|b| b.bounds(0).0).collect();
        assert_eq!(lows, vec![-0.25, 0.0]);
    }

    #[test]
    fn rounding_reach_adds_neighbor() {
        // with center r above 0, the float just below 0 rounds onto the sphere
        let r = 0.375;
        let r_sq = r * r;
        let boxes = boxes_for_ball(&[r], r_sq).unwrap();
        let t = 0.0f64.next_down();
        assert!((t - r) * (t - r) <= r_sq);
        let key = GridKey::from_normalized(&[t]);
        assert!(boxes.iter().any(|b| b.contains_key(&key)));
    }

    #[test]
    fn spread_too_large() {
        assert_eq!(
            boxes_for_ball(&[0.0, 0.0], 1e-40),
            Err(LevelError::BelowResolution(66))
        );
        let ps = PointSet::from_rows(&[[0.0], [1e-16], [1.0]]).unwrap();
        assert!(matches!(RnnIndex::build(&ps), Err(Error::SpreadTooLarge { point: 0, .. })));
    }

    #[test]
    fn merge_dedups() {
        let mut out = Vec::new();
        merge_sorted(&[1, 4, 7], &[2, 4, 9], &mut out);
        assert_eq!(out, vec![1, 2, 4, 7, 9]);
    }

    #[test]
    fn single_point_index() {
        let ps = PointSet::from_rows(&[[4.0, 2.0]]).unwrap();
        let idx = RnnIndex::build(&ps).unwrap();
        assert_eq!(idx.query(&[1e9, -3.0]), vec![0]);
        let s = idx.stats();
        assert_eq!((s.nodes, s.max_candidates, s.total_candidates), (1, 0, 0));
    }

    #[test]
    fn two_points_1d() {
        let ps = PointSet::from_rows(&[[0.0], [1.0]]).unwrap();
        let idx = RnnIndex::build(&ps).unwrap();
        // normalized at ±1/4, radius 1/2 -> level 1
        for b in idx.balls() {
            assert_eq!(b.r_sq, 0.25);
        }
        assert_eq!(idx.query(&[0.0]), vec![0, 1]);
        assert_eq!(idx.query(&[0.4]), vec![0, 1]);
        assert_eq!(idx.query(&[1.6]), vec![1]);
        assert_eq!(idx.query(&[-5.0]), Vec::<usize>::new());
        for v in 0..idx.tree().len() as u32 {
            for &o in idx.owners(v) {
                assert_eq!(idx.tree().cell_box(v).level(), 1, "owner {o}");
            }
        }
    }

    #[test]
    fn square_corners() {
        let ps = PointSet::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let idx = RnnIndex::build(&ps).unwrap();
        let r0 = idx.balls()[0].r_sq;
        assert!(idx.balls().iter().all(|b| b.r_sq == r0));
        assert_eq!(idx.query(&[0.5, 0.5]), vec![0, 1, 2, 3]);
        assert_eq!(idx.query(&[0.0, 0.0]), vec![0, 1, 2]);
        assert_eq!(idx.query(&[-1.5, 0.0]), Vec::<usize>::new());
    }

    #[test]
    fn fault_injection_touches_root_list() {
        let ps = PointSet::from_rows(&[[0.0], [1.0], [3.0]]).unwrap();
        let mut idx = RnnIndex::build(&ps).unwrap();
        assert!(idx.candidates(0).is_empty());
        idx.inject_candidate_fault();
        assert_eq!(idx.candidates(0), &[0]);
        idx.candidates.validate(idx.tree.len(), 3, "candidate").unwrap();
    }
}
