//! Exact all-nearest-neighbors over a point set.
//!
//! A median-split kd partition with bounding-box pruning. Pruning compares the
//! box lower bound with `>` against the best distance found so far, and the
//! lower bound is computed with the same operations as [`dist_sq`], so ties
//! are never pruned away and the smallest index among equidistant neighbors
//! wins.

use crate::error::{Error, Result};
use crate::exec::{map_indexed, Exec};
use crate::geometry::{dist_sq, PointSet};

const LEAF_SIZE: usize = 8;
const NONE: u32 = u32::MAX;

/// Nearest-neighbor record of one point: the empty ball centered at `owner`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmptyBall {
    pub owner: usize,
    pub nn: usize,
    pub r_sq: f64,
}

#[derive(Debug, Clone)]
struct KdNode {
    start: u32,
    end: u32,
    left: u32,
    right: u32,
}

/// Hierarchical median-split partition supporting exact nearest-neighbor search.
#[derive(Debug)]
pub struct KdPartition<'a> {
    points: &'a PointSet,
    order: Vec<u32>,
    // coordinates permuted into `order`, so leaf scans read contiguous memory
    sorted: Vec<f64>,
    nodes: Vec<KdNode>,
    // per node: d minima then d maxima
    bounds: Vec<f64>,
}

impl<'a> KdPartition<'a> {
    pub fn build(points: &'a PointSet) -> Self {
        let n = points.len();
        let mut part = KdPartition {
            points,
            order: (0..n as u32).collect(),
            sorted: Vec::new(),
            nodes: Vec::with_capacity(2 * n / LEAF_SIZE + 1),
            bounds: Vec::new(),
        };
        if n > 0 {
            part.build_node(0, n);
        }
        part.sorted = part
            .order
            .iter()
            .flat_map(|&i| points.point(i as usize))
            .copied()
            .collect();
        part
    }

    fn build_node(&mut self, start: usize, end: usize) -> u32 {
        let d = self.points.dim();
        let id = self.nodes.len() as u32;
        self.nodes.push(KdNode {
            start: start as u32,
            end: end as u32,
            left: NONE,
            right: NONE,
        });
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for &i in &self.order[start..end] {
            let p = self.points.point(i as usize);
            for j in 0..d {
                lo[j] = lo[j].min(p[j]);
                hi[j] = hi[j].max(p[j]);
            }
        }
        self.bounds.extend_from_slice(&lo);
        self.bounds.extend_from_slice(&hi);

        if end - start <= LEAF_SIZE {
            return id;
        }
        let axis = (0..d)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
            .unwrap_or(0);
        let mid = start + (end - start) / 2;
        let pts = self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts.point(a as usize)[axis]
                .total_cmp(&pts.point(b as usize)[axis])
                .then(a.cmp(&b))
        });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id as usize].left = left;
        self.nodes[id as usize].right = right;
        id
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.left == NONE).count()
    }

    fn lower_bound(&self, node: u32, q: &[f64]) -> f64 {
        let d = q.len();
        let b = &self.bounds[node as usize * 2 * d..(node as usize + 1) * 2 * d];
        let mut s = 0.0;
        for j in 0..d {
            let (lo, hi) = (b[j], b[d + j]);
            let g = if q[j] < lo {
                lo - q[j]
            } else if q[j] > hi {
                q[j] - hi
            } else {
                0.0
            };
            s += g * g;
        }
        s
    }

    /// Nearest point to `q` other than `exclude`, as `(index, dist_sq)`.
    /// Equidistant candidates resolve to the smallest index.
    pub fn nearest(&self, q: &[f64], exclude: Option<usize>) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let skip = exclude.map(|e| e as u32).unwrap_or(NONE);
        let mut best_d = f64::INFINITY;
        let mut best_i = NONE;
        let mut stack: Vec<(u32, f64)> = Vec::with_capacity(64);
        stack.push((0, self.lower_bound(0, q)));
        while let Some((id, lb)) = stack.pop() {
            if lb > best_d {
                continue;
            }
            let node = &self.nodes[id as usize];
            if node.left == NONE {
                let d = q.len();
                for k in node.start as usize..node.end as usize {
                    let i = self.order[k];
                    if i == skip {
                        continue;
                    }
                    let dd = dist_sq(q, &self.sorted[k * d..(k + 1) * d]);
                    if dd < best_d || (dd == best_d && i < best_i) {
                        best_d = dd;
                        best_i = i;
                    }
                }
                continue;
            }
            let lb_l = self.lower_bound(node.left, q);
            let lb_r = self.lower_bound(node.right, q);
            // nearer child popped first
            if lb_l <= lb_r {
                stack.push((node.right, lb_r));
                stack.push((node.left, lb_l));
            } else {
                stack.push((node.left, lb_l));
                stack.push((node.right, lb_r));
            }
        }
        (best_i != NONE).then_some((best_i as usize, best_d))
    }
}

/// Nearest other point and empty-ball radius of every point.
pub fn all_nearest_neighbors(points: &PointSet) -> Result<Vec<EmptyBall>> {
    all_nearest_neighbors_with(points, Exec::default())
}

pub fn all_nearest_neighbors_with(points: &PointSet, exec: Exec) -> Result<Vec<EmptyBall>> {
    let n = points.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "all-nearest-neighbors needs at least 2 points, got {n}"
        )));
    }
    let part = KdPartition::build(points);
    // visiting points in partition order keeps consecutive searches cache-warm
    let found = map_indexed(exec, n, |k| {
        let i = part.order[k] as usize;
        part.nearest(points.point(i), Some(i))
            .expect("at least one other point")
    });
    let mut balls = vec![
        EmptyBall {
            owner: 0,
            nn: 0,
            r_sq: 0.0
        };
        n
    ];
    for (k, (nn, r_sq)) in found.into_iter().enumerate() {
        let owner = part.order[k] as usize;
        balls[owner] = EmptyBall { owner, nn, r_sq };
    }
    if let Some(b) = balls.iter().find(|b| b.r_sq == 0.0) {
        return Err(Error::DuplicatePoints {
            first: b.owner.min(b.nn),
            second: b.owner.max(b.nn),
        });
    }
    Ok(balls)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_scan(ps: &PointSet, i: usize) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for j in 0..ps.len() {
            if j == i {
                continue;
            }
            let d = dist_sq(ps.point(i), ps.point(j));
            if d < best.1 {
                best = (j, d);
            }
        }
        best
    }

    #[test]
    fn two_points() {
        let ps = PointSet::from_rows(&[[0.0], [1.0]]).unwrap();
        let balls = all_nearest_neighbors(&ps).unwrap();
        assert_eq!(
            balls,
            vec![
                EmptyBall { owner: 0, nn: 1, r_sq: 1.0 },
                EmptyBall { owner: 1, nn: 0, r_sq: 1.0 }
            ]
        );
    }

    #[test]
    fn three_points_on_a_line() {
        let ps = PointSet::from_rows(&[[0.0], [1.0], [3.0]]).unwrap();
        let balls = all_nearest_neighbors(&ps).unwrap();
        let r: Vec<f64> = balls.iter().map(|b| b.r_sq).collect();
        assert_eq!(r, vec![1.0, 1.0, 4.0]);
        assert_eq!(balls[2].nn, 1);
        // index 1 is equidistant from 0 and 2 at distances 1 and 2: 0 wins outright
        assert_eq!(balls[1].nn, 0);
    }

    #[test]
    fn ties_go_to_smallest_index() {
        // middle point equidistant from both ends
        let ps = PointSet::from_rows(&[[2.0], [1.0], [0.0]]).unwrap();
        let balls = all_nearest_neighbors(&ps).unwrap();
        assert_eq!(balls[1].nn, 0);
    }

    #[test]
    fn duplicates_rejected() {
        let ps = PointSet::from_rows(&[[0.0, 1.0], [2.0, 2.0], [0.0, 1.0]]).unwrap();
        match all_nearest_neighbors(&ps) {
            Err(Error::DuplicatePoints { first, second }) => assert_eq!((first, second), (0, 2)),
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn partition_shapes() {
        let one = PointSet::from_rows(&[[0.5, 0.5]]).unwrap();
        let p = KdPartition::build(&one);
        assert_eq!((p.node_count(), p.leaf_count()), (1, 1));
        assert_eq!(p.nearest(&[0.0, 0.0], Some(0)), None);

        let rows: Vec<[f64; 1]> = (0..(LEAF_SIZE + 1)).map(|i| [i as f64]).collect();
        let ps = PointSet::from_rows(&rows).unwrap();
        let p = KdPartition::build(&ps);
        assert_eq!((p.node_count(), p.leaf_count()), (3, 2));
    }

    #[test]
    fn matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for d in 1..=4 {
            let coords: Vec<f64> = (0..1000 * d).map(|_| rng.random::<f64>()).collect();
            let ps = PointSet::new(d, coords).unwrap();
            let part = KdPartition::build(&ps);
            for i in 0..ps.len() {
                assert_eq!(part.nearest(ps.point(i), Some(i)), Some(linear_scan(&ps, i)));
                assert_eq!(part.nearest(ps.point(i), None), Some((i, 0.0)));
            }
        }
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let coords: Vec<f64> = (0..3000).map(|_| rng.random::<f64>()).collect();
        let ps = PointSet::new(3, coords).unwrap();
        assert_eq!(
            all_nearest_neighbors_with(&ps, Exec::Sequential).unwrap(),
            all_nearest_neighbors_with(&ps, Exec::Parallel).unwrap()
        );
    }
}
