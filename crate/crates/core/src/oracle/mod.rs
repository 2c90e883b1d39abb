//! Brute-force references and invariant checkers.
//!
//! Nothing here shares data structures with the index beyond the geometry
//! primitives: the references are quadratic scans and the overlap checks use
//! exact rational arithmetic.

pub mod corpus;
mod naive;

pub use naive::naive_quadtree_cells;

use std::cmp::Ordering;
use std::fmt::Write as _;

use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::allnn::EmptyBall;
use crate::error::{Error, Result};
use crate::geometry::{ball_box_overlap, dist_sq, PointSet, QtBox};
use crate::rnn_index::{answer_bound, candidate_bound, RnnIndex};

/// Default node × point budget for [`candidate_semantics_check`].
pub const DEFAULT_CHECK_CAP: usize = 2000;

/// Above this many points the quadratic all-NN scan is replaced by the
/// kd search, which is itself checked bit-exactly against the scan.
pub const BRUTE_FORCE_LIMIT: usize = 20_000;

/// Squared empty-ball radii for the reference answers.
pub fn reference_radii(points: &PointSet) -> Result<Vec<f64>> {
    let balls = if points.len() <= BRUTE_FORCE_LIMIT {
        allnn_brute_force(points)?
    } else {
        crate::allnn::all_nearest_neighbors(points)?
    };
    Ok(balls.iter().map(|b| b.r_sq).collect())
}

/// O(n²) nearest neighbors with the same tie-break as the index.
pub fn allnn_brute_force(points: &PointSet) -> Result<Vec<EmptyBall>> {
    let n = points.len();
    if n < 2 {
        return Err(Error::InvalidInput("need at least 2 points".into()));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut best = EmptyBall {
            owner: i,
            nn: usize::MAX,
            r_sq: f64::INFINITY,
        };
        for j in 0..n {
            if j != i {
                let d = dist_sq(points.point(i), points.point(j));
                if d < best.r_sq {
                    best.nn = j;
                    best.r_sq = d;
                }
            }
        }
        if best.r_sq == 0.0 {
            return Err(Error::DuplicatePoints {
                first: i.min(best.nn),
                second: i.max(best.nn),
            });
        }
        out.push(best);
    }
    Ok(out)
}

/// Points whose closed empty ball contains `q`, by definition.
pub fn rnn_brute_force(points: &PointSet, q: &[f64]) -> Vec<usize> {
    let n = points.len();
    if n == 1 {
        return vec![0];
    }
    let radii: Vec<f64> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| dist_sq(points.point(i), points.point(j)))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    rnn_brute_force_with_radii(points, &radii, q)
}

/// Linear scan given precomputed squared radii.
pub fn rnn_brute_force_with_radii(points: &PointSet, r_sq: &[f64], q: &[f64]) -> Vec<usize> {
    if points.len() == 1 {
        return vec![0];
    }
    (0..points.len())
        .filter(|&i| dist_sq(points.point(i), q) <= r_sq[i])
        .collect()
}

fn rational(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

/// Exact test: does the closed ball meet the half-open cell?
pub fn exact_ball_meets_cell(center: &[f64], r_sq: f64, cell: &QtBox) -> bool {
    // cheap classification first; exact arithmetic only near tangency
    let mut approx = 0.0;
    for (j, &c) in center.iter().enumerate() {
        let (lo, hi) = cell.bounds(j);
        let g = if c < lo { lo - c } else if c > hi { c - hi } else { 0.0 };
        approx += g * g;
    }
    let tol = 1.0 / (1u64 << 30) as f64;
    if approx < r_sq * (1.0 - tol) {
        return true;
    }
    if approx > r_sq * (1.0 + tol) {
        return false;
    }
    let mut sum = BigRational::from_integer(0.into());
    let mut nearest_on_upper_face = false;
    for (j, &c) in center.iter().enumerate() {
        let (lo, hi) = cell.bounds(j);
        let gap = if c < lo {
            rational(lo) - rational(c)
        } else if c >= hi {
            nearest_on_upper_face = true;
            rational(c) - rational(hi)
        } else {
            continue;
        };
        sum += &gap * &gap;
    }
    match sum.cmp(&rational(r_sq)) {
        Ordering::Less => true,
        Ordering::Equal => !nearest_on_upper_face,
        Ordering::Greater => false,
    }
}

/// What a check ran on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Instance {
    pub n: usize,
    pub d: usize,
    pub distribution: String,
    pub seed: u64,
}

/// One invariant's verdict, with the offending node / point / query on failure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub check: String,
    pub passed: bool,
    pub detail: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub point: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query: Option<Vec<f64>>,
}

impl CheckOutcome {
    pub fn pass(check: &str, detail: impl Into<String>) -> Self {
        CheckOutcome {
            check: check.into(),
            passed: true,
            detail: detail.into(),
            node: None,
            point: None,
            query: None,
        }
    }

    pub fn fail(check: &str, detail: impl Into<String>) -> Self {
        CheckOutcome {
            passed: false,
            ..Self::pass(check, detail)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub instance: Instance,
    pub outcomes: Vec<CheckOutcome>,
}

#[derive(Serialize)]
struct Line<'a> {
    #[serde(flatten)]
    instance: &'a Instance,
    #[serde(flatten)]
    outcome: &'a CheckOutcome,
}

impl CheckReport {
    pub fn new(instance: Instance) -> Self {
        CheckReport {
            instance,
            outcomes: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.outcomes.iter().filter(|o| !o.passed)
    }

    pub fn merge(&mut self, other: CheckReport) {
        self.outcomes.extend(other.outcomes);
    }

    pub fn render_text(&self) -> String {
        let i = &self.instance;
        let mut s = format!(
            "instance n={} d={} dist={} seed={}\n",
            i.n, i.d, i.distribution, i.seed
        );
        for o in &self.outcomes {
            let _ = write!(
                s,
                "  [{}] {}: {}",
                if o.passed { "PASS" } else { "FAIL" },
                o.check,
                o.detail
            );
            if let Some(v) = o.node {
                let _ = write!(s, " (node {v})");
            }
            if let Some(p) = o.point {
                let _ = write!(s, " (point {p})");
            }
            if let Some(q) = &o.query {
                let _ = write!(s, " (query {q:?})");
            }
            s.push('\n');
        }
        s
    }

    /// One JSON object per outcome, newline separated.
    pub fn render_jsonl(&self) -> String {
        let mut s = String::new();
        for o in &self.outcomes {
            let line = Line {
                instance: &self.instance,
                outcome: o,
            };
            s.push_str(&serde_json::to_string(&line).expect("serializable"));
            s.push('\n');
        }
        s
    }
}

fn instance_of(index: &RnnIndex) -> Instance {
    Instance {
        n: index.len(),
        d: index.dim(),
        distribution: "unspecified".into(),
        seed: 0,
    }
}

/// Exhaustive node × point check of the candidate lists.
///
/// For every ordinary node `v` with side `s`:
/// `{i : r_i > s/4 and b_i meets C(v) exactly} ⊆ L(v) ⊆ {i : r_i > s/4 and
/// ball_box_overlap(b_i, C(v))}`, and `|L(v)|` is within [`candidate_bound`].
/// Skipped (reported as a failure) when `n` exceeds `cap`.
pub fn candidate_semantics_check(index: &RnnIndex, cap: usize) -> CheckReport {
    let mut report = CheckReport::new(instance_of(index));
    let n = index.len();
    if n > cap {
        report.outcomes.push(CheckOutcome::fail(
            "candidate-sandwich",
            format!("n = {n} exceeds the check cap {cap}"),
        ));
        return report;
    }
    let tree = index.tree();
    let bound = candidate_bound(index.dim());
    let pts = index.points();
    let mut sandwich: Option<CheckOutcome> = None;
    let mut size: Option<CheckOutcome> = None;
    let mut max_len = 0;
    let mut ordinary = 0;
    'nodes: for v in 0..tree.len() as u32 {
        if tree.is_compressed(v) {
            continue;
        }
        ordinary += 1;
        let list = index.candidates(v);
        max_len = max_len.max(list.len());
        if list.len() > bound && size.is_none() {
            let mut o = CheckOutcome::fail(
                "candidate-bound",
                format!("|L| = {} exceeds {bound}", list.len()),
            );
            o.node = Some(v);
            size = Some(o);
        }
        if n == 1 {
            if !list.is_empty() {
                let mut o = CheckOutcome::fail("candidate-sandwich", "single-point index has candidates");
                o.node = Some(v);
                sandwich = Some(o);
                break;
            }
            continue;
        }
        let cell = tree.cell_box(v);
        let s = cell.side();
        for (i, b) in index.balls().iter().enumerate() {
            let member = list.binary_search(&(i as u32)).is_ok();
            let big = 16.0 * b.r_sq > s * s;
            let p = pts.point(i);
            let violation = if member && !(big && ball_box_overlap(p, b.r_sq, &cell)) {
                Some("listed but outside the upper bound (r > s/4 and eps-overlap)")
            } else if !member && big && exact_ball_meets_cell(p, b.r_sq, &cell) {
                Some("ball meets the cell with r > s/4 but is not listed")
            } else {
                None
            };
            if let Some(why) = violation {
                let mut o = CheckOutcome::fail("candidate-sandwich", why);
                o.node = Some(v);
                o.point = Some(i);
                sandwich = Some(o);
                break 'nodes;
            }
        }
    }
    report.outcomes.push(sandwich.unwrap_or_else(|| {
        CheckOutcome::pass("candidate-sandwich", format!("{ordinary} ordinary nodes"))
    }));
    report.outcomes.push(size.unwrap_or_else(|| {
        CheckOutcome::pass("candidate-bound", format!("max |L| = {max_len} <= {bound}"))
    }));
    report
}

/// Packing check: a ball of radius `r` meets at most `2·5^d` empty balls of
/// radius at least `r`. Radii are taken from the brute-force all-NN scan.
pub fn packing_check(points: &PointSet, trials: usize, seed: u64) -> CheckReport {
    let d = points.dim();
    let mut report = CheckReport::new(Instance {
        n: points.len(),
        d,
        distribution: "unspecified".into(),
        seed,
    });
    let radii: Vec<f64> = match reference_radii(points) {
        Ok(r) => r.iter().map(|r_sq| r_sq.sqrt()).collect(),
        Err(e) => {
            report.outcomes.push(CheckOutcome::fail("packing", e.to_string()));
            return report;
        }
    };
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in points.iter() {
        for j in 0..d {
            lo[j] = lo[j].min(p[j]);
            hi[j] = hi[j].max(p[j]);
        }
    }
    let bound = answer_bound(d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0;
    for t in 0..trials {
        let r = radii[rng.random_range(0..radii.len())] * rng.random_range(0.25..2.0);
        let center: Vec<f64> = (0..d)
            .map(|j| rng.random_range((lo[j] - r)..=(hi[j] + r)))
            .collect();
        let count = (0..points.len())
            .filter(|&i| radii[i] >= r)
            .filter(|&i| {
                let reach = r + radii[i];
                dist_sq(points.point(i), &center) <= reach * reach
            })
            .count();
        worst = worst.max(count);
        if count > bound {
            let mut o = CheckOutcome::fail(
                "packing",
                format!("trial {t}: radius {r:e} meets {count} larger empty balls (bound {bound})"),
            );
            o.query = Some(center);
            report.outcomes.push(o);
            return report;
        }
    }
    report.outcomes.push(CheckOutcome::pass(
        "packing",
        format!("{trials} trials, max count {worst} <= {bound}"),
    ));
    report
}

/// Compares `query` with the brute-force answer on the given normalized
/// query points. The first mismatch becomes the counterexample.
pub fn equivalence_check(index: &RnnIndex, normalized_queries: &[Vec<f64>]) -> CheckReport {
    let mut report = CheckReport::new(instance_of(index));
    let radii: Vec<f64> = if index.len() == 1 {
        vec![]
    } else {
        match reference_radii(index.points()) {
            Ok(r) => r,
            Err(e) => {
                report.outcomes.push(CheckOutcome::fail("oracle-equivalence", e.to_string()));
                return report;
            }
        }
    };
    let bound = answer_bound(index.dim());
    let mut largest = 0;
    for q in normalized_queries {
        let got = index.query_normalized(q);
        let want = rnn_brute_force_with_radii(index.points(), &radii, q);
        largest = largest.max(got.len());
        if got != want || got.len() > bound.max(1) {
            let mut o = CheckOutcome::fail(
                "oracle-equivalence",
                format!("index answered {got:?}, brute force {want:?}"),
            );
            o.query = Some(q.clone());
            report.outcomes.push(o);
            return report;
        }
    }
    report.outcomes.push(CheckOutcome::pass(
        "oracle-equivalence",
        format!(
            "{} queries, largest answer {largest} <= {bound}",
            normalized_queries.len()
        ),
    ));
    report
}
