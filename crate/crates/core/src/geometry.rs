//! Coordinate normalization, dyadic quadtree boxes and the distance predicates
//! shared by every other module.
//!
//! Normalized space places the input inside a small hypercube centered at the
//! origin; quadtree boxes subdivide the root cube `[-1, 1]^d`. A box at level
//! `k` has side `2^(1-k)` and is identified by per-axis integer anchors in
//! `[0, 2^k)`. Points are mapped to [`GridKey`]s of [`KEY_BITS`] bits per axis so
//! that "point lies in box" is a prefix comparison.

use std::cmp::Ordering;

use num_rational::BigRational;

use crate::error::{Error, Result};

/// Bits per axis of a grid key; also the deepest quadtree level.
pub const KEY_BITS: u32 = 48;
/// Deepest level an empty ball may map to.
pub const MAX_BALL_LEVEL: u32 = KEY_BITS - 2;
/// Largest supported dimension (a box split has `2^d` children).
pub const MAX_DIM: usize = 8;
/// Relative slack of [`ball_box_overlap`].
pub const OVERLAP_EPS: f64 = 1.0 / (1u64 << 40) as f64;

const KEY_MAX: u64 = (1u64 << KEY_BITS) - 1;

/// A flat, row-major set of points of equal dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidInput(format!(
                "dimension must be in 1..={MAX_DIM}, got {dim}"
            )));
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(Error::InvalidInput(format!(
                "{} coordinates do not split into points of dimension {dim}",
                coords.len()
            )));
        }
        if let Some(pos) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "point {} has a non-finite coordinate",
                pos / dim
            )));
        }
        Ok(PointSet { dim, coords })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut coords = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::InvalidInput(format!(
                    "point {i} has dimension {}, expected {dim}",
                    r.len()
                )));
            }
            coords.extend_from_slice(r);
        }
        PointSet::new(dim, coords)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

/// Affine map from original coordinates into normalized space:
/// `y = (x - center) / sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transform {
    pub center: Vec<f64>,
    pub sigma: f64,
}

impl Transform {
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        out
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for ((o, &xi), &c) in out.iter_mut().zip(x).zip(&self.center) {
            *o = (xi - c) / self.sigma;
        }
    }

    pub fn invert(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(&self.center)
            .map(|(&yi, &c)| yi * self.sigma + c)
            .collect()
    }
}

/// Maps points into normalized space.
///
/// The bounding box center goes to the origin and its largest extent `w` maps
/// to `1/(2√d)`, so every coordinate lands in `[-1/(4√d), 1/(4√d)]`. An empty
/// ball then has radius at most `1/2` and stays inside `[-3/4, 3/4]^d`.
pub fn normalize(points: &PointSet) -> Result<(PointSet, Transform)> {
    if points.is_empty() {
        return Err(Error::InvalidInput("point set is empty".into()));
    }
    let d = points.dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in points.iter() {
        for j in 0..d {
            lo[j] = lo[j].min(p[j]);
            hi[j] = hi[j].max(p[j]);
        }
    }
    let center: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| l + (h - l) / 2.0).collect();
    let w = lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| h - l)
        .fold(0.0f64, f64::max);
    if !w.is_finite() {
        return Err(Error::InvalidInput("coordinate extent overflows".into()));
    }
    let sigma = if w > 0.0 {
        w * 2.0 * (d as f64).sqrt()
    } else {
        1.0
    };
    let transform = Transform { center, sigma };
    let mut coords = vec![0.0; points.coords().len()];
    for (src, dst) in points.iter().zip(coords.chunks_exact_mut(d)) {
        transform.apply_into(src, dst);
    }
    Ok((PointSet { dim: d, coords }, transform))
}

/// Squared Euclidean distance, summed in ascending axis order.
///
/// Every module compares distances through this function so that equal
/// geometric situations produce bit-identical values.
#[inline]
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let t = x - y;
        s += t * t;
    }
    s
}

/// Side length of a level-`level` box.
#[inline]
pub fn side(level: u32) -> f64 {
    f64::from_bits(((1023 + 1 - level as i64) as u64) << 52)
}

/// Coordinate of the `index`-th cell boundary at `level`: `-1 + index·2^(1-level)`.
/// Exact for every level up to [`KEY_BITS`].
#[inline]
pub fn boundary(index: u64, level: u32) -> f64 {
    index as f64 * side(level) - 1.0
}

/// Per-axis grid key: the largest `a` with `boundary(a, KEY_BITS) <= y`,
/// clamped to `[0, 2^KEY_BITS - 1]`.
pub fn axis_key(y: f64) -> u64 {
    if y.is_nan() || y <= -1.0 {
        return 0;
    }
    if y >= 1.0 {
        return KEY_MAX;
    }
    let approx = ((y + 1.0) * (1u64 << (KEY_BITS - 1)) as f64).floor();
    let mut k = (approx.max(0.0) as u64).min(KEY_MAX);
    while k > 0 && boundary(k, KEY_BITS) > y {
        k -= 1;
    }
    while k < KEY_MAX && boundary(k + 1, KEY_BITS) <= y {
        k += 1;
    }
    k
}

/// A point snapped to the finest grid; box membership is a per-axis prefix test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridKey {
    dim: u8,
    keys: [u64; MAX_DIM],
}

impl GridKey {
    pub fn from_normalized(y: &[f64]) -> Self {
        assert!(!y.is_empty() && y.len() <= MAX_DIM, "unsupported dimension");
        let mut keys = [0u64; MAX_DIM];
        for (k, &v) in keys.iter_mut().zip(y) {
            *k = axis_key(v);
        }
        GridKey {
            dim: y.len() as u8,
            keys,
        }
    }

    pub fn from_axes(axes: &[u64]) -> Self {
        assert!(!axes.is_empty() && axes.len() <= MAX_DIM, "unsupported dimension");
        let mut keys = [0u64; MAX_DIM];
        for (k, &v) in keys.iter_mut().zip(axes) {
            assert!(v <= KEY_MAX, "grid key out of range");
            *k = v;
        }
        GridKey {
            dim: axes.len() as u8,
            keys,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn axes(&self) -> &[u64] {
        &self.keys[..self.dim as usize]
    }
}

/// A dyadic quadtree box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QtBox {
    level: u8,
    dim: u8,
    anchor: [u64; MAX_DIM],
}

impl QtBox {
    pub fn root(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "unsupported dimension");
        QtBox {
            level: 0,
            dim: dim as u8,
            anchor: [0; MAX_DIM],
        }
    }

    pub fn new(level: u32, anchor: &[u64]) -> Result<Self> {
        if anchor.is_empty() || anchor.len() > MAX_DIM {
            return Err(Error::InvalidInput(format!(
                "box dimension {} unsupported",
                anchor.len()
            )));
        }
        if level > KEY_BITS {
            return Err(Error::InvalidInput(format!("box level {level} exceeds {KEY_BITS}")));
        }
        let mut a = [0u64; MAX_DIM];
        for (dst, &v) in a.iter_mut().zip(anchor) {
            if level < 64 && v >> level != 0 {
                return Err(Error::InvalidInput(format!(
                    "anchor {v} outside the root box at level {level}"
                )));
            }
            *dst = v;
        }
        Ok(QtBox {
            level: level as u8,
            dim: anchor.len() as u8,
            anchor: a,
        })
    }

    /// The level-`level` box containing `key`.
    pub fn from_key(key: &GridKey, level: u32) -> Self {
        debug_assert!(level <= KEY_BITS);
        let mut anchor = [0u64; MAX_DIM];
        for (a, &k) in anchor.iter_mut().zip(key.axes()) {
            *a = k >> (KEY_BITS - level);
        }
        QtBox {
            level: level as u8,
            dim: key.dim,
            anchor,
        }
    }

    pub fn level(&self) -> u32 {
        self.level as u32
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn anchor(&self) -> &[u64] {
        &self.anchor[..self.dim as usize]
    }

    pub fn side(&self) -> f64 {
        side(self.level())
    }

    /// Closed extent `[lo, hi]` along `axis`; membership itself is half-open.
    pub fn bounds(&self, axis: usize) -> (f64, f64) {
        let a = self.anchor[axis];
        (boundary(a, self.level()), boundary(a + 1, self.level()))
    }

    #[inline]
    pub fn contains_key(&self, key: &GridKey) -> bool {
        let shift = KEY_BITS - self.level();
        self.anchor()
            .iter()
            .zip(key.axes())
            .all(|(&a, &k)| k >> shift == a)
    }

    /// True when `other` is this box or nested inside it.
    pub fn contains_box(&self, other: &QtBox) -> bool {
        if other.level < self.level {
            return false;
        }
        let shift = other.level() - self.level();
        self.anchor()
            .iter()
            .zip(other.anchor())
            .all(|(&a, &b)| b >> shift == a)
    }

    pub fn parent(&self) -> Option<QtBox> {
        if self.level == 0 {
            return None;
        }
        let mut p = *self;
        p.level -= 1;
        for a in p.anchor.iter_mut() {
            *a >>= 1;
        }
        Some(p)
    }

    /// Quadrant `q` in Morton order: bit `d-1-j` of `q` is the axis-`j` half.
    pub fn child(&self, q: usize) -> QtBox {
        debug_assert!(self.level() < KEY_BITS);
        let d = self.dim();
        let mut c = *self;
        c.level += 1;
        for (j, a) in c.anchor[..d].iter_mut().enumerate() {
            *a = (*a << 1) | ((q >> (d - 1 - j)) & 1) as u64;
        }
        c
    }

    /// Index of the quadrant of this box that contains `key`.
    #[inline]
    pub fn quadrant_of_key(&self, key: &GridKey) -> usize {
        let d = self.dim();
        let shift = KEY_BITS - 1 - self.level();
        key.axes()
            .iter()
            .enumerate()
            .fold(0usize, |q, (j, &k)| q | ((((k >> shift) & 1) as usize) << (d - 1 - j)))
    }

    /// Index of the quadrant of this box that contains the strictly nested box `inner`.
    pub fn quadrant_of_box(&self, inner: &QtBox) -> usize {
        debug_assert!(inner.level > self.level && self.contains_box(inner));
        let d = self.dim();
        let shift = inner.level() - self.level() - 1;
        inner
            .anchor()
            .iter()
            .enumerate()
            .fold(0usize, |q, (j, &a)| q | ((((a >> shift) & 1) as usize) << (d - 1 - j)))
    }

    fn padded(&self, axis: usize) -> u64 {
        self.anchor[axis] << (KEY_BITS - self.level())
    }

    /// Morton (Z-order) comparison of the lower corners; ties put the larger
    /// box first, so sorting yields a preorder of the box hierarchy.
    pub fn morton_cmp(&self, other: &QtBox) -> Ordering {
        debug_assert_eq!(self.dim, other.dim);
        let mut best = 0usize;
        let mut best_x = 0u64;
        for j in 0..self.dim() {
            let x = self.padded(j) ^ other.padded(j);
            if best_x < x && best_x < (best_x ^ x) {
                best = j;
                best_x = x;
            }
        }
        if best_x == 0 {
            self.level.cmp(&other.level)
        } else {
            self.padded(best).cmp(&other.padded(best))
        }
    }
}

/// Smallest quadtree box containing both boxes.
pub fn smallest_common_box(a: &QtBox, b: &QtBox) -> QtBox {
    debug_assert_eq!(a.dim, b.dim);
    let mut diff = 0u64;
    for j in 0..a.dim() {
        diff |= a.padded(j) ^ b.padded(j);
    }
    let split_level = if diff == 0 {
        KEY_BITS
    } else {
        KEY_BITS - 1 - (63 - diff.leading_zeros())
    };
    let level = split_level.min(a.level()).min(b.level());
    let mut anchor = [0u64; MAX_DIM];
    for (j, dst) in anchor[..a.dim()].iter_mut().enumerate() {
        *dst = a.anchor[j] >> (a.level() - level);
    }
    QtBox {
        level: level as u8,
        dim: a.dim,
        anchor,
    }
}

/// Smallest quadtree box containing two grid keys.
pub fn smallest_containing_box(a: &GridKey, b: &GridKey) -> QtBox {
    smallest_common_box(&QtBox::from_key(a, KEY_BITS), &QtBox::from_key(b, KEY_BITS))
}

/// Conservative ball/box overlap against the closed box:
/// `clampdist² <= r_sq·(1 + OVERLAP_EPS)`.
pub fn ball_box_overlap(center: &[f64], r_sq: f64, b: &QtBox) -> bool {
    clamp_dist_sq(center, b) <= r_sq * (1.0 + OVERLAP_EPS)
}

/// Squared distance from `center` to the closed box, same summation order as
/// [`dist_sq`].
pub fn clamp_dist_sq(center: &[f64], b: &QtBox) -> f64 {
    let mut s = 0.0;
    for (j, &c) in center.iter().enumerate() {
        let (lo, hi) = b.bounds(j);
        let g = if c < lo {
            lo - c
        } else if c > hi {
            c - hi
        } else {
            0.0
        };
        s += g * g;
    }
    s
}

/// Why a radius has no valid quadtree level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LevelError {
    /// The radius needs a level finer than [`MAX_BALL_LEVEL`].
    BelowResolution(i64),
    /// The radius is too large for any box inside the root.
    AboveRoot,
    NotPositive,
}

/// Binary decomposition `x = m·2^e` with `m` in `[1, 2)`; returns `(e, m == 1)`.
fn exponent_of(x: f64) -> (i64, bool) {
    debug_assert!(x > 0.0 && x.is_finite());
    let (bits, bias) = if x < f64::MIN_POSITIVE {
        ((x * (1u128 << 64) as f64).to_bits(), 1023 + 64)
    } else {
        (x.to_bits(), 1023)
    };
    let e = ((bits >> 52) & 0x7ff) as i64 - bias;
    (e, bits & ((1u64 << 52) - 1) == 0)
}

fn check_level(k: i64) -> std::result::Result<u32, LevelError> {
    if k < 0 {
        Err(LevelError::AboveRoot)
    } else if k > MAX_BALL_LEVEL as i64 {
        Err(LevelError::BelowResolution(k))
    } else {
        Ok(k as u32)
    }
}

/// The level `k` with `2^(1-k)` in `[2r, 4r)`, i.e. `floor(-log2 r)`.
pub fn level_for_radius(r: f64) -> std::result::Result<u32, LevelError> {
    if r.is_nan() || r <= 0.0 || r.is_infinite() {
        return Err(LevelError::NotPositive);
    }
    let (e, exact) = exponent_of(r);
    check_level(if exact { -e } else { -e - 1 })
}

/// Same as [`level_for_radius`] for `r = √r_sq`, decided exactly on `r_sq`:
/// side `s` satisfies `4·r_sq <= s² < 16·r_sq` with no rounding of the root.
pub fn level_for_radius_sq(r_sq: f64) -> std::result::Result<u32, LevelError> {
    if r_sq.is_nan() || r_sq <= 0.0 || r_sq.is_infinite() {
        return Err(LevelError::NotPositive);
    }
    // largest k with 2^(-2k) >= r_sq
    let (e, exact) = exponent_of(r_sq);
    let k = if exact { (-e).div_euclid(2) } else { (-e - 1).div_euclid(2) };
    check_level(k)
}

fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite value")
}

/// Exact sign of `(a - b)² - r_sq`.
pub(crate) fn cmp_sq_diff(a: f64, b: f64, r_sq: f64) -> Ordering {
    let g = a - b;
    let g2 = g * g;
    const MARGIN: f64 = 1.0 / (1u64 << 45) as f64;
    if g2 < r_sq * (1.0 - MARGIN) {
        return Ordering::Less;
    }
    if g2 > r_sq * (1.0 + MARGIN) {
        return Ordering::Greater;
    }
    let d = exact(a) - exact(b);
    (&d * &d).cmp(&exact(r_sq))
}
