//! Seeded test instances and query mixes.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};

use crate::geometry::PointSet;
use crate::rnn_index::RnnIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Distribution {
    Uniform,
    Clusters,
    /// Axis-aligned integer lattice; every point has many tied neighbors.
    Grid,
    Collinear,
    /// Half uniform, half packed into a cluster a million times smaller.
    TwoScale,
}

impl Distribution {
    pub const ALL: [Distribution; 5] = [
        Distribution::Uniform,
        Distribution::Clusters,
        Distribution::Grid,
        Distribution::Collinear,
        Distribution::TwoScale,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Distribution::Uniform => "uniform",
            Distribution::Clusters => "clusters",
            Distribution::Grid => "grid",
            Distribution::Collinear => "collinear",
            Distribution::TwoScale => "two-scale",
        }
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Distribution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Distribution::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| {
                format!("unknown distribution {s:?} (uniform, clusters, grid, collinear, two-scale)")
            })
    }
}

fn rng_for(tag: u64, n: usize, d: usize, seed: u64) -> ChaCha8Rng {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for x in [tag, n as u64, d as u64] {
        h = (h ^ x).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    }
    ChaCha8Rng::seed_from_u64(h)
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Collects distinct points from `draw` until `n` are found.
fn distinct(n: usize, d: usize, mut draw: impl FnMut() -> Vec<f64>) -> PointSet {
    let mut seen = HashSet::with_capacity(n);
    let mut coords = Vec::with_capacity(n * d);
    while seen.len() < n {
        let p = draw();
        let key: Vec<u64> = p.iter().map(|x| (x + 0.0).to_bits()).collect();
        if seen.insert(key) {
            coords.extend_from_slice(&p);
        }
    }
    PointSet::new(d, coords).expect("generated points are finite")
}

/// `n` distinct points in `d` dimensions drawn from `dist`. Same arguments,
/// same points.
pub fn generate(dist: Distribution, n: usize, d: usize, seed: u64) -> PointSet {
    let mut rng = rng_for(dist as u64, n, d, seed);
    match dist {
        Distribution::Uniform => distinct(n, d, || (0..d).map(|_| rng.random::<f64>()).collect()),
        Distribution::Clusters => {
            let k = (n / 100).clamp(1, 32);
            let centers: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..d).map(|_| rng.random_range(0.0..100.0)).collect())
                .collect();
            distinct(n, d, || {
                let c = &centers[rng.random_range(0..k)];
                c.iter()
                    .map(|&x| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        x + z
                    })
                    .collect()
            })
        }
        Distribution::Grid => {
            let mut m = 1usize;
            while m.pow(d as u32) < n {
                m += 1;
            }
            let mut coords = Vec::with_capacity(n * d);
            for i in 0..n {
                let mut r = i;
                for _ in 0..d {
                    coords.push((r % m) as f64);
                    r /= m;
                }
            }
            PointSet::new(d, coords).expect("finite")
        }
        Distribution::Collinear => {
            let dir = unit_vector(&mut rng, d);
            let base: Vec<f64> = (0..d).map(|_| rng.random_range(-10.0..10.0)).collect();
            distinct(n, d, || {
                let t = rng.random_range(0.0..100.0);
                base.iter().zip(&dir).map(|(b, v)| b + t * v).collect()
            })
        }
        Distribution::TwoScale => {
            let center: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            let mut i = 0;
            distinct(n, d, || {
                i += 1;
                if i % 2 == 0 {
                    (0..d).map(|_| rng.random::<f64>()).collect()
                } else {
                    center.iter().map(|c| c + 1e-6 * rng.random::<f64>()).collect()
                }
            })
        }
    }
}

/// Adversarial instance: clusters nested at scales 1, 1e-2, ..., 1e-8, each
/// tucked into the corner of the previous one. Forces long compressed chains.
/// Within a cluster points sit on a jittered lattice, so the closest pair is
/// never far below the lattice pitch.
pub fn nested_scales(n: usize, d: usize, seed: u64) -> PointSet {
    const LEVELS: usize = 5;
    let mut rng = rng_for(99, n, d, seed);
    let per = n.div_ceil(LEVELS);
    let mut m = 1usize;
    while m.pow(d as u32) < per {
        m += 1;
    }
    let mut origin = vec![0.0; d];
    let mut scale = 1.0;
    let mut groups = Vec::with_capacity(LEVELS);
    for _ in 0..LEVELS {
        groups.push((origin.clone(), scale));
        origin = origin.iter().map(|o| o + 0.9 * scale).collect();
        scale *= 1e-2;
    }
    let pitch = 0.8 / m as f64;
    let mut coords = Vec::with_capacity(n * d);
    for i in 0..n {
        let (o, s) = &groups[i % LEVELS];
        let mut k = i / LEVELS;
        for x in o {
            let cell = (k % m) as f64 + 0.5 + rng.random_range(-0.25..0.25);
            k /= m;
            coords.push(x + s * pitch * cell);
        }
    }
    PointSet::new(d, coords).expect("finite")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryKind {
    Random,
    DataPoint,
    /// On or a few ulps off an empty ball's boundary sphere.
    BallBoundary,
    FarOutside,
}

/// A query in normalized coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub kind: QueryKind,
    pub coords: Vec<f64>,
}

/// `count` normalized queries split evenly among the four kinds.
pub fn queries(index: &RnnIndex, count: usize, seed: u64) -> Vec<Query> {
    let d = index.dim();
    let n = index.len();
    let pts = index.points();
    let mut rng = rng_for(7, n, d, seed);
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in pts.iter() {
        for j in 0..d {
            lo[j] = lo[j].min(p[j]);
            hi[j] = hi[j].max(p[j]);
        }
    }
    let spread = (0..d).map(|j| hi[j] - lo[j]).fold(0.0, f64::max).max(1e-3);
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let (kind, coords) = match k % 4 {
            0 => {
                let c = (0..d)
                    .map(|j| rng.random_range((lo[j] - 0.1 * spread)..=(hi[j] + 0.1 * spread)))
                    .collect();
                (QueryKind::Random, c)
            }
            1 => (QueryKind::DataPoint, pts.point(rng.random_range(0..n)).to_vec()),
            2 if n >= 2 => {
                let i = rng.random_range(0..n);
                let b = &index.balls()[i];
                let p = pts.point(i);
                let mut c: Vec<f64> = match rng.random_range(0..3) {
                    // the neighbor itself sits exactly on the sphere
                    0 => pts.point(b.nn).to_vec(),
                    1 => {
                        let mut c = p.to_vec();
                        let j = rng.random_range(0..d);
                        let r = b.r_sq.sqrt();
                        c[j] += if rng.random::<bool>() { r } else { -r };
                        c
                    }
                    _ => {
                        let u = unit_vector(&mut rng, d);
                        let r = b.r_sq.sqrt();
                        p.iter().zip(&u).map(|(x, v)| x + r * v).collect()
                    }
                };
                let j = rng.random_range(0..d);
                for _ in 0..rng.random_range(0..3) {
                    c[j] = if rng.random::<bool>() { c[j].next_up() } else { c[j].next_down() };
                }
                (QueryKind::BallBoundary, c)
            }
            _ => {
                let u = unit_vector(&mut rng, d);
                let c = (0..d)
                    .map(|j| 0.5 * (lo[j] + hi[j]) + 10.0 * spread * u[j])
                    .collect();
                (QueryKind::FarOutside, c)
            }
        };
        out.push(Query { kind, coords });
    }
    out
}
