//! Versioned little-endian index file.
//!
//! ```text
//! "RNNQ"  u32 version  u32 dim  u32 key_bits
//! transform: dim × f64 center, f64 sigma
//! u64 n, n·dim × f64 normalized points
//! u64 ball count, per ball: u64 nn, f64 r_sq   (owner = position)
//! u64 node count, per node: u8 level, u8 flags, u16 child count,
//!     u32 parent, u32 first child, dim × u64 anchor
//! owner lists, then candidate lists: (nodes+1) × u32 offsets, u64 len, len × u32
//! u64 finger count, per finger node: u32 separator, u32 outside, u32 child table start;
//!     u64 table len, len × u32
//! ```
//! Absent links are `u32::MAX`.

use std::io::{Read, Write};
use std::path::Path;

use super::{NodeLists, RnnIndex};
use crate::allnn::EmptyBall;
use crate::error::{Error, Result};
use crate::geometry::{PointSet, Transform, KEY_BITS, MAX_DIM};
use crate::quadtree::{CompressedQuadtree, FingerTree};

pub const MAGIC: &[u8; 4] = b"RNNQ";
pub const FORMAT_VERSION: u32 = 1;

struct Out(Vec<u8>);

impl Out {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32s(&mut self, v: &[u32]) {
        for &x in v {
            self.u32(x);
        }
    }
    fn lists(&mut self, l: &NodeLists) {
        self.u32s(&l.offsets);
        self.u64(l.items.len() as u64);
        self.u32s(&l.items);
    }
}

struct In<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> In<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn arr<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.arr::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.arr()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.arr()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.arr()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.arr()?))
    }
    /// A count whose elements need at least `elem` bytes each.
    fn count(&mut self, elem: usize) -> Result<usize> {
        let c = self.u64()?;
        let left = (self.buf.len() - self.pos) as u64;
        if c.saturating_mul(elem as u64) > left {
            return Err(Error::Format(format!("count {c} exceeds the remaining {left} bytes")));
        }
        Ok(c as usize)
    }
    fn u32s(&mut self, n: usize) -> Result<Vec<u32>> {
        if n.saturating_mul(4) > self.buf.len() - self.pos {
            return Err(Error::Format("truncated list".into()));
        }
        (0..n).map(|_| self.u32()).collect()
    }
    fn lists(&mut self, nodes: usize) -> Result<NodeLists> {
        let offsets = self.u32s(nodes + 1)?;
        let len = self.count(4)?;
        let items = self.u32s(len)?;
        Ok(NodeLists { offsets, items })
    }
}

impl RnnIndex {
    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.dim();
        let t = &self.tree;
        let f = &self.finger;
        let mut o = Out(Vec::new());
        o.0.extend_from_slice(MAGIC);
        o.u32(FORMAT_VERSION);
        o.u32(d as u32);
        o.u32(KEY_BITS);
        for &c in &self.transform.center {
            o.f64(c);
        }
        o.f64(self.transform.sigma);
        o.u64(self.len() as u64);
        for &c in self.points.coords() {
            o.f64(c);
        }
        o.u64(self.balls.len() as u64);
        for b in &self.balls {
            o.u64(b.nn as u64);
            o.f64(b.r_sq);
        }
        o.u64(t.len() as u64);
        for v in 0..t.len() {
            o.u8(t.level[v]);
            o.u8(t.flags[v]);
            o.u16(t.child_count[v]);
            o.u32(t.parent[v]);
            o.u32(t.first_child[v]);
            for &a in &t.anchors[v * d..(v + 1) * d] {
                o.u64(a);
            }
        }
        o.lists(&self.owners);
        o.lists(&self.candidates);
        o.u64(f.sep.len() as u64);
        for i in 0..f.sep.len() {
            o.u32(f.sep[i]);
            o.u32(f.outside[i]);
            o.u32(f.inside_start[i]);
        }
        o.u64(f.inside.len() as u64);
        o.u32s(&f.inside);
        o.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = In { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("missing RNNQ magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        let d = r.u32()? as usize;
        if d == 0 || d > MAX_DIM {
            return Err(Error::Format(format!("unsupported dimension {d}")));
        }
        let bits = r.u32()?;
        if bits != KEY_BITS {
            return Err(Error::Format(format!("key width {bits}, expected {KEY_BITS}")));
        }
        let center = (0..d).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let sigma = r.f64()?;
        if !(sigma > 0.0 && sigma.is_finite()) || center.iter().any(|c| !c.is_finite()) {
            return Err(Error::Format("invalid transform".into()));
        }
        let n = r.count(8 * d)?;
        if n == 0 {
            return Err(Error::Format("index holds no points".into()));
        }
        let coords = (0..n * d).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let points = PointSet::new(d, coords).map_err(|e| Error::Format(e.to_string()))?;
        let nb = r.count(16)?;
        if nb != if n == 1 { 0 } else { n } {
            return Err(Error::Format(format!("{nb} balls for {n} points")));
        }
        let mut balls = Vec::with_capacity(nb);
        for owner in 0..nb {
            let nn = r.u64()?;
            let r_sq = r.f64()?;
            if nn >= n as u64 || nn as usize == owner || !(r_sq > 0.0 && r_sq.is_finite()) {
                return Err(Error::Format(format!("invalid ball for point {owner}")));
            }
            balls.push(EmptyBall { owner, nn: nn as usize, r_sq });
        }

        let m = r.count(12 + 8 * d)?;
        let mut tree = CompressedQuadtree {
            dim: d,
            level: Vec::with_capacity(m),
            anchors: Vec::with_capacity(m * d),
            parent: Vec::with_capacity(m),
            first_child: Vec::with_capacity(m),
            child_count: Vec::with_capacity(m),
            flags: Vec::with_capacity(m),
        };
        for _ in 0..m {
            tree.level.push(r.u8()?);
            tree.flags.push(r.u8()?);
            tree.child_count.push(r.u16()?);
            tree.parent.push(r.u32()?);
            tree.first_child.push(r.u32()?);
            for _ in 0..d {
                tree.anchors.push(r.u64()?);
            }
        }
        tree.validate()?;
        let owners = r.lists(m)?;
        owners.validate(m, n, "owner")?;
        let candidates = r.lists(m)?;
        candidates.validate(m, n, "candidate")?;

        let nf = r.count(12)?;
        let mut finger = FingerTree {
            sep: Vec::with_capacity(nf),
            outside: Vec::with_capacity(nf),
            inside_start: Vec::with_capacity(nf),
            inside: Vec::new(),
        };
        for _ in 0..nf {
            finger.sep.push(r.u32()?);
            finger.outside.push(r.u32()?);
            finger.inside_start.push(r.u32()?);
        }
        let ni = r.count(4)?;
        finger.inside = r.u32s(ni)?;
        finger.validate(&tree)?;
        if r.pos != buf.len() {
            return Err(Error::Format(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(RnnIndex {
            transform: Transform { center, sigma },
            points,
            balls,
            tree,
            finger,
            owners,
            candidates,
        })
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
