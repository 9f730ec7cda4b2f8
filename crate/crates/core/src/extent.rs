//! Rectangular index boxes and buffers laid out over them.
//!
//! Dimension 0 varies fastest in memory; the last dimension is the
//! slowest-varying one and is the default tiling dimension.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DIMS: usize = 3;

pub type Index = [i64; MAX_DIMS];

/// Half-open box `[lo, hi)` in up to three dimensions. Unused dimensions are
/// fixed to `[0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Extent {
    pub ndim: usize,
    pub lo: Index,
    pub hi: Index,
}

impl Extent {
    pub fn new(lo: &[i64], hi: &[i64]) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() || lo.len() > MAX_DIMS {
            return Err(Error::InvalidExtent(format!(
                "bounds must have matching length 1..=3, got {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        let mut e = Extent { ndim: lo.len(), lo: [0; 3], hi: [1; 3] };
        for d in 0..lo.len() {
            if lo[d] >= hi[d] {
                return Err(Error::InvalidExtent(format!("dimension {d} is empty: [{}, {})", lo[d], hi[d])));
            }
            e.lo[d] = lo[d];
            e.hi[d] = hi[d];
        }
        Ok(e)
    }

    /// Box of the given sizes starting at the origin.
    pub fn sized(sizes: &[i64]) -> Result<Self> {
        Self::new(&vec![0; sizes.len()], sizes)
    }

    pub fn len(&self, d: usize) -> i64 {
        self.hi[d] - self.lo[d]
    }

    pub fn points(&self) -> u64 {
        (0..MAX_DIMS).map(|d| self.len(d) as u64).product()
    }

    pub fn contains(&self, p: &Index) -> bool {
        (0..MAX_DIMS).all(|d| p[d] >= self.lo[d] && p[d] < self.hi[d])
    }

    pub fn contains_extent(&self, other: &Extent) -> bool {
        (0..MAX_DIMS).all(|d| other.lo[d] >= self.lo[d] && other.hi[d] <= self.hi[d])
    }

    pub fn intersect(&self, other: &Extent) -> Option<Extent> {
        let mut out = *self;
        for d in 0..MAX_DIMS {
            out.lo[d] = self.lo[d].max(other.lo[d]);
            out.hi[d] = self.hi[d].min(other.hi[d]);
            if out.lo[d] >= out.hi[d] {
                return None;
            }
        }
        Some(out)
    }

    /// Smallest box containing both.
    pub fn hull(&self, other: &Extent) -> Extent {
        let mut out = *self;
        for d in 0..MAX_DIMS {
            out.lo[d] = self.lo[d].min(other.lo[d]);
            out.hi[d] = self.hi[d].max(other.hi[d]);
        }
        out
    }

    /// Grow by per-dimension amounts: `lo += ext_lo`, `hi += ext_hi`.
    pub fn expand(&self, ext_lo: &Index, ext_hi: &Index) -> Extent {
        let mut out = *self;
        for d in 0..self.ndim {
            out.lo[d] += ext_lo[d];
            out.hi[d] += ext_hi[d];
        }
        out
    }

    /// Replace the bounds of dimension `d`; `None` when the interval is empty.
    pub fn with_dim(&self, d: usize, lo: i64, hi: i64) -> Option<Extent> {
        if lo >= hi {
            return None;
        }
        let mut out = *self;
        out.lo[d] = lo;
        out.hi[d] = hi;
        Some(out)
    }

    /// `self \ other` as disjoint boxes.
    pub fn subtract(&self, other: &Extent) -> Vec<Extent> {
        let Some(mid) = self.intersect(other) else { return vec![*self] };
        let mut out = Vec::new();
        let mut rest = *self;
        for d in 0..MAX_DIMS {
            if rest.lo[d] < mid.lo[d] {
                let mut b = rest;
                b.hi[d] = mid.lo[d];
                out.push(b);
            }
            if mid.hi[d] < rest.hi[d] {
                let mut b = rest;
                b.lo[d] = mid.hi[d];
                out.push(b);
            }
            rest.lo[d] = mid.lo[d];
            rest.hi[d] = mid.hi[d];
        }
        out
    }

    /// Row-major position of `p` inside this box.
    pub fn offset_of(&self, p: &Index) -> usize {
        let mut off = 0i64;
        let mut stride = 1i64;
        for (d, &x) in p.iter().enumerate() {
            off += (x - self.lo[d]) * stride;
            stride *= self.len(d);
        }
        off as usize
    }

    pub fn strides(&self) -> Index {
        [1, self.len(0), self.len(0) * self.len(1)]
    }

    /// Calls `f` with the starting index of every row (dimension 0 segment),
    /// in memory order.
    pub fn for_each_row(&self, mut f: impl FnMut(Index)) {
        for k in self.lo[2]..self.hi[2] {
            for j in self.lo[1]..self.hi[1] {
                f([self.lo[0], j, k]);
            }
        }
    }

    pub fn for_each_point(&self, mut f: impl FnMut(Index)) {
        self.for_each_row(|row| {
            for i in self.lo[0]..self.hi[0] {
                f([i, row[1], row[2]]);
            }
        });
    }
}

impl std::fmt::Display for Extent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for d in 0..self.ndim {
            if d > 0 {
                write!(f, "x")?;
            }
            write!(f, "[{},{})", self.lo[d], self.hi[d])?;
        }
        Ok(())
    }
}

/// Dense f64 storage covering an [`Extent`].
#[derive(Clone, Debug, PartialEq)]
pub struct BoxBuf {
    pub ext: Extent,
    pub data: Vec<f64>,
}

impl BoxBuf {
    pub fn filled(ext: Extent, value: f64) -> Self {
        BoxBuf { ext, data: vec![value; ext.points() as usize] }
    }

    #[inline]
    pub fn index(&self, p: &Index) -> usize {
        debug_assert!(self.ext.contains(p), "{p:?} outside {}", self.ext);
        self.ext.offset_of(p)
    }

    pub fn get(&self, p: &Index) -> f64 {
        self.data[self.index(p)]
    }

    pub fn set(&mut self, p: &Index, v: f64) {
        let i = self.index(p);
        self.data[i] = v;
    }

    /// Copy `region` (which must lie inside both boxes) from `src`.
    pub fn copy_region_from(&mut self, src: &BoxBuf, region: &Extent) {
        assert!(self.ext.contains_extent(region) && src.ext.contains_extent(region));
        let n = region.len(0) as usize;
        region.for_each_row(|row| {
            let s = src.index(&row);
            let d = self.index(&row);
            self.data[d..d + n].copy_from_slice(&src.data[s..s + n]);
        });
    }

    /// Bitwise comparison over `region`.
    pub fn region_bits_eq(&self, other: &BoxBuf, region: &Extent) -> bool {
        let mut eq = true;
        region.for_each_point(|p| {
            eq &= self.get(&p).to_bits() == other.get(&p).to_bits();
        });
        eq
    }
}
