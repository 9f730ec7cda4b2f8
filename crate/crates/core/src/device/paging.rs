//! Page-granular residency shared by cache and unified modes.

use std::collections::{BTreeMap, HashMap};

use crate::extent::Extent;
use crate::mesh::{Block, DatasetId, ParLoop};

/// Outcome of touching one page.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Access {
    pub hit: bool,
    /// Page pushed out to make room, and whether it was dirty.
    pub evicted: Option<(u64, bool)>,
}

/// Fully associative LRU set of pages.
#[derive(Clone, Debug)]
pub struct PageLru {
    capacity: usize,
    clock: u64,
    pages: HashMap<u64, (u64, bool)>,
    order: BTreeMap<u64, u64>,
}

impl PageLru {
    pub fn new(capacity_pages: usize) -> Self {
        PageLru { capacity: capacity_pages.max(1), clock: 0, pages: HashMap::new(), order: BTreeMap::new() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }

    pub fn contains(&self, page: u64) -> bool {
        self.pages.contains_key(&page)
    }

    /// Marks `page` most recently used, inserting it (and evicting the least
    /// recently used page) on a miss.
    pub fn touch(&mut self, page: u64, write: bool) -> Access {
        self.clock += 1;
        if let Some((stamp, dirty)) = self.pages.get_mut(&page) {
            self.order.remove(stamp);
            *stamp = self.clock;
            *dirty |= write;
            self.order.insert(self.clock, page);
            return Access { hit: true, evicted: None };
        }
        let mut evicted = None;
        if self.pages.len() >= self.capacity {
            let (_, victim) = self.order.pop_first().unwrap();
            let (_, dirty) = self.pages.remove(&victim).unwrap();
            evicted = Some((victim, dirty));
        }
        self.pages.insert(page, (self.clock, write));
        self.order.insert(self.clock, page);
        Access { hit: false, evicted }
    }

    /// Drops `page`; returns whether it was dirty, `None` if not resident.
    pub fn remove(&mut self, page: u64) -> Option<bool> {
        let (stamp, dirty) = self.pages.remove(&page)?;
        self.order.remove(&stamp);
        Some(dirty)
    }

    pub fn clear_dirty(&mut self, page: u64) {
        if let Some((_, d)) = self.pages.get_mut(&page) {
            *d = false;
        }
    }
}

/// Maps every dataset's host allocation onto a page-aligned virtual range.
#[derive(Clone, Debug)]
pub struct PageMap {
    pub page_bytes: u64,
    bases: Vec<u64>,
    elem_bytes: Vec<u64>,
    allocs: Vec<Extent>,
}

impl PageMap {
    pub fn new(block: &Block, page_bytes: u64) -> Self {
        let mut bases = Vec::new();
        let mut next = 0u64;
        for ds in block.datasets() {
            bases.push(next);
            next += ds.bytes().div_ceil(page_bytes) * page_bytes;
        }
        PageMap {
            page_bytes,
            bases,
            elem_bytes: block.datasets().iter().map(|d| d.elem_bytes).collect(),
            allocs: block.datasets().iter().map(|d| d.alloc()).collect(),
        }
    }

    /// Page range `[first, last]` covering `region` of `d` (its bounding
    /// byte span).
    pub fn pages_of(&self, d: DatasetId, region: &Extent) -> (u64, u64) {
        let alloc = &self.allocs[d.0];
        let eb = self.elem_bytes[d.0];
        let first = self.bases[d.0] + alloc.offset_of(&region.lo) as u64 * eb;
        let last_pt = [region.hi[0] - 1, region.hi[1] - 1, region.hi[2] - 1];
        let last = self.bases[d.0] + (alloc.offset_of(&last_pt) as u64 + 1) * eb - 1;
        (first / self.page_bytes, last / self.page_bytes)
    }

    /// Calls `f(page, bytes)` for every page the rows of `region` cover, with
    /// the number of bytes of the region inside that page.
    pub fn for_each_region_page(&self, d: DatasetId, region: &Extent, mut f: impl FnMut(u64, u64)) {
        let row = region.len(0);
        region.for_each_row(|start| self.segment(d, &start, row, &mut f));
    }

    fn segment(&self, d: DatasetId, start: &[i64; 3], len: i64, f: &mut impl FnMut(u64, u64)) {
        let eb = self.elem_bytes[d.0];
        let lo = self.bases[d.0] + self.allocs[d.0].offset_of(start) as u64 * eb;
        let hi = lo + len as u64 * eb;
        let pb = self.page_bytes;
        let mut p = lo / pb;
        while p * pb < hi {
            let a = lo.max(p * pb);
            let b = hi.min((p + 1) * pb);
            f(p, b - a);
            p += 1;
        }
    }

    /// Page touches of `lp` over `sub`, in execution order: per row, per
    /// argument, per distinct outer offset of its stencil, the pages of the
    /// row segment widened by the stencil's reach along dimension 0.
    pub fn for_each_loop_touch(&self, lp: &ParLoop, sub: &Extent, mut f: impl FnMut(u64, bool, u64)) {
        let mut rows: Vec<Vec<([i64; 3], i64, i64)>> = Vec::with_capacity(lp.args.len());
        for a in &lp.args {
            let mut outer: Vec<([i64; 3], i64, i64)> = Vec::new();
            for o in &a.stencil.offsets {
                let key = [0, o[1], o[2]];
                match outer.iter_mut().find(|(k, _, _)| *k == key) {
                    Some((_, lo, hi)) => {
                        *lo = (*lo).min(o[0]);
                        *hi = (*hi).max(o[0]);
                    }
                    None => outer.push((key, o[0], o[0])),
                }
            }
            rows.push(outer);
        }
        let len = sub.len(0);
        sub.for_each_row(|row| {
            for (i, a) in lp.args.iter().enumerate() {
                let write = a.mode.writes();
                for &(off, dlo, dhi) in &rows[i] {
                    let start = [row[0] + dlo, row[1] + off[1], row[2] + off[2]];
                    self.segment(a.dataset, &start, len + dhi - dlo, &mut |p, b| f(p, write, b));
                }
            }
        });
    }

    /// Every page backing dataset `d`.
    pub fn dataset_pages(&self, d: DatasetId) -> std::ops::Range<u64> {
        let bytes = self.allocs[d.0].points() * self.elem_bytes[d.0];
        let first = self.bases[d.0] / self.page_bytes;
        first..first + bytes.div_ceil(self.page_bytes)
    }

    pub fn total_pages(&self) -> u64 {
        (0..self.bases.len()).map(|d| self.dataset_pages(DatasetId(d)).count() as u64).sum()
    }
}
