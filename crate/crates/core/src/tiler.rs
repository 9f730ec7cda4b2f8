//! Dependency analysis over a loop chain: skewed tile schedules and the
//! per-dataset footprints the out-of-core executor moves around.
//!
//! Tiling splits a single dimension (by default the slowest-varying one).
//! For every tile the loops are walked in reverse and each loop's tile end is
//! pushed out far enough that
//!
//! * everything a later loop in the tile reads from its output is produced
//!   (read-after-write),
//! * it finishes reading before a later loop overwrites the data
//!   (write-after-read),
//! * it never overwrites a later loop's output in a later tile
//!   (write-after-write).

use std::collections::HashMap;
use std::fmt::Write as _;

use log::warn;
use serde::Serialize;

use crate::chain::LoopChain;
use crate::error::{Error, Result};
use crate::extent::{Extent, Index};
use crate::mesh::{Block, DatasetId};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TilePlan {
    pub tiled_dim: usize,
    pub tile_count: usize,
    /// Nominal exclusive tile ends `e_0 < ... < e_{T-1}`.
    pub nominal: Vec<i64>,
    /// `bounds[j][t]`: exclusive end of loop `j`'s sub-range in tile `t`.
    pub bounds: Vec<Vec<i64>>,
    pub loop_ranges: Vec<Extent>,
}

impl TilePlan {
    /// Sub-range of loop `j` in tile `t`, `None` when empty.
    pub fn sub_range(&self, j: usize, t: usize) -> Option<Extent> {
        let r = &self.loop_ranges[j];
        let start = if t == 0 { r.lo[self.tiled_dim] } else { self.bounds[j][t - 1] };
        r.with_dim(self.tiled_dim, start, self.bounds[j][t])
    }

    pub fn loop_count(&self) -> usize {
        self.loop_ranges.len()
    }
}

/// Default tiling dimension: the slowest-varying one.
pub fn default_tiled_dim(chain: &LoopChain) -> usize {
    chain.loops.first().map(|l| l.range.ndim - 1).unwrap_or(0)
}

pub fn compute_tile_plan(chain: &LoopChain, tiles: usize, tiled_dim: usize) -> Result<TilePlan> {
    if chain.loops.is_empty() {
        return Err(Error::Config("cannot tile an empty chain".into()));
    }
    if tiles == 0 {
        return Err(Error::Config("tile count must be at least 1".into()));
    }
    let ndim = chain.loops[0].range.ndim;
    if tiled_dim >= ndim {
        return Err(Error::Config(format!("tiled dimension {tiled_dim} on a {ndim}-d chain")));
    }
    let td = tiled_dim;
    let lo = chain.loops.iter().map(|l| l.range.lo[td]).min().unwrap();
    let hi = chain.loops.iter().map(|l| l.range.hi[td]).max().unwrap();
    let extent = (hi - lo) as usize;
    let mut tiles = tiles;
    if tiles > extent {
        warn!("tile count {tiles} exceeds tiled extent {extent}; using {extent}");
        tiles = extent;
    }
    let nominal: Vec<i64> = (0..tiles).map(|t| lo + ((t as i64 + 1) * extent as i64) / tiles as i64).collect();

    let n = chain.loops.len();
    let mut bounds = vec![vec![0i64; tiles]; n];
    for (t, &e) in nominal.iter().enumerate() {
        // furthest exclusive index later loops read from / write to each dataset
        let mut read_req: HashMap<DatasetId, i64> = HashMap::new();
        let mut write_req: HashMap<DatasetId, i64> = HashMap::new();
        for j in (0..n).rev() {
            let lp = &chain.loops[j];
            let (rlo, rhi) = (lp.range.lo[td], lp.range.hi[td]);
            let mut d = e;
            for w in lp.written() {
                if let Some(&r) = read_req.get(&w) {
                    d = d.max(r);
                }
                if let Some(&r) = write_req.get(&w) {
                    d = d.max(r);
                }
            }
            for a in lp.args.iter().filter(|a| a.mode.reads()) {
                if let Some(&w) = write_req.get(&a.dataset) {
                    let (slo, _) = a.stencil.extents();
                    d = d.max(w - slo[td]);
                }
            }
            d = d.clamp(rlo, rhi);
            if t + 1 == tiles {
                d = rhi;
            }
            bounds[j][t] = d;
            if d > rlo {
                for a in lp.args.iter().filter(|a| a.mode.reads()) {
                    let (_, shi) = a.stencil.extents();
                    let r = read_req.entry(a.dataset).or_insert(i64::MIN);
                    *r = (*r).max(d + shi[td]);
                }
                for w in lp.written() {
                    let r = write_req.entry(w).or_insert(i64::MIN);
                    *r = (*r).max(d);
                }
            }
        }
    }
    Ok(TilePlan {
        tiled_dim,
        tile_count: tiles,
        nominal,
        bounds,
        loop_ranges: chain.loops.iter().map(|l| l.range).collect(),
    })
}

/// Regions of one dataset across the tiles of a plan.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetFootprint {
    pub dataset: DatasetId,
    pub elem_bytes: u64,
    pub full: Vec<Option<Extent>>,
    pub left_edge: Vec<Option<Extent>>,
    pub right_edge: Vec<Option<Extent>>,
    /// `full` minus `right_edge`: what can go home after the tile.
    pub left_fp: Vec<Option<Extent>>,
    /// `full` minus `left_edge`: what is new in the tile.
    pub right_fp: Vec<Option<Extent>>,
    pub modified: Vec<bool>,
    pub write_first: bool,
    pub read_only: bool,
}

impl DatasetFootprint {
    pub fn bytes(&self, e: &Option<Extent>) -> u64 {
        e.map(|x| x.points() * self.elem_bytes).unwrap_or(0)
    }

    pub fn max_full_bytes(&self) -> u64 {
        self.full.iter().map(|e| self.bytes(e)).max().unwrap_or(0)
    }

    /// Whether the dataset was written in any tile up to and including `t`.
    pub fn dirty_through(&self, t: usize) -> bool {
        self.modified[..=t].iter().any(|&m| m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Footprints {
    pub tiled_dim: usize,
    pub tile_count: usize,
    /// In order of first access in the chain.
    pub datasets: Vec<DatasetFootprint>,
}

impl Footprints {
    pub fn get(&self, d: DatasetId) -> Option<&DatasetFootprint> {
        self.datasets.iter().find(|f| f.dataset == d)
    }

    /// Bytes one slot must hold: per dataset, its largest tile footprint.
    pub fn slot_bytes(&self) -> u64 {
        self.datasets.iter().map(|f| f.max_full_bytes()).sum()
    }
}

/// Interval difference `a \ b` along `dim`, where `b` is a prefix or suffix
/// of `a`. Returns the remaining piece.
fn slab_minus(a: &Option<Extent>, b: &Option<Extent>, dim: usize) -> Option<Extent> {
    let a = (*a)?;
    let Some(b) = b else { return Some(a) };
    if b.lo[dim] <= a.lo[dim] {
        a.with_dim(dim, b.hi[dim].max(a.lo[dim]), a.hi[dim])
    } else {
        debug_assert!(b.hi[dim] >= a.hi[dim]);
        a.with_dim(dim, a.lo[dim], b.lo[dim])
    }
}

fn intersect(a: &Option<Extent>, b: &Option<Extent>) -> Option<Extent> {
    a.as_ref().zip(b.as_ref()).and_then(|(x, y)| x.intersect(y))
}

pub fn compute_footprints(plan: &TilePlan, chain: &LoopChain, block: &Block) -> Footprints {
    let td = plan.tiled_dim;
    let nt = plan.tile_count;
    let mut out = Vec::new();
    for d in chain.datasets() {
        let ds = block.dataset(d);
        // raw per-tile bounding boxes of every access
        let mut raw: Vec<Option<Extent>> = vec![None; nt];
        let mut modified = vec![false; nt];
        for (j, lp) in chain.loops.iter().enumerate() {
            for a in lp.args.iter().filter(|a| a.dataset == d) {
                let (slo, shi) = a.stencil.extents();
                for t in 0..nt {
                    if let Some(sub) = plan.sub_range(j, t) {
                        let touched = sub.expand(&slo, &shi);
                        raw[t] = Some(raw[t].map_or(touched, |r| r.hull(&touched)));
                        if a.mode.writes() {
                            modified[t] = true;
                        }
                    }
                }
            }
        }
        let Some(cross) = raw.iter().flatten().copied().reduce(|a, b| a.hull(&b)) else {
            continue;
        };
        // monotone hull along the tiled dimension
        let first = raw.iter().position(Option::is_some).unwrap();
        let last = raw.iter().rposition(Option::is_some).unwrap();
        let mut full: Vec<Option<Extent>> = vec![None; nt];
        for t in first..=last {
            let lo = raw[t..].iter().flatten().map(|e| e.lo[td]).min().unwrap();
            let hi = raw[..=t].iter().flatten().map(|e| e.hi[td]).max().unwrap();
            full[t] = cross.with_dim(td, lo, hi).and_then(|e| e.intersect(&ds.alloc()));
        }
        let left_edge: Vec<_> =
            (0..nt).map(|t| if t == 0 { None } else { intersect(&full[t], &full[t - 1]) }).collect();
        let right_edge: Vec<_> =
            (0..nt).map(|t| if t + 1 == nt { None } else { intersect(&full[t], &full[t + 1]) }).collect();
        let left_fp = (0..nt).map(|t| slab_minus(&full[t], &right_edge[t], td)).collect();
        let right_fp = (0..nt).map(|t| slab_minus(&full[t], &left_edge[t], td)).collect();
        out.push(DatasetFootprint {
            dataset: d,
            elem_bytes: ds.elem_bytes,
            full,
            left_edge,
            right_edge,
            left_fp,
            right_fp,
            modified,
            write_first: is_write_first(chain, d),
            read_only: !chain.loops.iter().any(|l| l.writes(d)),
        });
    }
    Footprints { tiled_dim: td, tile_count: nt, datasets: out }
}

/// A dataset is write-first when its first access in the chain is a write,
/// one loop's write range covers every access to it, and every read is
/// covered by an earlier write. Such a dataset never needs uploading.
pub fn is_write_first(chain: &LoopChain, d: DatasetId) -> bool {
    let Some(first) = chain.loops.iter().find(|l| l.args.iter().any(|a| a.dataset == d)) else {
        return false;
    };
    if first.reads(d) {
        return false;
    }
    let mut hull: Option<Extent> = None;
    for (j, lp) in chain.loops.iter().enumerate() {
        for a in lp.args.iter().filter(|a| a.dataset == d) {
            let (slo, shi) = a.stencil.extents();
            let touched = lp.range.expand(&slo, &shi);
            hull = Some(hull.map_or(touched, |h| h.hull(&touched)));
            if a.mode.reads() {
                let covered = chain.loops[..j].iter().any(|w| w.writes(d) && w.range.contains_extent(&touched));
                if !covered {
                    return false;
                }
            }
        }
    }
    let hull = hull.unwrap();
    chain.loops.iter().any(|w| w.writes(d) && w.range.contains_extent(&hull))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    /// A read saw a different version than in-order execution would.
    WrongVersion {
        expected: Option<usize>,
        found: Option<usize>,
    },
    /// A write replaced a version other than its in-order predecessor.
    WriteOrder {
        expected: Option<usize>,
        found: Option<usize>,
    },
    ExecutedTwice,
    NotExecuted,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub tile: usize,
    pub loop_index: usize,
    pub dataset: Option<DatasetId>,
    pub point: Index,
    pub kind: ViolationKind,
}

/// Brute-force check of a plan: replays it tile by tile, tracking which loop
/// last wrote every point, and compares each read and write against the
/// version in-order execution would see. Also checks exactly-once execution.
pub fn dependency_oracle(chain: &LoopChain, plan: &TilePlan, block: &Block) -> Result<(), Violation> {
    let mut last_writer: HashMap<DatasetId, Vec<Option<usize>>> = HashMap::new();
    for d in chain.datasets() {
        last_writer.insert(d, vec![None; block.dataset(d).alloc().points() as usize]);
    }
    let expected = |j: usize, d: DatasetId, p: &Index| -> Option<usize> {
        (0..j).rev().find(|&k| chain.loops[k].writes(d) && chain.loops[k].range.contains(p))
    };
    let mut executed: Vec<Vec<bool>> = chain.loops.iter().map(|l| vec![false; l.range.points() as usize]).collect();

    for t in 0..plan.tile_count {
        for (j, lp) in chain.loops.iter().enumerate() {
            let Some(sub) = plan.sub_range(j, t) else { continue };
            let Some(sub) = sub.intersect(&lp.range) else { continue };
            let mut err = None;
            sub.for_each_point(|p| {
                if err.is_some() {
                    return;
                }
                let pos = lp.range.offset_of(&p);
                if executed[j][pos] {
                    err = Some(Violation {
                        tile: t,
                        loop_index: j,
                        dataset: None,
                        point: p,
                        kind: ViolationKind::ExecutedTwice,
                    });
                    return;
                }
                executed[j][pos] = true;
                for a in lp.args.iter().filter(|a| a.mode.reads()) {
                    let alloc = block.dataset(a.dataset).alloc();
                    for off in &a.stencil.offsets {
                        let q = [p[0] + off[0], p[1] + off[1], p[2] + off[2]];
                        let found = last_writer[&a.dataset][alloc.offset_of(&q)];
                        let want = expected(j, a.dataset, &q);
                        if found != want {
                            err = Some(Violation {
                                tile: t,
                                loop_index: j,
                                dataset: Some(a.dataset),
                                point: q,
                                kind: ViolationKind::WrongVersion { expected: want, found },
                            });
                            return;
                        }
                    }
                }
                for w in lp.written() {
                    let alloc = block.dataset(w).alloc();
                    let slot = &mut last_writer.get_mut(&w).unwrap()[alloc.offset_of(&p)];
                    let want = expected(j, w, &p);
                    if *slot != want {
                        err = Some(Violation {
                            tile: t,
                            loop_index: j,
                            dataset: Some(w),
                            point: p,
                            kind: ViolationKind::WriteOrder { expected: want, found: *slot },
                        });
                        return;
                    }
                    *slot = Some(j);
                }
            });
            if let Some(v) = err {
                return Err(v);
            }
        }
    }
    for (j, lp) in chain.loops.iter().enumerate() {
        if let Some(pos) = executed[j].iter().position(|&e| !e) {
            let mut p = lp.range.lo;
            let mut rem = pos as i64;
            for (d, x) in p.iter_mut().enumerate() {
                *x += rem % lp.range.len(d);
                rem /= lp.range.len(d);
            }
            return Err(Violation {
                tile: plan.tile_count - 1,
                loop_index: j,
                dataset: None,
                point: p,
                kind: ViolationKind::NotExecuted,
            });
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TileChoice {
    pub tiles: usize,
    /// Bytes one of the three slots needs at this tile count.
    pub slot_bytes: u64,
}

/// Smallest tile count whose three slots fit in `budget` bytes.
///
/// Footprints shrink as the tile count grows, so the search doubles until
/// the budget is met and then bisects.
pub fn choose_tile_count(chain: &LoopChain, block: &Block, budget: u64, tiled_dim: usize) -> Result<TileChoice> {
    if budget == 0 {
        return Err(Error::Config("footprint budget must be positive".into()));
    }
    let td = tiled_dim;
    let lo = chain.loops.iter().map(|l| l.range.lo[td]).min().unwrap_or(0);
    let hi = chain.loops.iter().map(|l| l.range.hi[td]).max().unwrap_or(1);
    let max_tiles = (hi - lo).max(1) as usize;
    let slot = |t: usize| -> Result<u64> {
        let plan = compute_tile_plan(chain, t, td)?;
        Ok(compute_footprints(&plan, chain, block).slot_bytes())
    };
    let fits = |bytes: u64| bytes.saturating_mul(3) <= budget;

    let mut best_bytes = u64::MAX;
    let mut prev = 0usize;
    let mut t = 1usize;
    loop {
        let b = slot(t)?;
        best_bytes = best_bytes.min(b);
        if fits(b) {
            break;
        }
        if t == max_tiles {
            return Err(Error::Infeasible { budget, min_bytes: best_bytes.saturating_mul(3) });
        }
        prev = t;
        t = (t * 2).min(max_tiles);
    }
    let (mut lo_t, mut hi_t) = (prev, t);
    let mut hi_bytes = slot(hi_t)?;
    while hi_t - lo_t > 1 {
        let mid = (lo_t + hi_t) / 2;
        let b = slot(mid)?;
        if fits(b) {
            hi_t = mid;
            hi_bytes = b;
        } else {
            lo_t = mid;
        }
    }
    Ok(TileChoice { tiles: hi_t, slot_bytes: hi_bytes })
}

#[derive(Serialize)]
struct DumpRow {
    tile: usize,
    loop_index: usize,
    loop_name: String,
    range: Option<Extent>,
    footprint_bytes: Vec<(String, u64)>,
}

#[derive(Serialize)]
struct PlanDump<'a> {
    tiled_dim: usize,
    tile_count: usize,
    nominal: &'a [i64],
    rows: Vec<DumpRow>,
}

fn dump_rows(chain: &LoopChain, plan: &TilePlan, fp: &Footprints, block: &Block) -> Vec<DumpRow> {
    let mut rows = Vec::new();
    for t in 0..plan.tile_count {
        let bytes: Vec<(String, u64)> =
            fp.datasets.iter().map(|f| (block.dataset(f.dataset).name.clone(), f.bytes(&f.full[t]))).collect();
        for (j, lp) in chain.loops.iter().enumerate() {
            rows.push(DumpRow {
                tile: t,
                loop_index: j,
                loop_name: lp.name.clone(),
                range: plan.sub_range(j, t),
                footprint_bytes: bytes.clone(),
            });
        }
    }
    rows
}

/// Human-readable plan table: one line per (tile, loop).
pub fn plan_table(chain: &LoopChain, plan: &TilePlan, fp: &Footprints, block: &Block) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# tiled_dim={} tiles={} nominal={:?}", plan.tiled_dim, plan.tile_count, plan.nominal);
    let _ = writeln!(s, "{:>4} {:>4} {:<16} {:<28} footprint_bytes", "tile", "loop", "name", "range");
    for r in dump_rows(chain, plan, fp, block) {
        let range = r.range.map(|e| e.to_string()).unwrap_or_else(|| "-".into());
        let fps: Vec<String> = r.footprint_bytes.iter().map(|(n, b)| format!("{n}={b}")).collect();
        let _ = writeln!(s, "{:>4} {:>4} {:<16} {:<28} {}", r.tile, r.loop_index, r.loop_name, range, fps.join(" "));
    }
    s
}

/// JSON mirror of [`plan_table`].
pub fn plan_json(chain: &LoopChain, plan: &TilePlan, fp: &Footprints, block: &Block) -> Result<String> {
    let dump = PlanDump {
        tiled_dim: plan.tiled_dim,
        tile_count: plan.tile_count,
        nominal: &plan.nominal,
        rows: dump_rows(chain, plan, fp, block),
    };
    Ok(serde_json::to_string_pretty(&dump)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::FlushReason;
    use crate::expr::{Expr, Kernel};
    use crate::mesh::{Arg, Fill, ParLoop, Stencil};

    fn ext1(lo: i64, hi: i64) -> Extent {
        Extent::new(&[lo], &[hi]).unwrap()
    }

    /// Chain of `n` loops on [0,12): loop `k` reads dataset `k` with a ±1
    /// stencil and writes dataset `k+1`. Loop 0 is preceded by a producer of
    /// dataset 0 when `producer` is set.
    fn pipeline(n: usize) -> (Block, LoopChain) {
        let mut b = Block::new(1).unwrap();
        let core = ext1(0, 12);
        let ids: Vec<_> = (0..=n)
            .map(|k| b.declare_dataset(&format!("d{k}"), core, &[1], 8, Fill::Value(k as f64)).unwrap())
            .collect();
        let mut loops =
            vec![ParLoop::new("produce", core, vec![Arg::write(ids[0], 1)], Kernel::write(0, Expr::Const(1.0)))];
        for k in 0..n {
            loops.push(ParLoop::new(
                format!("s{k}"),
                core,
                vec![Arg::read(ids[k], Stencil::line(1, 0, 1)), Arg::write(ids[k + 1], 1)],
                Kernel::write(1, Expr::read(0, &[1])),
            ));
        }
        for lp in &loops {
            b.validate_loop(lp).unwrap();
        }
        (b, LoopChain::new(0, loops, FlushReason::ExplicitFlush))
    }

    #[test]
    fn untiled_point_loop_splits_evenly() {
        let mut b = Block::new(1).unwrap();
        let a = b.declare_dataset("a", ext1(0, 12), &[0], 8, Fill::Value(0.0)).unwrap();
        let lp = ParLoop::new("w", ext1(0, 12), vec![Arg::write(a, 1)], Kernel::write(0, Expr::Const(2.0)));
        let chain = LoopChain::new(0, vec![lp], FlushReason::ExplicitFlush);
        let plan = compute_tile_plan(&chain, 3, 0).unwrap();
        let ranges: Vec<_> = (0..3).map(|t| plan.sub_range(0, t).unwrap()).collect();
        assert_eq!(ranges, vec![ext1(0, 4), ext1(4, 8), ext1(8, 12)]);
        let fp = compute_footprints(&plan, &chain, &b);
        assert_eq!(fp.datasets[0].full[1], Some(ext1(4, 8)));
        dependency_oracle(&chain, &plan, &b).unwrap();
    }

    #[test]
    fn two_loop_skew() {
        let (b, chain) = pipeline(1);
        let plan = compute_tile_plan(&chain, 2, 0).unwrap();
        assert_eq!(plan.nominal, vec![6, 12]);
        assert_eq!(plan.bounds[1][0], 6);
        assert_eq!(plan.bounds[0][0], 7);
        assert_eq!(plan.sub_range(0, 0), Some(ext1(0, 7)));
        assert_eq!(plan.sub_range(0, 1), Some(ext1(7, 12)));
        assert_eq!(plan.sub_range(1, 1), Some(ext1(6, 12)));
        dependency_oracle(&chain, &plan, &b).unwrap();
    }

    #[test]
    fn cumulative_skew() {
        let (b, chain) = pipeline(2);
        let plan = compute_tile_plan(&chain, 2, 0).unwrap();
        let d0: Vec<_> = plan.bounds.iter().map(|d| d[0]).collect();
        assert_eq!(d0, vec![8, 7, 6]);
        dependency_oracle(&chain, &plan, &b).unwrap();
    }

    #[test]
    fn oracle_catches_missing_skew() {
        let (b, chain) = pipeline(1);
        let mut plan = compute_tile_plan(&chain, 2, 0).unwrap();
        plan.bounds[0][0] = 6;
        let v = dependency_oracle(&chain, &plan, &b).unwrap_err();
        assert_eq!((v.tile, v.loop_index, v.dataset, v.point[0]), (0, 1, Some(DatasetId(0)), 6));
        assert!(matches!(v.kind, ViolationKind::WrongVersion { expected: Some(0), found: None }));
    }

    #[test]
    fn oracle_catches_double_execution() {
        let (b, chain) = pipeline(1);
        let mut plan = compute_tile_plan(&chain, 2, 0).unwrap();
        plan.bounds[1][0] = 20;
        assert!(dependency_oracle(&chain, &plan, &b).is_err());
    }

    #[test]
    fn single_tile_always_ok() {
        let (b, chain) = pipeline(3);
        let plan = compute_tile_plan(&chain, 1, 0).unwrap();
        assert_eq!(plan.bounds.iter().map(|d| d[0]).collect::<Vec<_>>(), vec![12; 4]);
        dependency_oracle(&chain, &plan, &b).unwrap();
    }

    #[test]
    fn point_read_between_stencil_reads_still_propagates() {
        // L1 writes A; L2 reads A at the point and writes B; L3 reads B at +1.
        let mut b = Block::new(1).unwrap();
        let core = ext1(0, 12);
        let a = b.declare_dataset("a", core, &[1], 8, Fill::Value(0.0)).unwrap();
        let bb = b.declare_dataset("b", core, &[1], 8, Fill::Value(0.0)).unwrap();
        let c = b.declare_dataset("c", core, &[1], 8, Fill::Value(0.0)).unwrap();
        let loops = vec![
            ParLoop::new("l1", core, vec![Arg::write(a, 1)], Kernel::write(0, Expr::Const(1.0))),
            ParLoop::new(
                "l2",
                core,
                vec![Arg::read(a, Stencil::point(1)), Arg::write(bb, 1)],
                Kernel::write(1, Expr::read(0, &[0])),
            ),
            ParLoop::new(
                "l3",
                core,
                vec![Arg::read(bb, Stencil::new(1, &[&[0], &[1]]).unwrap()), Arg::write(c, 1)],
                Kernel::write(1, Expr::read(0, &[1])),
            ),
        ];
        let chain = LoopChain::new(0, loops, FlushReason::ExplicitFlush);
        for t in 1..=4 {
            let plan = compute_tile_plan(&chain, t, 0).unwrap();
            dependency_oracle(&chain, &plan, &b).unwrap();
        }
    }

    #[test]
    fn write_after_read_is_respected() {
        // L1 reads A at ±1 into B, L2 overwrites A.
        let mut b = Block::new(1).unwrap();
        let core = ext1(0, 12);
        let a = b.declare_dataset("a", core, &[1], 8, Fill::Value(0.0)).unwrap();
        let w = b.declare_dataset("b", core, &[1], 8, Fill::Value(0.0)).unwrap();
        let loops = vec![
            ParLoop::new(
                "l1",
                core,
                vec![Arg::read(a, Stencil::line(1, 0, 1)), Arg::write(w, 1)],
                Kernel::write(1, Expr::read(0, &[-1])),
            ),
            ParLoop::new("l2", core, vec![Arg::write(a, 1)], Kernel::write(0, Expr::Const(3.0))),
        ];
        let chain = LoopChain::new(0, loops, FlushReason::ExplicitFlush);
        let plan = compute_tile_plan(&chain, 3, 0).unwrap();
        assert_eq!(plan.bounds[0][0], 5);
        dependency_oracle(&chain, &plan, &b).unwrap();
    }

    #[test]
    fn oversized_tile_count_is_reduced() {
        let (_, chain) = pipeline(1);
        let plan = compute_tile_plan(&chain, 50, 0).unwrap();
        assert_eq!(plan.tile_count, 12);
        assert!(compute_tile_plan(&chain, 0, 0).is_err());
        assert!(compute_tile_plan(&chain, 2, 1).is_err());
    }

    #[test]
    fn footprint_of_stencil_read_on_last_tile() {
        let (b, chain) = pipeline(1);
        let plan = compute_tile_plan(&chain, 2, 0).unwrap();
        let fp = compute_footprints(&plan, &chain, &b);
        let d0 = fp.get(DatasetId(0)).unwrap();
        // loop s0 runs [6,12) in tile 1 reading ±1
        assert_eq!(d0.full[1], Some(ext1(5, 13)));
        assert_eq!(d0.full[0], Some(ext1(-1, 7)));
    }

    #[test]
    fn edges_and_partial_footprints() {
        let (b, chain) = pipeline(2);
        let plan = compute_tile_plan(&chain, 3, 0).unwrap();
        let fp = compute_footprints(&plan, &chain, &b);
        for f in &fp.datasets {
            assert!(f.left_edge[0].is_none());
            assert!(f.right_edge[2].is_none());
            for t in 0..3 {
                let full = f.full[t].unwrap();
                // full = right_edge ⊎ left_fp = left_edge ⊎ right_fp
                let n = |e: &Option<Extent>| e.map_or(0, |x| x.points());
                assert_eq!(n(&f.right_edge[t]) + n(&f.left_fp[t]), full.points());
                assert_eq!(n(&f.left_edge[t]) + n(&f.right_fp[t]), full.points());
                if t + 1 < 3 {
                    assert_eq!(f.right_edge[t], f.left_edge[t + 1]);
                }
            }
        }
    }

    #[test]
    fn adjacent_footprint_algebra() {
        let a = Some(ext1(0, 7));
        let b = Some(ext1(5, 12));
        let re = intersect(&a, &b);
        assert_eq!(re, Some(ext1(5, 7)));
        assert_eq!(slab_minus(&a, &re, 0), Some(ext1(0, 5)));
        assert_eq!(slab_minus(&b, &re, 0), Some(ext1(7, 12)));
    }

    #[test]
    fn write_first_detection() {
        let (_, chain) = pipeline(2);
        // d0 is produced over the whole core then read inside it: but the ±1
        // read reaches into the halo, which nobody wrote.
        assert!(!is_write_first(&chain, DatasetId(0)));
        // d2 is only written
        assert!(is_write_first(&chain, DatasetId(2)));
        let mut b = Block::new(1).unwrap();
        let core = ext1(0, 12);
        let t = b.declare_dataset("t", core, &[1], 8, Fill::Value(0.0)).unwrap();
        let o = b.declare_dataset("o", core, &[1], 8, Fill::Value(0.0)).unwrap();
        let loops = vec![
            ParLoop::new("w", core, vec![Arg::write(t, 1)], Kernel::write(0, Expr::Const(1.0))),
            ParLoop::new(
                "r",
                ext1(1, 11),
                vec![Arg::read(t, Stencil::line(1, 0, 1)), Arg::write(o, 1)],
                Kernel::write(1, Expr::read(0, &[1])),
            ),
        ];
        let chain = LoopChain::new(0, loops, FlushReason::ExplicitFlush);
        assert!(is_write_first(&chain, t));
    }

    #[test]
    fn tile_count_search() {
        let (b, chain) = pipeline(1);
        let whole: u64 = 3 * 2 * 14 * 8;
        assert_eq!(choose_tile_count(&chain, &b, whole, 0).unwrap().tiles, 1);
        let c = choose_tile_count(&chain, &b, whole / 2 + 3 * 8 * 4, 0).unwrap();
        assert!(c.tiles > 1);
        assert!(3 * c.slot_bytes <= whole / 2 + 3 * 8 * 4);
        let smaller = compute_tile_plan(&chain, c.tiles - 1, 0).unwrap();
        assert!(3 * compute_footprints(&smaller, &chain, &b).slot_bytes() > whole / 2 + 3 * 8 * 4);
        assert!(matches!(choose_tile_count(&chain, &b, 16, 0), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn plan_dump_formats() {
        let (b, chain) = pipeline(1);
        let plan = compute_tile_plan(&chain, 2, 0).unwrap();
        let fp = compute_footprints(&plan, &chain, &b);
        let table = plan_table(&chain, &plan, &fp, &b);
        assert_eq!(table.lines().count(), 2 + 4);
        let v: serde_json::Value = serde_json::from_str(&plan_json(&chain, &plan, &fp, &b).unwrap()).unwrap();
        assert_eq!(v["rows"].as_array().unwrap().len(), 4);
        assert_eq!(v["tile_count"], 2);
    }
}
