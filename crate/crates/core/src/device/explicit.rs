//! Explicitly managed device memory: three slot arenas, per-tile uploads of
//! the new part of the footprint, edge copies between consecutive slots and
//! downloads of what the next tile no longer needs.
//!
//! Queue 0 runs kernels and edge copies, queue 1 uploads, queue 2 downloads.

use log::debug;

use super::{AuditRow, Device, RunOptions};
use crate::chain::{FlushReason, LoopChain};
use crate::error::{Error, Result};
use crate::exec::{execute_subrange, BufTable, ReductionAcc};
use crate::extent::{BoxBuf, Extent};
use crate::mesh::{Block, DatasetId, StaleRegion};
use crate::metrics::loop_bytes_over;
use crate::tiler::{Footprints, TilePlan};
use crate::timeline::{Command, CommandKind};

const KERNELS: usize = 0;
const UPLOADS: usize = 1;
const DOWNLOADS: usize = 2;

/// Tile-0 data uploaded ahead of the next chain.
#[derive(Debug)]
struct Speculative {
    chain: u64,
    buffers: Vec<(DatasetId, BoxBuf)>,
}

#[derive(Debug, Default)]
pub(crate) struct ExplicitState {
    speculative: Option<Speculative>,
    /// Slot the next chain's first tile lands in.
    slot_base: usize,
}

type Slot = Vec<Option<BoxBuf>>;

fn fresh_arena(ext: Extent, max_points: u64) -> BoxBuf {
    assert!(ext.points() <= max_points, "arena for {ext} exceeds its sized capacity");
    BoxBuf::filled(ext, f64::NAN)
}

struct Ctx<'a> {
    chain: &'a LoopChain,
    rows: Vec<AuditRow>,
}

impl Ctx<'_> {
    fn row(&mut self, block: &Block, d: DatasetId, tile: usize) -> &mut AuditRow {
        let name = &block.dataset(d).name;
        if let Some(i) = self.rows.iter().position(|r| r.tile == tile && &r.dataset == name) {
            return &mut self.rows[i];
        }
        self.rows.push(AuditRow {
            chain: self.chain.id,
            dataset: name.clone(),
            tile,
            uploaded: 0,
            downloaded: 0,
            d2d: 0,
        });
        self.rows.last_mut().unwrap()
    }
}

pub(crate) fn run(
    dev: &mut Device,
    chain: &LoopChain,
    plan: &TilePlan,
    fp: &Footprints,
    block: &mut Block,
    opts: &RunOptions,
) -> Result<Vec<(String, f64)>> {
    let required = 3 * fp.slot_bytes();
    if required > dev.cfg.capacity_bytes {
        return Err(Error::Capacity { required, capacity: dev.cfg.capacity_bytes });
    }
    for f in fp.datasets.iter().filter(|f| !f.write_first) {
        let ds = block.dataset(f.dataset);
        if let Some(st) = ds.host_stale {
            if f.full.iter().flatten().any(|e| e.intersect(&st.region).is_some()) {
                return Err(Error::StaleData { dataset: ds.name.clone(), chain: st.chain });
            }
        }
    }

    let nt = plan.tile_count;
    let n = block.datasets().len();
    let base = dev.explicit.slot_base;
    let slot_of = |t: usize| (base + t) % 3;
    let mut slots: Vec<Slot> = (0..3).map(|_| vec![None; n]).collect();
    let max_points: Vec<u64> =
        (0..n).map(|d| fp.get(DatasetId(d)).map_or(0, |f| f.max_full_bytes() / f.elem_bytes)).collect();
    let mut acc = ReductionAcc::new(chain);
    let mut ctx = Ctx { chain, rows: Vec::new() };
    let speculative = dev.explicit.speculative.take();
    let mut downloaded: Vec<Option<Extent>> = vec![None; n];

    // tile 0: whole footprint, minus whatever was uploaded speculatively
    for f in &fp.datasets {
        let Some(ext) = f.full[0] else { continue };
        let d = f.dataset;
        let mut arena = fresh_arena(ext, max_points[d.0]);
        if !f.write_first {
            let ds = block.dataset(d);
            let spec = speculative.as_ref().and_then(|s| {
                let usable = !dev.touched.contains(&d) && ds.host_stale.is_none();
                s.buffers.iter().find(|(sd, _)| *sd == d && usable).map(|(_, b)| b)
            });
            let mut parts = vec![ext];
            if let Some(sb) = spec {
                if let Some(common) = sb.ext.intersect(&ext) {
                    debug_assert!(sb.region_bits_eq(&ds.host, &common), "speculative copy diverged from host");
                    arena.copy_region_from(sb, &common);
                    parts = ext.subtract(&common);
                    debug!("chain {}: reused speculative upload of `{}` {}", chain.id, ds.name, common);
                }
            }
            for part in parts {
                arena.copy_region_from(&ds.host, &part);
                let bytes = part.points() * f.elem_bytes;
                dev.program.push(Command::new(CommandKind::H2D, KERNELS, bytes).tile(0).dataset(d));
                ctx.row(block, d, 0).uploaded += bytes;
            }
        }
        slots[slot_of(0)][d.0] = Some(arena);
    }
    if let Some(s) = &speculative {
        debug!("chain {}: consumed speculative uploads from chain {}", chain.id, s.chain);
    }

    for t in 0..nt {
        let s = slot_of(t);
        dev.program.host_wait(&[KERNELS, UPLOADS]);
        if t + 1 < nt {
            let next = slot_of(t + 1);
            for f in &fp.datasets {
                let d = f.dataset;
                slots[next][d.0] = f.full[t + 1].map(|ext| fresh_arena(ext, max_points[d.0]));
                if f.write_first {
                    continue;
                }
                if let (Some(arena), Some(r)) = (slots[next][d.0].as_mut(), f.right_fp[t + 1]) {
                    arena.copy_region_from(&block.dataset(d).host, &r);
                    let bytes = r.points() * f.elem_bytes;
                    dev.program.push(Command::new(CommandKind::H2D, UPLOADS, bytes).tile(t + 1).dataset(d));
                    ctx.row(block, d, t + 1).uploaded += bytes;
                }
            }
        }

        for (j, lp) in chain.loops.iter().enumerate() {
            let Some(sub) = plan.sub_range(j, t) else { continue };
            let mut bufs: BufTable<'_> = slots[s].iter_mut().map(Option::as_mut).collect();
            execute_subrange(lp, &sub, &mut bufs, acc.slot(j));
            let bytes = loop_bytes_over(lp, sub.points(), block);
            dev.program.push(Command::new(CommandKind::Kernel, KERNELS, bytes).tile(t).loop_index(j));
        }

        // no chain follows the program-end flush
        if t + 1 == nt && opts.prefetch && chain.flush_reason != FlushReason::ProgramEnd {
            speculate(dev, fp, block, &mut ctx, nt);
        }

        dev.program.host_wait(&[KERNELS, DOWNLOADS]);
        if t + 1 < nt {
            let next = slot_of(t + 1);
            for f in &fp.datasets {
                let Some(edge) = f.right_edge[t] else { continue };
                let d = f.dataset;
                let src = slots[s][d.0].take().unwrap();
                slots[next][d.0].as_mut().unwrap().copy_region_from(&src, &edge);
                slots[s][d.0] = Some(src);
                let bytes = edge.points() * f.elem_bytes;
                dev.program.push(Command::new(CommandKind::D2D, KERNELS, bytes).tile(t).dataset(d));
                ctx.row(block, d, t).d2d += bytes;
            }
        }
        for f in &fp.datasets {
            let d = f.dataset;
            if f.read_only || !f.dirty_through(t) {
                continue;
            }
            let Some(lf) = f.left_fp[t] else { continue };
            if opts.cyclic && f.write_first {
                let ds = block.dataset_mut(d);
                let region = ds.host_stale.map_or(lf, |st| st.region.hull(&lf));
                ds.host_stale = Some(StaleRegion { region, chain: chain.id });
                continue;
            }
            let arena = slots[s][d.0].as_ref().unwrap();
            let ds = block.dataset_mut(d);
            ds.host.copy_region_from(arena, &lf);
            ds.ever_written = true;
            downloaded[d.0] = Some(downloaded[d.0].map_or(lf, |h: Extent| h.hull(&lf)));
            let bytes = lf.points() * f.elem_bytes;
            dev.program.push(Command::new(CommandKind::D2H, DOWNLOADS, bytes).tile(t).dataset(d));
            ctx.row(block, d, t).downloaded += bytes;
        }
    }

    // a full write-back of a previously discarded region makes it valid again
    for (d, hull) in downloaded.iter().enumerate() {
        let ds = block.dataset_mut(DatasetId(d));
        if let (Some(h), Some(st)) = (hull, ds.host_stale) {
            if st.chain != chain.id && h.contains_extent(&st.region) {
                ds.host_stale = None;
            }
        }
    }

    if opts.prefetch {
        // the speculative uploads may still be in flight
        dev.program.host_wait(&[KERNELS, DOWNLOADS]);
    } else {
        dev.program.host_wait_all();
    }
    dev.explicit.slot_base = slot_of(nt);
    ctx.rows.sort_by(|a, b| (a.tile, &a.dataset).cmp(&(b.tile, &b.dataset)));
    dev.audit.append(&mut ctx.rows);
    Ok(acc.finish())
}

/// Uploads this chain's tile-0 footprint again, betting that the next chain
/// has the same shape. Datasets whose tile-0 region is still being written
/// back by the last tile are skipped.
fn speculate(dev: &mut Device, fp: &Footprints, block: &Block, ctx: &mut Ctx<'_>, nt: usize) {
    dev.program.wait(UPLOADS, &[DOWNLOADS]);
    let mut buffers = Vec::new();
    for f in &fp.datasets {
        if f.write_first {
            continue;
        }
        let Some(first) = f.full[0] else { continue };
        let pending = !f.read_only
            && f.dirty_through(nt - 1)
            && f.full[nt - 1].is_some_and(|last| last.intersect(&first).is_some());
        if pending {
            continue;
        }
        let mut buf = BoxBuf::filled(first, f64::NAN);
        buf.copy_region_from(&block.dataset(f.dataset).host, &first);
        let bytes = first.points() * f.elem_bytes;
        dev.program.push(Command::new(CommandKind::H2D, UPLOADS, bytes).tile(nt - 1).dataset(f.dataset));
        ctx.row(block, f.dataset, nt - 1).uploaded += bytes;
        buffers.push((f.dataset, buf));
    }
    dev.explicit.speculative = Some(Speculative { chain: ctx.chain.id, buffers });
}
