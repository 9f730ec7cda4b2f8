//! Unified memory: pages migrate to the device on first touch.
//!
//! Without prefetching every non-resident page a kernel touches stalls it for
//! a fault latency plus the page transfer, one fault at a time. With
//! prefetching, each tile's kernels are followed on the same queue by a
//! prefetch of the tile's no-longer-needed pages back to the host, while the
//! next tile's new pages are prefetched to the device on the queue the next
//! tile will run on. Queues rotate every tile.

use std::collections::HashSet;

use super::paging::{PageLru, PageMap};
use super::{Device, DeviceStats, RunOptions};
use crate::chain::LoopChain;
use crate::error::Result;
use crate::exec::{execute_subrange, BufTable, ReductionAcc};
use crate::extent::Extent;
use crate::mesh::{Block, DatasetId};
use crate::metrics::loop_bytes_over;
use crate::tiler::{Footprints, TilePlan};
use crate::timeline::{Command, CommandKind, Program};

#[derive(Debug)]
pub(crate) struct UnifiedState {
    lru: PageLru,
    map: PageMap,
    /// Tiles run so far, for queue rotation.
    tick: usize,
}

fn region_pages(map: &PageMap, d: DatasetId, r: &Option<Extent>, out: &mut HashSet<u64>) {
    if let Some(r) = r {
        map.for_each_region_page(d, r, |p, _| {
            out.insert(p);
        });
    }
}

fn sorted(set: HashSet<u64>) -> Vec<u64> {
    let mut v: Vec<u64> = set.into_iter().collect();
    v.sort_unstable();
    v
}

pub(crate) fn run(
    dev: &mut Device,
    chain: &LoopChain,
    plan: &TilePlan,
    fp: &Footprints,
    block: &mut Block,
    opts: &RunOptions,
) -> Result<Vec<(String, f64)>> {
    let cfg = dev.cfg.clone();
    let st = dev.unified.get_or_insert_with(|| UnifiedState {
        lru: PageLru::new((cfg.capacity_bytes / cfg.cache_page_bytes).max(1) as usize),
        map: PageMap::new(block, cfg.cache_page_bytes),
        tick: 0,
    });
    let page = cfg.cache_page_bytes;
    let fault_cost = cfg.fault_latency + page as f64 / cfg.h2d_bandwidth;
    let writeback_cost = page as f64 / cfg.d2h_bandwidth;

    // the host read these datasets since the last chain: their pages went home
    let mut touched: Vec<DatasetId> = dev.touched.iter().copied().collect();
    touched.sort();
    let mut migrated = 0u64;
    for d in touched {
        for p in st.map.dataset_pages(d) {
            if st.lru.remove(p) == Some(true) {
                migrated += page;
                dev.stats.writebacks += 1;
            }
        }
    }
    if migrated > 0 {
        dev.program.push(Command::new(CommandKind::D2H, st.tick % 3, migrated));
    }

    let nt = plan.tile_count;
    let tick0 = st.tick;
    let queue = |t: usize| (tick0 + t) % 3;
    let mut acc = ReductionAcc::new(chain);
    let mut prev_kernel: Option<usize> = None;

    if opts.prefetch {
        let mut pages = HashSet::new();
        for f in &fp.datasets {
            region_pages(&st.map, f.dataset, &f.full[0], &mut pages);
        }
        prefetch_to_device(&mut dev.program, &mut dev.stats, st, sorted(pages), queue(0), 0, page, writeback_cost);
    }

    for t in 0..nt {
        let k = if opts.prefetch { queue(t) } else { 0 };
        if let (true, Some(pk)) = (opts.prefetch, prev_kernel) {
            dev.program.wait_for(k, &[pk]);
        }
        for (j, lp) in chain.loops.iter().enumerate() {
            let Some(sub) = plan.sub_range(j, t) else { continue };
            let mut stall = 0.0;
            let UnifiedState { lru, map, .. } = &mut *st;
            map.for_each_loop_touch(lp, &sub, |p, write, _| {
                let a = lru.touch(p, write);
                if !a.hit {
                    dev.stats.faults += 1;
                    stall += fault_cost;
                }
                if let Some((_, true)) = a.evicted {
                    dev.stats.writebacks += 1;
                    stall += writeback_cost;
                }
            });
            let mut bufs: BufTable<'_> = block.host_buffers_mut().into_iter().map(Some).collect();
            execute_subrange(lp, &sub, &mut bufs, acc.slot(j));
            let bytes = loop_bytes_over(lp, sub.points(), block);
            let id = dev.program.push(Command::new(CommandKind::Kernel, k, bytes).tile(t).loop_index(j).extra(stall));
            prev_kernel = Some(id);
        }
        if !opts.prefetch {
            continue;
        }

        // pages of this tile the next one does not need go back to the host
        let mut leaving = HashSet::new();
        let mut staying = HashSet::new();
        for f in &fp.datasets {
            region_pages(&st.map, f.dataset, &f.left_fp[t], &mut leaving);
            if t + 1 < nt {
                region_pages(&st.map, f.dataset, &f.full[t + 1], &mut staying);
            }
        }
        let mut back = 0u64;
        for p in sorted(leaving) {
            if staying.contains(&p) {
                continue;
            }
            if st.lru.remove(p) == Some(true) {
                back += page;
            }
        }
        if back > 0 {
            dev.program.push(Command::new(CommandKind::Prefetch, k, back).tile(t).to_host());
        }

        if t + 1 < nt {
            let mut incoming = HashSet::new();
            for f in &fp.datasets {
                region_pages(&st.map, f.dataset, &f.right_fp[t + 1], &mut incoming);
            }
            prefetch_to_device(
                &mut dev.program,
                &mut dev.stats,
                st,
                sorted(incoming),
                queue(t + 1),
                t + 1,
                page,
                writeback_cost,
            );
        }
        // keep at most two tiles in flight
        dev.program.host_wait(&[queue(t + 2)]);
    }
    dev.program.host_wait_all();
    st.tick += nt;
    Ok(acc.finish())
}

/// Migrates the non-resident pages among `pages` ahead of use.
#[allow(clippy::too_many_arguments)]
fn prefetch_to_device(
    program: &mut Program,
    stats: &mut DeviceStats,
    st: &mut UnifiedState,
    pages: Vec<u64>,
    queue: usize,
    tile: usize,
    page: u64,
    writeback_cost: f64,
) {
    let mut bytes = 0u64;
    let mut extra = 0.0;
    for p in pages {
        let a = st.lru.touch(p, false);
        if !a.hit {
            bytes += page;
        }
        if let Some((_, true)) = a.evicted {
            stats.writebacks += 1;
            extra += writeback_cost;
        }
    }
    if bytes > 0 {
        program.push(Command::new(CommandKind::Prefetch, queue, bytes).tile(tile).extra(extra));
    }
}
