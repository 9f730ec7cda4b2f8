//! Fast memory as a transparent page cache in front of host memory.
//!
//! Functional execution happens directly on host buffers; the cache only
//! prices each loop. A page touch that hits costs the bytes touched at device
//! bandwidth, a miss additionally fetches the page over the host link, and
//! evicting a dirty page writes it back.

use super::paging::{PageLru, PageMap};
use super::Device;
use crate::chain::LoopChain;
use crate::error::Result;
use crate::exec::{execute_subrange, BufTable, ReductionAcc};
use crate::mesh::Block;
use crate::metrics::loop_bytes_over;
use crate::tiler::TilePlan;
use crate::timeline::{Command, CommandKind};

#[derive(Debug)]
pub(crate) struct CacheState {
    lru: PageLru,
    map: PageMap,
}

pub(crate) fn run(
    dev: &mut Device,
    chain: &LoopChain,
    plan: &TilePlan,
    block: &mut Block,
) -> Result<Vec<(String, f64)>> {
    let cfg = dev.cfg.clone();
    let st = dev.cache.get_or_insert_with(|| CacheState {
        lru: PageLru::new((cfg.capacity_bytes / cfg.cache_page_bytes) as usize),
        map: PageMap::new(block, cfg.cache_page_bytes),
    });
    let page = cfg.cache_page_bytes as f64;
    let mut acc = ReductionAcc::new(chain);
    for t in 0..plan.tile_count {
        for (j, lp) in chain.loops.iter().enumerate() {
            let Some(sub) = plan.sub_range(j, t) else { continue };
            let (mut cost, mut hits, mut misses, mut writebacks) = (0.0, 0u64, 0u64, 0u64);
            let CacheState { lru, map } = &mut *st;
            map.for_each_loop_touch(lp, &sub, |p, write, bytes| {
                let a = lru.touch(p, write);
                cost += bytes as f64 / cfg.device_kernel_bandwidth;
                if a.hit {
                    hits += 1;
                } else {
                    misses += 1;
                    cost += page / cfg.h2d_bandwidth;
                }
                if let Some((_, true)) = a.evicted {
                    writebacks += 1;
                    cost += page / cfg.d2h_bandwidth;
                }
            });
            dev.stats.cache_hits += hits;
            dev.stats.cache_misses += misses;
            dev.stats.writebacks += writebacks;

            let mut bufs: BufTable<'_> = block.host_buffers_mut().into_iter().map(Some).collect();
            execute_subrange(lp, &sub, &mut bufs, acc.slot(j));
            let bytes = loop_bytes_over(lp, sub.points(), block);
            dev.program.push(Command::new(CommandKind::Kernel, 0, bytes).tile(t).loop_index(j).timed(cost));
        }
    }
    dev.program.host_wait_all();
    Ok(acc.finish())
}
