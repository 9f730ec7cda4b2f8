use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::mesh::{DatasetId, ParLoop};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FlushReason {
    ReductionFetch,
    DataFetch,
    ExplicitFlush,
    ProgramEnd,
}

/// A sequence of queued loops, bounded by a call that returns data.
#[derive(Clone, Debug)]
pub struct LoopChain {
    pub id: u64,
    pub loops: Vec<ParLoop>,
    pub flush_reason: FlushReason,
}

impl LoopChain {
    pub fn new(id: u64, loops: Vec<ParLoop>, flush_reason: FlushReason) -> Self {
        LoopChain { id, loops, flush_reason }
    }

    /// Datasets touched by the chain, in order of first access.
    pub fn datasets(&self) -> Vec<DatasetId> {
        let mut out = Vec::new();
        for lp in &self.loops {
            for a in &lp.args {
                if !out.contains(&a.dataset) {
                    out.push(a.dataset);
                }
            }
        }
        out
    }

    /// Hash of everything the tiling depends on: ranges, datasets, stencils
    /// and access modes (not kernels or ids).
    pub fn structural_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.loops.len().hash(&mut h);
        for lp in &self.loops {
            lp.range.hash(&mut h);
            for a in &lp.args {
                a.dataset.hash(&mut h);
                a.stencil.hash(&mut h);
                a.mode.hash(&mut h);
            }
        }
        h.finish()
    }
}
