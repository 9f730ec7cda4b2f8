//! Point-wise kernel execution shared by every executor.

use crate::chain::LoopChain;
use crate::expr::ReduceOp;
use crate::extent::{BoxBuf, Extent, Index};
use crate::mesh::ParLoop;

/// Values a kernel produces at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct PointResult {
    /// `(argument index, value)` for every written argument.
    pub writes: Vec<(usize, f64)>,
    pub reduction: Option<f64>,
}

/// Evaluates `lp`'s kernel at `point`; `read(arg, offset)` must return the
/// value of argument `arg` at `point + offset`.
pub fn eval_kernel_at(lp: &ParLoop, point: &Index, mut read: impl FnMut(usize, &Index) -> f64) -> PointResult {
    let writes = lp.kernel.writes.iter().map(|(a, e)| (*a, e.eval(&mut read, point))).collect();
    let reduction = lp.kernel.reduction.as_ref().map(|r| r.expr.eval(&mut read, point));
    PointResult { writes, reduction }
}

/// Buffers visible to an executor, indexed by `DatasetId`.
pub type BufTable<'a> = Vec<Option<&'a mut BoxBuf>>;

/// Per-point reduction contributions for every reducing loop of a chain.
///
/// Contributions are stored by row-major position in the loop's range, so the
/// folded value does not depend on the order tiles ran in.
#[derive(Debug)]
pub struct ReductionAcc {
    slots: Vec<Option<(ReduceOp, String, Vec<f64>)>>,
}

impl ReductionAcc {
    pub fn new(chain: &LoopChain) -> Self {
        let slots = chain
            .loops
            .iter()
            .map(|lp| {
                lp.kernel
                    .reduction
                    .as_ref()
                    .map(|r| (r.op, r.name.clone(), vec![r.op.identity(); lp.range.points() as usize]))
            })
            .collect();
        ReductionAcc { slots }
    }

    pub fn slot(&mut self, loop_index: usize) -> Option<&mut Vec<f64>> {
        self.slots.get_mut(loop_index)?.as_mut().map(|s| &mut s.2)
    }

    /// Folds every reduction in row-major order.
    pub fn finish(self) -> Vec<(String, f64)> {
        self.slots.into_iter().flatten().map(|(op, name, vals)| (name, op.fold(&vals))).collect()
    }
}

/// Runs `lp` over `sub` (a sub-box of its range) against `bufs`.
///
/// Every row segment touched must lie inside the buffer backing it; this is
/// the footprint containment check for slot arenas.
pub fn execute_subrange(lp: &ParLoop, sub: &Extent, bufs: &mut BufTable<'_>, mut reduction: Option<&mut Vec<f64>>) {
    let nargs = lp.args.len();
    let mut strides = Vec::with_capacity(nargs);
    let mut base = vec![0i64; nargs];
    for a in &lp.args {
        let buf = bufs[a.dataset.0].as_deref().expect("dataset has no buffer");
        strides.push(buf.ext.strides());
    }
    let stencil_ext: Vec<(Index, Index)> = lp.args.iter().map(|a| a.stencil.extents()).collect();
    let row_len = sub.len(0);
    let mut vals = Vec::with_capacity(lp.kernel.writes.len());

    sub.for_each_row(|row| {
        let row_ext = sub.with_dim(1, row[1], row[1] + 1).unwrap();
        let row_ext = row_ext.with_dim(2, row[2], row[2] + 1).unwrap();
        for (i, a) in lp.args.iter().enumerate() {
            let buf = bufs[a.dataset.0].as_deref().unwrap();
            let touched = row_ext.expand(&stencil_ext[i].0, &stencil_ext[i].1);
            assert!(
                buf.ext.contains_extent(&touched),
                "loop `{}` touches {} of dataset {} outside its buffer {}",
                lp.name,
                touched,
                a.dataset.0,
                buf.ext
            );
            // the row start itself may lie outside when the stencil omits the centre
            base[i] = (0..3).map(|d| (row[d] - buf.ext.lo[d]) * strides[i][d]).sum();
        }
        for x in 0..row_len {
            let p = [row[0] + x, row[1], row[2]];
            {
                let view: &BufTable<'_> = bufs;
                let mut read = |arg: usize, off: &Index| -> f64 {
                    let s = &strides[arg];
                    let idx = base[arg] + x + off[0] + off[1] * s[1] + off[2] * s[2];
                    view[lp.args[arg].dataset.0].as_deref().unwrap().data[idx as usize]
                };
                vals.clear();
                for (a, e) in &lp.kernel.writes {
                    vals.push((*a, e.eval(&mut read, &p)));
                }
                if let (Some(acc), Some(r)) = (reduction.as_deref_mut(), lp.kernel.reduction.as_ref()) {
                    acc[lp.range.offset_of(&p)] = r.expr.eval(&mut read, &p);
                }
            }
            for &(a, v) in &vals {
                let idx = (base[a] + x) as usize;
                bufs[lp.args[a].dataset.0].as_deref_mut().unwrap().data[idx] = v;
            }
        }
    });
}

/// Untiled execution of a whole chain directly on host buffers.
pub fn run_chain_reference(chain: &LoopChain, bufs: &mut BufTable<'_>) -> Vec<(String, f64)> {
    let mut acc = ReductionAcc::new(chain);
    for (j, lp) in chain.loops.iter().enumerate() {
        execute_subrange(lp, &lp.range, bufs, acc.slot(j));
    }
    acc.finish()
}
