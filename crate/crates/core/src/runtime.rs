//! Lazy loop queue: loops are recorded, not run, until the program asks for
//! data back. Each such request executes the pending loops as one chain.

use log::info;
use serde::Serialize;

use crate::chain::{FlushReason, LoopChain};
use crate::device::{Device, DeviceConfig, RunOptions};
use crate::error::{Error, Result};
use crate::extent::{BoxBuf, Extent};
use crate::mesh::{Block, DatasetId, Fill, ParLoop};
use crate::metrics::{aggregate, loop_metrics, Aggregate, LoopInfo, LoopMetric};
use crate::timeline::Timeline;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlushRecord {
    pub chain: u64,
    pub reason: FlushReason,
    pub loops: usize,
}

pub struct Runtime {
    block: Block,
    device: Device,
    opts: RunOptions,
    pending: Vec<ParLoop>,
    next_chain: u64,
    next_loop: u64,
    flushes: Vec<FlushRecord>,
    infos: Vec<LoopInfo>,
    reductions: Vec<(String, f64)>,
}

impl Runtime {
    pub fn new(block: Block, cfg: DeviceConfig, opts: RunOptions) -> Result<Self> {
        Ok(Runtime {
            block,
            device: Device::new(cfg)?,
            opts,
            pending: Vec::new(),
            next_chain: 0,
            next_loop: 0,
            flushes: Vec::new(),
            infos: Vec::new(),
            reductions: Vec::new(),
        })
    }

    pub fn block(&self) -> &Block {
        &self.block
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn options(&self) -> &RunOptions {
        &self.opts
    }

    /// Datasets can only be added before the first chain runs: the cache and
    /// unified models lay out pages on first use.
    pub fn declare_dataset(
        &mut self,
        name: &str,
        core: Extent,
        halo: &[i64],
        elem_bytes: u64,
        fill: Fill<'_>,
    ) -> Result<DatasetId> {
        if self.next_chain > 0 {
            return Err(Error::Config(format!("dataset `{name}` declared after execution started")));
        }
        self.block.declare_dataset(name, core, halo, elem_bytes, fill)
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn flushes(&self) -> &[FlushRecord] {
        &self.flushes
    }

    pub fn loop_infos(&self) -> &[LoopInfo] {
        &self.infos
    }

    pub fn set_cyclic(&mut self, on: bool) {
        self.opts.cyclic = on;
    }

    pub fn cyclic(&self) -> bool {
        self.opts.cyclic
    }

    /// Queues a loop. A reducing loop ends the chain right after itself, and
    /// the chain's reduction results are returned.
    pub fn enqueue(&mut self, mut lp: ParLoop) -> Result<Option<Vec<(String, f64)>>> {
        self.block.validate_loop(&lp)?;
        lp.id = self.next_loop;
        self.next_loop += 1;
        let reduces = lp.has_reduction();
        self.pending.push(lp);
        if reduces {
            return self.flush(FlushReason::ReductionFetch).map(Some);
        }
        Ok(None)
    }

    /// Runs the pending chain, if any.
    pub fn flush(&mut self, reason: FlushReason) -> Result<Vec<(String, f64)>> {
        if self.pending.is_empty() {
            return Ok(Vec::new());
        }
        let chain = LoopChain::new(self.next_chain, std::mem::take(&mut self.pending), reason);
        self.next_chain += 1;
        info!(
            target: "oocstencil::flush",
            "chain_id={} reason={:?} loops={}",
            chain.id,
            reason,
            chain.loops.len()
        );
        self.flushes.push(FlushRecord { chain: chain.id, reason, loops: chain.loops.len() });
        for (j, lp) in chain.loops.iter().enumerate() {
            self.infos.push(LoopInfo::new(chain.id, j, lp, &self.block));
        }
        let out = self.device.run_chain(&chain, &mut self.block, &self.opts)?;
        for (name, v) in &out {
            match self.reductions.iter_mut().find(|(n, _)| n == name) {
                Some(slot) => slot.1 = *v,
                None => self.reductions.push((name.clone(), *v)),
            }
        }
        Ok(out)
    }

    pub fn reductions(&self) -> &[(String, f64)] {
        &self.reductions
    }

    /// Latest value of a named reduction.
    pub fn reduction(&self, name: &str) -> Option<f64> {
        self.reductions.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    /// Flushes, then returns a copy of the dataset's host data.
    pub fn fetch(&mut self, d: DatasetId) -> Result<BoxBuf> {
        self.flush(FlushReason::DataFetch)?;
        let ds = self.block.dataset(d);
        if let Some(st) = ds.host_stale {
            return Err(Error::StaleData { dataset: ds.name.clone(), chain: st.chain });
        }
        self.device.mark_host_touched(d);
        Ok(self.block.dataset(d).host.clone())
    }

    /// Flushes the residue at program end.
    pub fn finish(&mut self) -> Result<()> {
        self.flush(FlushReason::ProgramEnd).map(|_| ())
    }

    pub fn timeline(&self) -> Result<Timeline> {
        self.device.timeline()
    }

    pub fn metrics(&self) -> Result<(Vec<LoopMetric>, Aggregate, Timeline)> {
        let tl = self.timeline()?;
        let m = loop_metrics(&self.infos, &tl)?;
        let a = aggregate(&m, Some(&tl))?;
        Ok((m, a, tl))
    }

    pub fn into_block(self) -> Block {
        self.block
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::Mode;
    use crate::expr::{Expr, Kernel, ReduceOp};
    use crate::mesh::{Arg, Stencil};

    fn rt(mode: Mode) -> (Runtime, DatasetId) {
        let mut b = Block::new(1).unwrap();
        let a = b.declare_dataset("a", Extent::sized(&[8]).unwrap(), &[0], 8, Fill::Value(1.0)).unwrap();
        let cfg = DeviceConfig::default().with_mode(mode);
        (Runtime::new(b, cfg, RunOptions::default()).unwrap(), a)
    }

    fn inc(a: DatasetId) -> ParLoop {
        let e = Expr::parse("(+ (r 0 0) 1)").unwrap();
        ParLoop::new("inc", Extent::sized(&[8]).unwrap(), vec![Arg::read_write(a, 1)], Kernel::write(0, e))
    }

    #[test]
    fn loops_are_deferred_until_fetch() {
        let (mut r, a) = rt(Mode::Reference);
        for _ in 0..3 {
            assert_eq!(r.enqueue(inc(a)).unwrap(), None);
        }
        assert_eq!(r.pending_len(), 3);
        assert_eq!(r.block().dataset(a).host.data[0], 1.0);
        assert!(r.flushes().is_empty());
        let v = r.fetch(a).unwrap();
        assert!(v.data.iter().all(|&x| x == 4.0));
        assert_eq!(r.flushes(), &[FlushRecord { chain: 0, reason: FlushReason::DataFetch, loops: 3 }]);
    }

    #[test]
    fn fetch_without_loops_returns_fill() {
        let (mut r, a) = rt(Mode::Explicit);
        assert!(r.fetch(a).unwrap().data.iter().all(|&x| x == 1.0));
        assert!(r.flushes().is_empty());
    }

    #[test]
    fn reduction_flushes_immediately() {
        let (mut r, a) = rt(Mode::Explicit);
        r.enqueue(inc(a)).unwrap();
        let lp = ParLoop::new(
            "sum",
            Extent::sized(&[8]).unwrap(),
            vec![Arg::read(a, Stencil::point(1))],
            Kernel::reduce(ReduceOp::Sum, "total", Expr::read(0, &[0])),
        );
        let out = r.enqueue(lp).unwrap().unwrap();
        assert_eq!(out, vec![("total".to_string(), 16.0)]);
        assert_eq!(r.reduction("total"), Some(16.0));
        r.enqueue(inc(a)).unwrap();
        r.finish().unwrap();
        let ids: Vec<_> = r.flushes().iter().map(|f| (f.chain, f.reason)).collect();
        assert_eq!(ids, vec![(0, FlushReason::ReductionFetch), (1, FlushReason::ProgramEnd)]);
        assert!(r.declare_dataset("late", Extent::sized(&[8]).unwrap(), &[0], 8, Fill::Value(0.0)).is_err());
    }

    #[test]
    fn cyclic_flag_defaults_off() {
        let (mut r, _) = rt(Mode::Explicit);
        assert!(!r.cyclic());
        r.set_cyclic(true);
        assert!(r.cyclic());
    }

    #[test]
    fn stale_temporary_cannot_be_fetched() {
        let mut b = Block::new(1).unwrap();
        let core = Extent::sized(&[8]).unwrap();
        let a = b.declare_dataset("a", core, &[0], 8, Fill::Value(1.0)).unwrap();
        let t = b.declare_dataset("tmp", core, &[0], 8, Fill::Value(0.0)).unwrap();
        let mut r = Runtime::new(b, DeviceConfig::default(), RunOptions::default()).unwrap();
        r.set_cyclic(true);
        r.enqueue(ParLoop::new(
            "w",
            core,
            vec![Arg::read(a, Stencil::point(1)), Arg::write(t, 1)],
            Kernel::write(1, Expr::read(0, &[0])),
        ))
        .unwrap();
        r.enqueue(ParLoop::new(
            "u",
            core,
            vec![Arg::read(t, Stencil::point(1)), Arg::write(a, 1)],
            Kernel::write(1, Expr::read(0, &[0])),
        ))
        .unwrap();
        r.flush(FlushReason::ExplicitFlush).unwrap();
        match r.fetch(t) {
            Err(Error::StaleData { dataset, chain }) => assert_eq!((dataset.as_str(), chain), ("tmp", 0)),
            other => panic!("expected stale data, got {other:?}"),
        }
        assert!(r.fetch(a).is_ok());
    }
}
