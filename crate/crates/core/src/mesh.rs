//! Blocks, datasets, stencils and parallel loops.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Expr, Kernel};
use crate::extent::{BoxBuf, Extent, Index, MAX_DIMS};

/// Opaque handle to a dataset declared on a [`Block`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DatasetId(pub usize);

/// Host region whose values were dropped by a cyclic-discard chain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StaleRegion {
    pub region: Extent,
    pub chain: u64,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub core: Extent,
    pub halo: Index,
    pub elem_bytes: u64,
    pub host: BoxBuf,
    pub host_stale: Option<StaleRegion>,
    pub ever_written: bool,
}

impl Dataset {
    /// Core extent grown by the halo on every side.
    pub fn alloc(&self) -> Extent {
        self.host.ext
    }

    pub fn bytes(&self) -> u64 {
        self.alloc().points() * self.elem_bytes
    }
}

/// Initial contents of a dataset, covering core and halo.
pub enum Fill<'a> {
    Value(f64),
    Expr(&'a Expr),
    Func(&'a dyn Fn(&Index) -> f64),
}

impl Fill<'_> {
    fn at(&self, p: &Index) -> f64 {
        match self {
            Fill::Value(v) => *v,
            Fill::Expr(e) => e.eval(&mut |_, _| f64::NAN, p),
            Fill::Func(f) => f(p),
        }
    }
}

/// A structured block: the set of datasets sharing one index space.
#[derive(Clone, Debug)]
pub struct Block {
    pub ndim: usize,
    datasets: Vec<Dataset>,
    by_name: HashMap<String, DatasetId>,
}

impl Block {
    pub fn new(ndim: usize) -> Result<Self> {
        if ndim == 0 || ndim > MAX_DIMS {
            return Err(Error::InvalidExtent(format!("block dimension {ndim} not in 1..=3")));
        }
        Ok(Block { ndim, datasets: Vec::new(), by_name: HashMap::new() })
    }

    pub fn declare_dataset(
        &mut self,
        name: &str,
        core: Extent,
        halo: &[i64],
        elem_bytes: u64,
        fill: Fill<'_>,
    ) -> Result<DatasetId> {
        if self.by_name.contains_key(name) {
            return Err(Error::DuplicateDataset(name.to_string()));
        }
        if core.ndim != self.ndim || halo.len() != self.ndim {
            return Err(Error::InvalidExtent(format!("dataset `{name}` must be {}-dimensional", self.ndim)));
        }
        if core.points() == 0 || halo.iter().any(|&h| h < 0) || elem_bytes == 0 {
            return Err(Error::InvalidExtent(format!("dataset `{name}` has a zero-size extent or negative halo")));
        }
        let mut h = [0; MAX_DIMS];
        h[..halo.len()].copy_from_slice(halo);
        let alloc = core.expand(&h.map(|x| -x), &h);
        let mut host = BoxBuf::filled(alloc, 0.0);
        alloc.for_each_point(|p| host.set(&p, fill.at(&p)));
        let id = DatasetId(self.datasets.len());
        self.datasets.push(Dataset {
            name: name.to_string(),
            core,
            halo: h,
            elem_bytes,
            host,
            host_stale: None,
            ever_written: false,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn dataset(&self, id: DatasetId) -> &Dataset {
        &self.datasets[id.0]
    }

    pub fn dataset_mut(&mut self, id: DatasetId) -> &mut Dataset {
        &mut self.datasets[id.0]
    }

    pub fn datasets(&self) -> &[Dataset] {
        &self.datasets
    }

    pub fn lookup(&self, name: &str) -> Option<DatasetId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = DatasetId> {
        (0..self.datasets.len()).map(DatasetId)
    }

    /// Host buffers of all datasets, indexed by `DatasetId`.
    pub fn host_buffers_mut(&mut self) -> Vec<&mut BoxBuf> {
        self.datasets.iter_mut().map(|d| &mut d.host).collect()
    }

    /// Checks every contract a loop must meet before it can be queued.
    pub fn validate_loop(&self, lp: &ParLoop) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidLoop(format!("{}: {msg}", lp.name)));
        if lp.range.ndim != self.ndim {
            return bad(format!("range is {}-d on a {}-d block", lp.range.ndim, self.ndim));
        }
        let mut written: Vec<DatasetId> = Vec::new();
        for (i, arg) in lp.args.iter().enumerate() {
            if arg.dataset.0 >= self.datasets.len() {
                return bad(format!("argument {i} names an unknown dataset"));
            }
            let ds = self.dataset(arg.dataset);
            if arg.stencil.ndim != self.ndim || arg.stencil.offsets.is_empty() {
                return bad(format!("argument {i} has a malformed stencil"));
            }
            if arg.mode.writes() {
                if !arg.stencil.is_point() {
                    return bad(format!("argument {i} writes `{}` through a non-point stencil", ds.name));
                }
                if !ds.core.contains_extent(&lp.range) {
                    return bad(format!("range {} leaves the core {} of `{}`", lp.range, ds.core, ds.name));
                }
                written.push(arg.dataset);
            } else {
                let (lo, hi) = arg.stencil.extents();
                if !ds.alloc().contains_extent(&lp.range.expand(&lo, &hi)) {
                    return bad(format!("reads of `{}` leave its allocation {}", ds.name, ds.alloc()));
                }
            }
        }
        for (i, arg) in lp.args.iter().enumerate() {
            let dup = lp.args.iter().enumerate().any(|(k, other)| k != i && other.dataset == arg.dataset);
            if dup && written.contains(&arg.dataset) {
                return bad(format!(
                    "written dataset `{}` appears in more than one argument",
                    self.dataset(arg.dataset).name
                ));
            }
        }

        let check_expr = |e: &Expr| -> Result<()> {
            if e.uses_coords() {
                return Err(Error::InvalidLoop(format!("{}: kernels cannot use coordinates", lp.name)));
            }
            let mut err = None;
            e.for_each_read(&mut |a, off| {
                if err.is_some() {
                    return;
                }
                match lp.args.get(a) {
                    None => err = Some(format!("read of missing argument {a}")),
                    Some(arg) if !arg.mode.reads() => err = Some(format!("read of write-only argument {a}")),
                    Some(arg) if !arg.stencil.offsets.contains(off) => {
                        err = Some(format!("offset {off:?} is not in the stencil of argument {a}"))
                    }
                    _ => {}
                }
            });
            match err {
                Some(m) => Err(Error::InvalidLoop(format!("{}: {m}", lp.name))),
                None => Ok(()),
            }
        };

        for (i, arg) in lp.args.iter().enumerate() {
            let n = lp.kernel.writes.iter().filter(|(a, _)| *a == i).count();
            if arg.mode.writes() && n != 1 {
                return bad(format!("written argument {i} needs exactly one expression, has {n}"));
            }
        }
        for (a, e) in &lp.kernel.writes {
            match lp.args.get(*a) {
                Some(arg) if arg.mode.writes() => {}
                _ => return bad(format!("expression targets argument {a}, which is not written")),
            }
            check_expr(e)?;
        }
        if let Some(r) = &lp.kernel.reduction {
            check_expr(&r.expr)?;
        }
        if lp.kernel.writes.is_empty() && lp.kernel.reduction.is_none() {
            return bad("kernel neither writes nor reduces".into());
        }
        Ok(())
    }
}

/// Set of relative offsets used to access a dataset.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Stencil {
    pub ndim: usize,
    pub offsets: Vec<Index>,
}

impl Stencil {
    pub fn new(ndim: usize, offsets: &[&[i64]]) -> Result<Self> {
        if offsets.is_empty() {
            return Err(Error::InvalidLoop("stencil needs at least one offset".into()));
        }
        let mut out = Vec::with_capacity(offsets.len());
        for o in offsets {
            if o.len() != ndim {
                return Err(Error::InvalidLoop(format!("offset {o:?} is not {ndim}-d")));
            }
            let mut v = [0; MAX_DIMS];
            v[..ndim].copy_from_slice(o);
            if !out.contains(&v) {
                out.push(v);
            }
        }
        Ok(Stencil { ndim, offsets: out })
    }

    pub fn point(ndim: usize) -> Self {
        Stencil { ndim, offsets: vec![[0; MAX_DIMS]] }
    }

    /// Axis-aligned star of the given radius (`2*ndim*radius + 1` points).
    pub fn star(ndim: usize, radius: i64) -> Self {
        let mut offsets = vec![[0; MAX_DIMS]];
        for d in 0..ndim {
            for r in 1..=radius {
                for s in [-r, r] {
                    let mut o = [0; MAX_DIMS];
                    o[d] = s;
                    offsets.push(o);
                }
            }
        }
        Stencil { ndim, offsets }
    }

    /// Offsets `-radius..=radius` along one dimension only.
    pub fn line(ndim: usize, dim: usize, radius: i64) -> Self {
        let offsets = (-radius..=radius)
            .map(|r| {
                let mut o = [0; MAX_DIMS];
                o[dim] = r;
                o
            })
            .collect();
        Stencil { ndim, offsets }
    }

    pub fn is_point(&self) -> bool {
        self.offsets.iter().all(|o| *o == [0; MAX_DIMS])
    }

    /// Per-dimension minimum and maximum offset.
    pub fn extents(&self) -> (Index, Index) {
        let mut lo = [0; MAX_DIMS];
        let mut hi = [0; MAX_DIMS];
        for d in 0..self.ndim {
            lo[d] = self.offsets.iter().map(|o| o[d]).min().unwrap_or(0);
            hi[d] = self.offsets.iter().map(|o| o[d]).max().unwrap_or(0);
        }
        (lo, hi)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessMode {
    Read,
    Write,
    ReadWrite,
}

impl AccessMode {
    pub fn reads(self) -> bool {
        matches!(self, AccessMode::Read | AccessMode::ReadWrite)
    }

    pub fn writes(self) -> bool {
        matches!(self, AccessMode::Write | AccessMode::ReadWrite)
    }

    /// Bytes-moved multiplier: one pass for a read or a write, two for both.
    pub fn multiplier(self) -> u64 {
        match self {
            AccessMode::Read | AccessMode::Write => 1,
            AccessMode::ReadWrite => 2,
        }
    }
}

impl fmt::Display for AccessMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AccessMode::Read => "READ",
            AccessMode::Write => "WRITE",
            AccessMode::ReadWrite => "READ_WRITE",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Arg {
    pub dataset: DatasetId,
    pub stencil: Stencil,
    pub mode: AccessMode,
}

impl Arg {
    pub fn new(dataset: DatasetId, stencil: Stencil, mode: AccessMode) -> Self {
        Arg { dataset, stencil, mode }
    }

    pub fn read(dataset: DatasetId, stencil: Stencil) -> Self {
        Arg::new(dataset, stencil, AccessMode::Read)
    }

    pub fn write(dataset: DatasetId, ndim: usize) -> Self {
        Arg::new(dataset, Stencil::point(ndim), AccessMode::Write)
    }

    pub fn read_write(dataset: DatasetId, ndim: usize) -> Self {
        Arg::new(dataset, Stencil::point(ndim), AccessMode::ReadWrite)
    }
}

/// A parallel loop: a kernel applied at every point of `range`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParLoop {
    /// Sequence number, assigned when the loop is queued.
    pub id: u64,
    pub name: String,
    pub range: Extent,
    pub args: Vec<Arg>,
    pub kernel: Kernel,
}

impl ParLoop {
    pub fn new(name: impl Into<String>, range: Extent, args: Vec<Arg>, kernel: Kernel) -> Self {
        ParLoop { id: 0, name: name.into(), range, args, kernel }
    }

    pub fn writes(&self, d: DatasetId) -> bool {
        self.args.iter().any(|a| a.dataset == d && a.mode.writes())
    }

    pub fn reads(&self, d: DatasetId) -> bool {
        self.args.iter().any(|a| a.dataset == d && a.mode.reads())
    }

    pub fn written(&self) -> impl Iterator<Item = DatasetId> + '_ {
        self.args.iter().filter(|a| a.mode.writes()).map(|a| a.dataset)
    }

    /// Per-dimension read offset bounds on `d` over all reading arguments.
    pub fn read_extents(&self, d: DatasetId) -> Option<(Index, Index)> {
        self.args.iter().filter(|a| a.dataset == d && a.mode.reads()).map(|a| a.stencil.extents()).reduce(
            |(l1, h1), (l2, h2)| {
                let mut lo = l1;
                let mut hi = h1;
                for k in 0..MAX_DIMS {
                    lo[k] = lo[k].min(l2[k]);
                    hi[k] = hi[k].max(h2[k]);
                }
                (lo, hi)
            },
        )
    }

    pub fn has_reduction(&self) -> bool {
        self.kernel.reduction.is_some()
    }
}
