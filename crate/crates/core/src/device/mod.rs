//! Simulated two-tier memory system: configuration and the three execution
//! modes (explicit slots, LRU cache, unified memory).

use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::chain::LoopChain;
use crate::error::{Error, Result};
use crate::exec::{execute_subrange, BufTable, ReductionAcc};
use crate::mesh::{Block, DatasetId};
use crate::metrics::loop_bytes;
use crate::tiler::{choose_tile_count, compute_footprints, compute_tile_plan, default_tiled_dim, Footprints, TilePlan};
use crate::timeline::{simulate_timeline, Command, CommandKind, Program, Timeline};

pub mod cache;
pub mod explicit;
pub mod paging;
pub mod unified;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Reference,
    Explicit,
    Cache,
    Unified,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "reference" => Mode::Reference,
            "explicit" => Mode::Explicit,
            "cache" => Mode::Cache,
            "unified" => Mode::Unified,
            other => return Err(Error::Config(format!("unknown mode `{other}`"))),
        })
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Reference => "reference",
            Mode::Explicit => "explicit",
            Mode::Cache => "cache",
            Mode::Unified => "unified",
        })
    }
}

/// Bandwidths are bytes/s, latencies seconds, sizes bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceConfig {
    pub capacity_bytes: u64,
    pub h2d_bandwidth: f64,
    pub d2h_bandwidth: f64,
    pub d2d_bandwidth: f64,
    /// Applied to the metric bytes of a loop.
    pub device_kernel_bandwidth: f64,
    /// Per transfer command.
    pub transfer_latency: f64,
    pub mode: Mode,
    pub cache_page_bytes: u64,
    pub fault_latency: f64,
    pub prefetch_bandwidth: f64,
    /// Derates prefetch throughput, e.g. when oversubscribed.
    pub prefetch_multiplier: f64,
}

pub const PCIE_BANDWIDTH: f64 = 16e9;
pub const NVLINK_BANDWIDTH: f64 = 40e9;
pub const DEVICE_BANDWIDTH: f64 = 510e9;

impl Default for DeviceConfig {
    fn default() -> Self {
        DeviceConfig {
            capacity_bytes: 16_000_000_000,
            h2d_bandwidth: PCIE_BANDWIDTH,
            d2h_bandwidth: PCIE_BANDWIDTH,
            d2d_bandwidth: DEVICE_BANDWIDTH,
            device_kernel_bandwidth: DEVICE_BANDWIDTH,
            transfer_latency: 1e-8,
            mode: Mode::Explicit,
            cache_page_bytes: 4096,
            fault_latency: 2e-6,
            prefetch_bandwidth: PCIE_BANDWIDTH,
            prefetch_multiplier: 1.0,
        }
    }
}

impl DeviceConfig {
    /// Host link at NVLink speed in both directions.
    pub fn nvlink() -> Self {
        DeviceConfig {
            h2d_bandwidth: NVLINK_BANDWIDTH,
            d2h_bandwidth: NVLINK_BANDWIDTH,
            prefetch_bandwidth: NVLINK_BANDWIDTH,
            ..Default::default()
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_capacity(mut self, bytes: u64) -> Self {
        self.capacity_bytes = bytes;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("h2d_bandwidth", self.h2d_bandwidth),
            ("d2h_bandwidth", self.d2h_bandwidth),
            ("d2d_bandwidth", self.d2d_bandwidth),
            ("device_kernel_bandwidth", self.device_kernel_bandwidth),
            ("prefetch_bandwidth", self.prefetch_bandwidth),
            ("prefetch_multiplier", self.prefetch_multiplier),
        ];
        for (name, v) in rates {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        // zero latencies are allowed: they make analytic timelines exact
        for (name, v) in [("transfer_latency", self.transfer_latency), ("fault_latency", self.fault_latency)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.capacity_bytes == 0 || self.cache_page_bytes == 0 {
            return Err(Error::Config("capacity and page size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum TileSpec {
    Fixed(usize),
    /// Smallest count whose three slots fit the device capacity.
    Auto,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub tiles: TileSpec,
    /// Defaults to the slowest-varying dimension.
    pub tiled_dim: Option<usize>,
    pub cyclic: bool,
    pub prefetch: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { tiles: TileSpec::Fixed(1), tiled_dim: None, cyclic: false, prefetch: false }
    }
}

pub fn write_audit<W: std::io::Write>(w: W, rows: &[AuditRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["chain", "dataset", "tile", "uploaded", "downloaded", "d2d"])?;
    for r in rows {
        out.serialize((r.chain, &r.dataset, r.tile, r.uploaded, r.downloaded, r.d2d))?;
    }
    out.flush()?;
    Ok(())
}

/// Bytes moved for one dataset in one tile of one chain.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditRow {
    pub chain: u64,
    pub dataset: String,
    pub tile: usize,
    pub uploaded: u64,
    pub downloaded: u64,
    pub d2d: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DeviceStats {
    pub chains: u64,
    pub last_tile_count: usize,
    pub max_tile_count: usize,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub faults: u64,
    pub writebacks: u64,
    pub plan_cache_hits: u64,
}

impl DeviceStats {
    pub fn hit_rate(&self) -> f64 {
        let total = self.cache_hits + self.cache_misses;
        if total == 0 {
            1.0
        } else {
            self.cache_hits as f64 / total as f64
        }
    }
}

type CachedPlan = Rc<(TilePlan, Footprints)>;

/// Executes chains in one of the modes and records every command it would
/// issue. State persists across chains (speculative uploads, cache and page
/// residency).
pub struct Device {
    pub cfg: DeviceConfig,
    pub program: Program,
    pub audit: Vec<AuditRow>,
    pub stats: DeviceStats,
    plans: HashMap<(u64, TileSpec, usize), CachedPlan>,
    explicit: explicit::ExplicitState,
    cache: Option<cache::CacheState>,
    unified: Option<unified::UnifiedState>,
    touched: HashSet<DatasetId>,
}

impl Device {
    pub fn new(cfg: DeviceConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Device {
            cfg,
            program: Program::new(3),
            audit: Vec::new(),
            stats: DeviceStats::default(),
            plans: HashMap::new(),
            explicit: Default::default(),
            cache: None,
            unified: None,
            touched: HashSet::new(),
        })
    }

    /// Records that the host read `d`; speculative device copies of it are
    /// not trusted afterwards.
    pub fn mark_host_touched(&mut self, d: DatasetId) {
        self.touched.insert(d);
    }

    pub fn plan(&mut self, chain: &LoopChain, block: &Block, opts: &RunOptions) -> Result<CachedPlan> {
        let dim = opts.tiled_dim.unwrap_or_else(|| default_tiled_dim(chain));
        let key = (chain.structural_hash(), opts.tiles, dim);
        if let Some(p) = self.plans.get(&key) {
            self.stats.plan_cache_hits += 1;
            return Ok(p.clone());
        }
        let tiles = match opts.tiles {
            TileSpec::Fixed(t) => t,
            TileSpec::Auto => choose_tile_count(chain, block, self.cfg.capacity_bytes, dim)?.tiles,
        };
        let plan = compute_tile_plan(chain, tiles, dim)?;
        let fp = compute_footprints(&plan, chain, block);
        let p = Rc::new((plan, fp));
        self.plans.insert(key, p.clone());
        Ok(p)
    }

    /// Runs one chain to completion; returns its reduction results.
    pub fn run_chain(&mut self, chain: &LoopChain, block: &mut Block, opts: &RunOptions) -> Result<Vec<(String, f64)>> {
        self.program.set_chain(chain.id);
        self.stats.chains += 1;
        let out = match self.cfg.mode {
            Mode::Reference => self.run_reference(chain, block),
            mode => {
                let p = self.plan(chain, block, opts)?;
                let (plan, fp) = (&p.0, &p.1);
                self.stats.last_tile_count = plan.tile_count;
                self.stats.max_tile_count = self.stats.max_tile_count.max(plan.tile_count);
                match mode {
                    Mode::Explicit => explicit::run(self, chain, plan, fp, block, opts),
                    Mode::Cache => cache::run(self, chain, plan, block),
                    Mode::Unified => unified::run(self, chain, plan, fp, block, opts),
                    Mode::Reference => unreachable!(),
                }
            }
        };
        self.touched.clear();
        out
    }

    /// Untiled host execution; kernel commands carry measured wall time.
    fn run_reference(&mut self, chain: &LoopChain, block: &mut Block) -> Result<Vec<(String, f64)>> {
        let mut acc = ReductionAcc::new(chain);
        for (j, lp) in chain.loops.iter().enumerate() {
            let bytes = loop_bytes(lp, block);
            let mut bufs: BufTable<'_> = block.host_buffers_mut().into_iter().map(Some).collect();
            let t0 = Instant::now();
            execute_subrange(lp, &lp.range, &mut bufs, acc.slot(j));
            let dt = t0.elapsed().as_secs_f64();
            self.program.push(Command::new(CommandKind::Kernel, 0, bytes).tile(0).loop_index(j).timed(dt));
        }
        self.program.host_wait_all();
        Ok(acc.finish())
    }

    pub fn timeline(&self) -> Result<Timeline> {
        simulate_timeline(&self.program, &self.cfg)
    }

    pub fn audit_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        write_audit(w, &self.audit)
    }
}
