//! Runs a workload end to end, optionally checks it against the reference
//! executor, and collects the report rows.

use crate::apps::{format_size, AppSpec, Workload};
use crate::device::{AuditRow, DeviceConfig, DeviceStats, Mode, RunOptions};
use crate::error::Result;
use crate::mesh::Block;
use crate::metrics::{LoopMetric, RunReport};
use crate::runtime::{FlushRecord, Runtime};
use crate::timeline::Timeline;

pub struct RunOutcome {
    pub report: RunReport,
    pub loops: Vec<LoopMetric>,
    pub timeline: Timeline,
    pub audit: Vec<AuditRow>,
    pub stats: DeviceStats,
    pub flushes: Vec<FlushRecord>,
    pub reductions: Vec<(String, f64)>,
    pub block: Block,
    /// Datasets (and reductions) differing from the reference run; `None`
    /// when verification was not requested.
    pub mismatches: Option<Vec<String>>,
}

pub fn problem_bytes(block: &Block) -> u64 {
    block.datasets().iter().map(|d| d.bytes()).sum()
}

/// Device capacity that makes the problem `ratio` times larger than it.
pub fn capacity_for_ratio(w: &Workload, ratio: f64) -> Result<u64> {
    let bytes = problem_bytes(&w.build()?);
    Ok(((bytes as f64 / ratio).floor() as u64).max(1))
}

/// Final host state and reductions of a plain host run.
pub fn run_reference(w: &Workload) -> Result<(Block, Vec<(String, f64)>)> {
    let cfg = DeviceConfig::default().with_mode(Mode::Reference);
    let mut rt = Runtime::new(w.build()?, cfg, RunOptions::default())?;
    w.drive(&mut rt, false)?;
    let red = rt.reductions().to_vec();
    Ok((rt.into_block(), red))
}

/// Bitwise comparison of every dataset whose host copy is valid.
pub fn compare_blocks(run: &Block, reference: &Block) -> Vec<String> {
    let mut bad = Vec::new();
    for (a, b) in run.datasets().iter().zip(reference.datasets()) {
        if a.host_stale.is_some() {
            continue;
        }
        let same = a.host.data.len() == b.host.data.len()
            && a.host.data.iter().zip(&b.host.data).all(|(x, y)| x.to_bits() == y.to_bits());
        if !same {
            bad.push(a.name.clone());
        }
    }
    bad
}

pub fn run_workload(w: &Workload, cfg: &DeviceConfig, opts: &RunOptions, verify: bool) -> Result<RunOutcome> {
    let block = w.build()?;
    let problem = problem_bytes(&block);
    let mut rt = Runtime::new(block, cfg.clone(), RunOptions { cyclic: false, ..opts.clone() })?;
    w.drive(&mut rt, opts.cyclic)?;
    let (loops, agg, timeline) = rt.metrics()?;
    let stats = rt.device().stats.clone();
    let report = RunReport {
        app: w.label(),
        size: w.size_label(),
        mode: cfg.mode.to_string(),
        tiles: stats.max_tile_count.max(1),
        cyclic: opts.cyclic,
        prefetch: opts.prefetch,
        capacity_bytes: cfg.capacity_bytes,
        problem_bytes: problem,
        loops: agg.loops,
        total_bytes: agg.total_bytes,
        total_time: agg.total_time,
        average_bandwidth: agg.average_bandwidth,
        efficiency: agg.average_bandwidth / cfg.device_kernel_bandwidth,
        uploaded: agg.uploaded,
        downloaded: agg.downloaded,
        d2d: agg.d2d,
        prefetched: agg.prefetched,
        makespan: agg.makespan,
        hit_rate: stats.hit_rate(),
        faults: stats.faults,
        error: String::new(),
    };
    let audit = rt.device().audit.clone();
    let flushes = rt.flushes().to_vec();
    let reductions = rt.reductions().to_vec();
    let block = rt.into_block();
    let mismatches = if verify {
        let (rblock, rred) = run_reference(w)?;
        let mut bad = compare_blocks(&block, &rblock);
        let same_red = reductions.len() == rred.len()
            && reductions.iter().zip(&rred).all(|(a, b)| a.0 == b.0 && a.1.to_bits() == b.1.to_bits());
        if !same_red {
            bad.push("reductions".into());
        }
        Some(bad)
    } else {
        None
    };
    Ok(RunOutcome { report, loops, timeline, audit, stats, flushes, reductions, block, mismatches })
}

fn failed_report(w: &Workload, cfg: &DeviceConfig, opts: &RunOptions, err: String) -> RunReport {
    RunReport {
        app: w.label(),
        size: w.size_label(),
        mode: cfg.mode.to_string(),
        tiles: 0,
        cyclic: opts.cyclic,
        prefetch: opts.prefetch,
        capacity_bytes: cfg.capacity_bytes,
        problem_bytes: w.build().map(|b| problem_bytes(&b)).unwrap_or(0),
        loops: 0,
        total_bytes: 0,
        total_time: 0.0,
        average_bandwidth: 0.0,
        efficiency: 0.0,
        uploaded: 0,
        downloaded: 0,
        d2d: 0,
        prefetched: 0,
        makespan: 0.0,
        hit_rate: 0.0,
        faults: 0,
        error: err,
    }
}

/// One report row per (size, mode); a failing run is recorded in its row's
/// `error` column and the sweep goes on.
pub fn scaling_sweep(
    base: &AppSpec,
    sizes: &[Vec<i64>],
    modes: &[Mode],
    cfg: &DeviceConfig,
    opts: &RunOptions,
) -> Vec<RunReport> {
    let mut rows = Vec::new();
    for size in sizes {
        let w = Workload::App(AppSpec { size: size.clone(), ..base.clone() });
        for &mode in modes {
            let cfg = cfg.clone().with_mode(mode);
            let row = match run_workload(&w, &cfg, opts, false) {
                Ok(o) => o.report,
                Err(e) => {
                    log::warn!("sweep {} {} {mode}: {e}", w.label(), format_size(size));
                    failed_report(&w, &cfg, opts, e.to_string())
                }
            };
            rows.push(row);
        }
    }
    rows
}

/// One report row per (ratio, mode) on a fixed problem, with the device
/// capacity set to problem bytes / ratio. Same access trace at every point,
/// so LRU hit rates can only fall as the ratio grows.
pub fn ratio_sweep(
    w: &Workload,
    ratios: &[f64],
    modes: &[Mode],
    cfg: &DeviceConfig,
    opts: &RunOptions,
) -> Result<Vec<RunReport>> {
    let mut rows = Vec::new();
    for &r in ratios {
        let cap = capacity_for_ratio(w, r)?;
        for &mode in modes {
            let cfg = cfg.clone().with_mode(mode).with_capacity(cap);
            rows.push(match run_workload(w, &cfg, opts, false) {
                Ok(o) => o.report,
                Err(e) => failed_report(w, &cfg, opts, e.to_string()),
            });
        }
    }
    Ok(rows)
}
