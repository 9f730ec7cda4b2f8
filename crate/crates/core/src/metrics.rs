//! Bytes-moved accounting and the time-weighted average bandwidth.

use std::collections::HashMap;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mesh::{Block, ParLoop};
use crate::timeline::{CommandKind, TimedCommand, Timeline};

/// Metric bytes of `lp` over `points` iteration points: per argument one
/// element per point, twice for read-write. Extra stencil offsets do not add
/// bytes.
pub fn loop_bytes_over(lp: &ParLoop, points: u64, block: &Block) -> u64 {
    lp.args.iter().map(|a| points * block.dataset(a.dataset).elem_bytes * a.mode.multiplier()).sum()
}

pub fn loop_bytes(lp: &ParLoop, block: &Block) -> u64 {
    loop_bytes_over(lp, lp.range.points(), block)
}

/// Identity and metric bytes of one executed loop.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LoopInfo {
    pub chain: u64,
    pub loop_index: usize,
    pub loop_id: u64,
    pub name: String,
    pub points: u64,
    pub bytes: u64,
}

impl LoopInfo {
    pub fn new(chain: u64, loop_index: usize, lp: &ParLoop, block: &Block) -> Self {
        LoopInfo {
            chain,
            loop_index,
            loop_id: lp.id,
            name: lp.name.clone(),
            points: lp.range.points(),
            bytes: loop_bytes(lp, block),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LoopMetric {
    pub chain: u64,
    pub loop_index: usize,
    pub loop_id: u64,
    pub name: String,
    pub points: u64,
    pub bytes: u64,
    pub time_s: f64,
}

impl LoopMetric {
    pub fn bandwidth(&self) -> f64 {
        self.bytes as f64 / self.time_s
    }
}

/// Elapsed time per `(chain, loop_index)`.
///
/// A cursor sweeps the timeline in issue order; each kernel is charged the
/// time between the cursor and its end, so transfers and waits that hold a
/// loop back are charged to it. Whatever a chain spends after its last kernel
/// goes to that kernel's loop. The charges add up to the makespan.
pub fn loop_times(timeline: &Timeline) -> HashMap<(u64, usize), f64> {
    let mut out: HashMap<(u64, usize), f64> = HashMap::new();
    let mut cursor = 0.0f64;
    let mut i = 0;
    let cmds = &timeline.commands;
    while i < cmds.len() {
        let chain = cmds[i].chain;
        let mut j = i;
        while j < cmds.len() && cmds[j].chain == chain {
            j += 1;
        }
        let mut kernels: Vec<&TimedCommand> = cmds[i..j].iter().filter(|c| c.kind == CommandKind::Kernel).collect();
        kernels.sort_by(|a, b| a.end.total_cmp(&b.end).then(a.id.cmp(&b.id)));
        let chain_end = cmds[i..j].iter().map(|c| c.end).fold(0.0, f64::max);
        for k in &kernels {
            let dt = (k.end - cursor).max(0.0);
            cursor = cursor.max(k.end);
            *out.entry((chain, k.loop_index.unwrap_or(0))).or_default() += dt;
        }
        if let Some(last) = kernels.last() {
            let tail = (chain_end - cursor).max(0.0);
            cursor = cursor.max(chain_end);
            *out.entry((chain, last.loop_index.unwrap_or(0))).or_default() += tail;
        }
        i = j;
    }
    out
}

pub fn loop_metrics(infos: &[LoopInfo], timeline: &Timeline) -> Result<Vec<LoopMetric>> {
    let times = loop_times(timeline);
    infos
        .iter()
        .map(|info| {
            let time_s = *times
                .get(&(info.chain, info.loop_index))
                .ok_or_else(|| Error::MissingTimeline(format!("loop `{}` of chain {}", info.name, info.chain)))?;
            Ok(LoopMetric {
                chain: info.chain,
                loop_index: info.loop_index,
                loop_id: info.loop_id,
                name: info.name.clone(),
                points: info.points,
                bytes: info.bytes,
                time_s,
            })
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Aggregate {
    pub loops: usize,
    pub total_bytes: u64,
    pub total_time: f64,
    /// Σ bytes / Σ time.
    pub average_bandwidth: f64,
    pub uploaded: u64,
    pub downloaded: u64,
    pub d2d: u64,
    pub prefetched: u64,
    pub makespan: f64,
}

pub fn aggregate(metrics: &[LoopMetric], timeline: Option<&Timeline>) -> Result<Aggregate> {
    let timeline = timeline.ok_or_else(|| Error::MissingTimeline("run".into()))?;
    if metrics.is_empty() {
        return Err(Error::MissingTimeline("no loops were executed".into()));
    }
    let total_bytes: u64 = metrics.iter().map(|m| m.bytes).sum();
    let total_time: f64 = metrics.iter().map(|m| m.time_s).sum();
    Ok(Aggregate {
        loops: metrics.len(),
        total_bytes,
        total_time,
        average_bandwidth: total_bytes as f64 / total_time,
        uploaded: timeline.bytes(CommandKind::H2D),
        downloaded: timeline.bytes(CommandKind::D2H),
        d2d: timeline.bytes(CommandKind::D2D),
        prefetched: timeline.bytes(CommandKind::Prefetch),
        makespan: timeline.makespan(),
    })
}

pub const REPORT_HEADER: &str = "#oocstencil-report-v1";

/// One row of `report.csv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub app: String,
    pub size: String,
    pub mode: String,
    pub tiles: usize,
    pub cyclic: bool,
    pub prefetch: bool,
    pub capacity_bytes: u64,
    pub problem_bytes: u64,
    pub loops: usize,
    pub total_bytes: u64,
    pub total_time: f64,
    pub average_bandwidth: f64,
    /// Average bandwidth relative to an all-in-fast-memory run.
    pub efficiency: f64,
    pub uploaded: u64,
    pub downloaded: u64,
    pub d2d: u64,
    pub prefetched: u64,
    pub makespan: f64,
    pub hit_rate: f64,
    pub faults: u64,
    pub error: String,
}

fn versioned_csv<W: Write, T: Serialize>(mut w: W, rows: &[T], header: &[&str]) -> Result<()> {
    writeln!(w, "{REPORT_HEADER}")?;
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(header)?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub const REPORT_COLUMNS: [&str; 21] = [
    "app",
    "size",
    "mode",
    "tiles",
    "cyclic",
    "prefetch",
    "capacity_bytes",
    "problem_bytes",
    "loops",
    "total_bytes",
    "total_time",
    "average_bandwidth",
    "efficiency",
    "uploaded",
    "downloaded",
    "d2d",
    "prefetched",
    "makespan",
    "hit_rate",
    "faults",
    "error",
];

pub fn write_reports<W: Write>(w: W, rows: &[RunReport]) -> Result<()> {
    versioned_csv(w, rows, &REPORT_COLUMNS)
}

pub fn write_loop_metrics<W: Write>(w: W, rows: &[LoopMetric]) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        chain: u64,
        loop_index: usize,
        loop_id: u64,
        name: &'a str,
        points: u64,
        bytes: u64,
        time_s: f64,
        bandwidth: f64,
    }
    let rows: Vec<Row<'_>> = rows
        .iter()
        .map(|m| Row {
            chain: m.chain,
            loop_index: m.loop_index,
            loop_id: m.loop_id,
            name: &m.name,
            points: m.points,
            bytes: m.bytes,
            time_s: m.time_s,
            bandwidth: m.bandwidth(),
        })
        .collect();
    versioned_csv(w, &rows, &["chain", "loop_index", "loop_id", "name", "points", "bytes", "time_s", "bandwidth"])
}
