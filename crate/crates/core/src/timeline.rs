//! Command queues and their deterministic timing.
//!
//! A [`Program`] is the host's issue order of commands onto numbered queues.
//! Commands on one queue run in order, one at a time; a device-side `Wait`
//! holds its queue until the commands it names have finished; a host wait
//! delays the *issue* of everything pushed after it.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::io::Write;

use serde::Serialize;

use crate::device::DeviceConfig;
use crate::error::{Error, Result};
use crate::mesh::DatasetId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum CommandKind {
    H2D,
    D2H,
    D2D,
    Kernel,
    Wait,
    Prefetch,
}

impl fmt::Display for CommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CommandKind::H2D => "H2D",
            CommandKind::D2H => "D2H",
            CommandKind::D2D => "D2D",
            CommandKind::Kernel => "KERNEL",
            CommandKind::Wait => "WAIT",
            CommandKind::Prefetch => "PREFETCH",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Command {
    pub kind: CommandKind,
    pub queue: usize,
    /// Transfer size, or metric bytes for kernels.
    pub bytes: u64,
    /// Added to the modeled duration (fault stalls).
    pub extra_time: f64,
    /// Replaces the bandwidth model for kernels (measured or cache-modeled).
    pub model_time: Option<f64>,
    /// Device-side: commands that must finish before this one starts.
    pub deps: Vec<usize>,
    /// Host-side: commands the host waited for before issuing this one.
    pub host_deps: Vec<usize>,
    pub chain: u64,
    pub tile: Option<usize>,
    pub loop_index: Option<usize>,
    pub dataset: Option<DatasetId>,
    /// Prefetch direction; migrations back to the host use the D2H link.
    pub to_host: bool,
}

impl Command {
    pub fn new(kind: CommandKind, queue: usize, bytes: u64) -> Self {
        Command {
            kind,
            queue,
            bytes,
            extra_time: 0.0,
            model_time: None,
            deps: Vec::new(),
            host_deps: Vec::new(),
            chain: 0,
            tile: None,
            loop_index: None,
            dataset: None,
            to_host: false,
        }
    }

    pub fn to_host(mut self) -> Self {
        self.to_host = true;
        self
    }

    /// Host link the command occupies: 0 towards the device, 1 back.
    pub fn link(&self) -> Option<usize> {
        match self.kind {
            CommandKind::H2D => Some(0),
            CommandKind::D2H => Some(1),
            CommandKind::Prefetch => Some(self.to_host as usize),
            _ => None,
        }
    }

    pub fn tile(mut self, t: usize) -> Self {
        self.tile = Some(t);
        self
    }

    pub fn loop_index(mut self, j: usize) -> Self {
        self.loop_index = Some(j);
        self
    }

    pub fn dataset(mut self, d: DatasetId) -> Self {
        self.dataset = Some(d);
        self
    }

    pub fn extra(mut self, s: f64) -> Self {
        self.extra_time = s;
        self
    }

    pub fn timed(mut self, s: f64) -> Self {
        self.model_time = Some(s);
        self
    }

    pub fn duration(&self, cfg: &DeviceConfig) -> f64 {
        let b = self.bytes as f64;
        let l = cfg.transfer_latency;
        match self.kind {
            CommandKind::H2D => l + b / cfg.h2d_bandwidth,
            CommandKind::D2H => l + b / cfg.d2h_bandwidth,
            CommandKind::D2D => l + b / cfg.d2d_bandwidth,
            CommandKind::Kernel => self.model_time.unwrap_or(b / cfg.device_kernel_bandwidth) + self.extra_time,
            CommandKind::Wait => 0.0,
            CommandKind::Prefetch => l + b / (cfg.prefetch_bandwidth * cfg.prefetch_multiplier) + self.extra_time,
        }
    }
}

/// Host-side issue sequence of commands.
#[derive(Clone, Debug, Default)]
pub struct Program {
    pub commands: Vec<Command>,
    queue_tail: Vec<Option<usize>>,
    barrier: Vec<usize>,
    chain: u64,
}

impl Program {
    pub fn new(queues: usize) -> Self {
        Program { queue_tail: vec![None; queues], ..Default::default() }
    }

    pub fn queues(&self) -> usize {
        self.queue_tail.len()
    }

    /// Chain id stamped on subsequently pushed commands.
    pub fn set_chain(&mut self, chain: u64) {
        self.chain = chain;
    }

    pub fn push(&mut self, mut cmd: Command) -> usize {
        assert!(cmd.queue < self.queues(), "queue {} out of range", cmd.queue);
        let id = self.commands.len();
        cmd.chain = self.chain;
        cmd.host_deps.extend(self.barrier.iter().copied());
        self.queue_tail[cmd.queue] = Some(id);
        self.commands.push(cmd);
        id
    }

    pub fn last_on(&self, queue: usize) -> Option<usize> {
        self.queue_tail[queue]
    }

    /// Device-side wait on `queue` for everything issued so far on `on`.
    pub fn wait(&mut self, queue: usize, on: &[usize]) -> usize {
        let mut c = Command::new(CommandKind::Wait, queue, 0);
        c.deps = on.iter().filter_map(|&q| self.last_on(q)).collect();
        self.push(c)
    }

    /// Device-side wait on `queue` for specific commands.
    pub fn wait_for(&mut self, queue: usize, ids: &[usize]) -> usize {
        let mut c = Command::new(CommandKind::Wait, queue, 0);
        c.deps = ids.to_vec();
        self.push(c)
    }

    /// Host blocks until everything issued so far on `on` has finished.
    pub fn host_wait(&mut self, on: &[usize]) {
        self.barrier = on.iter().filter_map(|&q| self.last_on(q)).collect();
    }

    pub fn host_wait_all(&mut self) {
        let all: Vec<usize> = (0..self.queues()).collect();
        self.host_wait(&all);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimedCommand {
    pub id: usize,
    pub kind: CommandKind,
    pub queue: usize,
    pub bytes: u64,
    pub issue: f64,
    pub start: f64,
    pub end: f64,
    pub chain: u64,
    pub tile: Option<usize>,
    pub loop_index: Option<usize>,
    pub dataset: Option<DatasetId>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Timeline {
    pub commands: Vec<TimedCommand>,
}

/// Predecessors of each command: its queue predecessor, its device and host
/// dependencies, and the previously issued command (the host issues in order).
fn predecessors(program: &Program) -> Result<Vec<Vec<usize>>> {
    let n = program.commands.len();
    let mut tail: Vec<Option<usize>> = vec![None; program.queues()];
    let mut preds = Vec::with_capacity(n);
    for (i, c) in program.commands.iter().enumerate() {
        let mut p: Vec<usize> = c.deps.iter().chain(&c.host_deps).copied().collect();
        if let Some(&bad) = p.iter().find(|&&d| d >= n || d == i) {
            return Err(Error::InvalidProgram(format!("command {i} depends on invalid command {bad}")));
        }
        if let Some(q) = tail[c.queue] {
            p.push(q);
        }
        if i > 0 {
            p.push(i - 1);
        }
        tail[c.queue] = Some(i);
        p.sort_unstable();
        p.dedup();
        preds.push(p);
    }
    Ok(preds)
}

fn find_cycle(preds: &[Vec<usize>], done: &[bool]) -> Vec<usize> {
    // every unfinished node has an unfinished predecessor; walk until repeat
    let start = done.iter().position(|d| !d).unwrap();
    let mut seen = vec![usize::MAX; preds.len()];
    let mut path = Vec::new();
    let mut cur = start;
    while seen[cur] == usize::MAX {
        seen[cur] = path.len();
        path.push(cur);
        cur = *preds[cur].iter().find(|&&p| !done[p]).unwrap();
    }
    let mut cycle = path[seen[cur]..].to_vec();
    cycle.reverse();
    cycle
}

pub fn simulate_timeline(program: &Program, cfg: &DeviceConfig) -> Result<Timeline> {
    let n = program.commands.len();
    let preds = predecessors(program)?;
    let mut succs = vec![Vec::new(); n];
    let mut indeg = vec![0usize; n];
    for (i, p) in preds.iter().enumerate() {
        indeg[i] = p.len();
        for &q in p {
            succs[q].push(i);
        }
    }
    let mut queue_prev: Vec<Option<usize>> = vec![None; n];
    let mut tail: Vec<Option<usize>> = vec![None; program.queues()];
    for (i, c) in program.commands.iter().enumerate() {
        queue_prev[i] = tail[c.queue];
        tail[c.queue] = Some(i);
    }

    let mut issue = vec![0.0f64; n];
    let mut start = vec![0.0f64; n];
    let mut end = vec![0.0f64; n];
    let mut done = vec![false; n];
    let mut ready: BinaryHeap<Reverse<usize>> = (0..n).filter(|&i| indeg[i] == 0).map(Reverse).collect();
    let mut processed = 0;
    let mut link_free = [0.0f64; 2];
    while let Some(Reverse(i)) = ready.pop() {
        let c = &program.commands[i];
        let mut is = if i > 0 { issue[i - 1] } else { 0.0 };
        for &h in &c.host_deps {
            is = is.max(end[h]);
        }
        let mut st = is;
        if let Some(q) = queue_prev[i] {
            st = st.max(end[q]);
        }
        for &d in &c.deps {
            st = st.max(end[d]);
        }
        // one copy engine per direction, granted in issue order
        let link = c.link();
        if let Some(l) = link {
            st = st.max(link_free[l]);
        }
        issue[i] = is;
        start[i] = st;
        end[i] = st + c.duration(cfg);
        if let Some(l) = link {
            link_free[l] = end[i];
        }
        done[i] = true;
        processed += 1;
        for &s in &succs[i] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                ready.push(Reverse(s));
            }
        }
    }
    if processed < n {
        return Err(Error::Deadlock(find_cycle(&preds, &done)));
    }
    let commands = program
        .commands
        .iter()
        .enumerate()
        .map(|(i, c)| TimedCommand {
            id: i,
            kind: c.kind,
            queue: c.queue,
            bytes: c.bytes,
            issue: issue[i],
            start: start[i],
            end: end[i],
            chain: c.chain,
            tile: c.tile,
            loop_index: c.loop_index,
            dataset: c.dataset,
        })
        .collect();
    Ok(Timeline { commands })
}

impl Timeline {
    pub fn makespan(&self) -> f64 {
        self.commands.iter().map(|c| c.end).fold(0.0, f64::max)
    }

    pub fn bytes(&self, kind: CommandKind) -> u64 {
        self.commands.iter().filter(|c| c.kind == kind).map(|c| c.bytes).sum()
    }

    /// Checks queue legality against the program: start after issue, no
    /// overlap within a queue, every wait and host dependency respected, and
    /// durations as modeled.
    pub fn audit(&self, program: &Program, cfg: &DeviceConfig) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidProgram(format!("timeline audit: {msg}")));
        if self.commands.len() != program.commands.len() {
            return fail("command count mismatch".into());
        }
        let mut tail: Vec<Option<usize>> = vec![None; program.queues()];
        for (i, (t, c)) in self.commands.iter().zip(&program.commands).enumerate() {
            if t.start < t.issue {
                return fail(format!("command {i} starts before it is issued"));
            }
            if let Some(p) = tail[c.queue] {
                if t.start < self.commands[p].end {
                    return fail(format!("command {i} overlaps command {p} on queue {}", c.queue));
                }
            }
            tail[c.queue] = Some(i);
            if let Some(&d) = c.deps.iter().find(|&&d| t.start < self.commands[d].end) {
                return fail(format!("command {i} starts before awaited command {d} ends"));
            }
            if let Some(&d) = c.host_deps.iter().find(|&&d| t.issue < self.commands[d].end) {
                return fail(format!("command {i} issued before host-awaited command {d} ends"));
            }
            if i > 0 && t.issue < self.commands[i - 1].issue {
                return fail(format!("command {i} issued out of order"));
            }
            let dur = c.duration(cfg);
            if ((t.end - t.start) - dur).abs() > 1e-12 * dur.max(1.0) {
                return fail(format!("command {i} has duration {} instead of {dur}", t.end - t.start));
            }
        }
        Ok(())
    }

    /// CSV with columns `command_id, kind, queue, bytes, issue, start, end`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["command_id", "kind", "queue", "bytes", "issue", "start", "end"])?;
        for c in &self.commands {
            out.write_record([
                c.id.to_string(),
                c.kind.to_string(),
                c.queue.to_string(),
                c.bytes.to_string(),
                format!("{:e}", c.issue),
                format!("{:e}", c.start),
                format!("{:e}", c.end),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}
