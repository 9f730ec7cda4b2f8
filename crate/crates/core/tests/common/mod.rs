// Random loop-chain programs for the property and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use oocstencil::chainfile::{ArgSpec, DatasetSpec, FillSpec, KernelSpec, LoopSpec, ReductionSpec, StencilSpec};
use oocstencil::{
    AccessMode, Block, ChainFile, DeviceConfig, FlushReason, LoopChain, Mode, ParLoop, Result, RunOptions, Runtime,
};

/// A chain file enqueued `chains` times, each time flushed as its own chain.
#[derive(Clone, Debug)]
pub struct Program {
    pub file: ChainFile,
    pub chains: usize,
}

const COORDS: [&str; 3] = ["i", "j", "k"];

fn coef(rng: &mut ChaCha8Rng) -> f64 {
    // multiples of 1/16 keep the values tame and exact to print
    rng.gen_range(-8..=8) as f64 / 16.0
}

fn read_expr(arg: usize, off: &[i64]) -> String {
    let o: Vec<String> = off.iter().map(i64::to_string).collect();
    format!("(r {arg} {})", o.join(" "))
}

fn sum(terms: Vec<String>) -> String {
    if terms.len() == 1 {
        terms.into_iter().next().unwrap()
    } else {
        format!("(+ {})", terms.join(" "))
    }
}

fn random_offsets(rng: &mut ChaCha8Rng, ndim: usize) -> Vec<Vec<i64>> {
    let n = rng.gen_range(1..=4);
    let mut set = BTreeSet::new();
    while set.len() < n {
        set.insert((0..ndim).map(|_| rng.gen_range(-2..=2)).collect::<Vec<i64>>());
    }
    set.into_iter().collect()
}

pub fn random_program(seed: u64) -> Program {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ndim = match rng.gen_range(0..10) {
        0 | 1 => 1,
        9 => 3,
        _ => 2,
    };
    let dims: Vec<i64> = (0..ndim)
        .map(|_| match ndim {
            1 => rng.gen_range(8..=64),
            2 => rng.gen_range(6..=40),
            _ => rng.gen_range(4..=10),
        })
        .collect();
    let nds = rng.gen_range(1..=4);
    let datasets: Vec<DatasetSpec> = (0..nds)
        .map(|d| {
            let mut terms = vec![format!("{:?}", coef(&mut rng) + d as f64)];
            for c in COORDS.iter().take(ndim) {
                terms.push(format!("(* {:?} {c})", coef(&mut rng)));
            }
            DatasetSpec {
                name: format!("d{d}"),
                core: dims.iter().map(|&n| [0, n]).collect(),
                halo: vec![2; ndim],
                fill: FillSpec::Expr(sum(terms)),
                elem_bytes: 8,
            }
        })
        .collect();

    let mut stencils = Vec::new();
    let mut loops = Vec::new();
    let nloops = rng.gen_range(1..=8);
    for l in 0..nloops {
        let w = rng.gen_range(0..nds);
        let rw = rng.gen_bool(0.3);
        let mut args = vec![ArgSpec {
            dataset: format!("d{w}"),
            stencil: "point".into(),
            mode: if rw { AccessMode::ReadWrite } else { AccessMode::Write },
        }];
        let mut terms = vec![format!("{:?}", coef(&mut rng))];
        if rw {
            terms.push(format!("(* {:?} {})", coef(&mut rng), read_expr(0, &vec![0; ndim])));
        }
        let mut others: Vec<usize> = (0..nds).filter(|&d| d != w).collect();
        others.shuffle(&mut rng);
        for d in others.into_iter().take(rng.gen_range(0..=2)) {
            let offs = random_offsets(&mut rng, ndim);
            let name = format!("s{}", stencils.len());
            let a = args.len();
            for o in &offs {
                terms.push(format!("(* {:?} {})", coef(&mut rng), read_expr(a, o)));
            }
            stencils.push(StencilSpec { name: name.clone(), offsets: offs });
            args.push(ArgSpec { dataset: format!("d{d}"), stencil: name, mode: AccessMode::Read });
        }
        let range = dims
            .iter()
            .map(|&n| {
                let lo = rng.gen_range(0..=1.min(n / 4));
                let hi = n - rng.gen_range(0..=1.min(n / 4));
                [lo, hi]
            })
            .collect();
        loops.push(LoopSpec { name: format!("l{l}"), range, args, kernel: KernelSpec::Single(sum(terms)) });
    }
    if rng.gen_bool(0.3) {
        let d = rng.gen_range(0..nds);
        let op = *[oocstencil::ReduceOp::Sum, oocstencil::ReduceOp::Min, oocstencil::ReduceOp::Max]
            .choose(&mut rng)
            .unwrap();
        loops.push(LoopSpec {
            name: "reduce".into(),
            range: dims.iter().map(|&n| [0, n]).collect(),
            args: vec![ArgSpec { dataset: format!("d{d}"), stencil: "point".into(), mode: AccessMode::Read }],
            kernel: KernelSpec::Full {
                writes: vec![],
                reduction: Some(ReductionSpec { op, name: "red".into(), expr: read_expr(0, &vec![0; ndim]) }),
            },
        });
    }
    let chains = rng.gen_range(1..=3);
    Program { file: ChainFile { datasets, stencils, loops, iterations: 1 }, chains }
}

/// A chain of stencil sweeps where every loop reads the previous loop's
/// output with a stencil reaching forward along the tiled dimension, so
/// every loop but the last is a producer with positive extent.
pub fn random_pipeline(seed: u64) -> ChainFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ndim = rng.gen_range(1..=2);
    let td = ndim - 1;
    let dims: Vec<i64> =
        (0..ndim).map(|d| if d == td { rng.gen_range(24..=60) } else { rng.gen_range(4..=12) }).collect();
    let nds = rng.gen_range(2..=4);
    let datasets = (0..nds)
        .map(|d| DatasetSpec {
            name: format!("d{d}"),
            core: dims.iter().map(|&n| [0, n]).collect(),
            halo: vec![2; ndim],
            fill: FillSpec::Value(d as f64),
            elem_bytes: 8,
        })
        .collect();
    let mut stencils = Vec::new();
    let mut loops = Vec::new();
    for l in 0..rng.gen_range(2..=8) {
        let mut offs = BTreeSet::new();
        let mut fwd = vec![0; ndim];
        fwd[td] = rng.gen_range(1..=2);
        offs.insert(fwd);
        let mut back = vec![0; ndim];
        back[td] = -rng.gen_range(0..=2);
        offs.insert(back);
        if ndim == 2 && rng.gen_bool(0.5) {
            offs.insert(vec![rng.gen_range(-1..=1), 0]);
        }
        let offs: Vec<Vec<i64>> = offs.into_iter().collect();
        let terms = offs.iter().map(|o| format!("(* 0.25 {})", read_expr(1, o))).collect();
        stencils.push(StencilSpec { name: format!("s{l}"), offsets: offs });
        loops.push(LoopSpec {
            name: format!("l{l}"),
            range: dims.iter().map(|&n| [0, n]).collect(),
            args: vec![
                ArgSpec { dataset: format!("d{}", (l + 1) % nds), stencil: "point".into(), mode: AccessMode::Write },
                ArgSpec { dataset: format!("d{}", l % nds), stencil: format!("s{l}"), mode: AccessMode::Read },
            ],
            kernel: KernelSpec::Single(sum(terms)),
        });
    }
    ChainFile { datasets, stencils, loops, iterations: 1 }
}

pub fn chain_of(file: &ChainFile) -> (Block, LoopChain) {
    let (block, mut loops) = file.build().expect("generated program builds");
    for (i, lp) in loops.iter_mut().enumerate() {
        lp.id = i as u64;
    }
    (block, LoopChain::new(0, loops, FlushReason::ExplicitFlush))
}

pub fn problem_bytes(file: &ChainFile) -> u64 {
    let (b, _) = file.build().unwrap();
    b.datasets().iter().map(|d| d.bytes()).sum()
}

/// Runs the program as `chains` chains, one per copy of the loop list; the
/// last one is flushed by `finish`, as an app would.
pub fn run(p: &Program, cfg: DeviceConfig, opts: RunOptions) -> Result<Runtime> {
    let (block, loops) = p.file.build()?;
    let mut rt = Runtime::new(block, cfg, opts)?;
    for c in 0..p.chains {
        for lp in &loops {
            rt.enqueue(ParLoop::clone(lp))?;
        }
        if c + 1 < p.chains {
            rt.flush(FlushReason::ExplicitFlush)?;
        }
    }
    rt.finish()?;
    Ok(rt)
}

pub fn reference(p: &Program) -> Runtime {
    run(p, DeviceConfig::default().with_mode(Mode::Reference), RunOptions::default()).unwrap()
}

/// Names of datasets (or "reductions") whose bits differ.
pub fn diff(a: &Runtime, b: &Runtime) -> Vec<String> {
    let mut bad = oocstencil::driver::compare_blocks(a.block(), b.block());
    let same = a.reductions().len() == b.reductions().len()
        && a.reductions().iter().zip(b.reductions()).all(|(x, y)| x.0 == y.0 && x.1.to_bits() == y.1.to_bits());
    if !same {
        bad.push("reductions".into());
    }
    bad
}
