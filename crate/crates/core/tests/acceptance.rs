// Acceptance suite: one PASS/FAIL line per criterion. Runs without the test
// harness so the lines show up in plain `cargo test` output.

mod common;

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use common::{chain_of, diff, random_pipeline, random_program, reference, run};
use oocstencil::apps::MINIFLOW_INIT_ITERS;
use oocstencil::metrics::{aggregate, loop_bytes, LoopMetric};
use oocstencil::tiler::{default_tiled_dim, dependency_oracle};
use oocstencil::timeline::{simulate_timeline, Command, CommandKind, Program, Timeline};
use oocstencil::{
    compute_footprints, compute_tile_plan, run_workload, AppName, AppSpec, Arg, Block, DeviceConfig, Expr, Extent,
    FlushReason, Kernel, LoopChain, Mode, ParLoop, RunOptions, Stencil, TileSpec, Workload,
};

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

fn ensure(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn opts(tiles: TileSpec) -> RunOptions {
    RunOptions { tiles, ..Default::default() }
}

fn bit_exact() -> Outcome {
    let mut runs = 0;
    for seed in 0..200u64 {
        let p = random_program(seed);
        let tiles = TileSpec::Fixed(1 + (seed % 4) as usize);
        let want = reference(&p);
        let paged = common::problem_bytes(&p.file) / 2 + 4096;
        for mode in [Mode::Explicit, Mode::Cache, Mode::Unified] {
            let mut cfg = DeviceConfig::default().with_mode(mode);
            if mode != Mode::Explicit {
                cfg = DeviceConfig { cache_page_bytes: 256, ..cfg }.with_capacity(paged);
            }
            let rt = run(&p, cfg, opts(tiles)).map_err(|e| format!("seed {seed} {mode}: {e}"))?;
            let bad = diff(&rt, &want);
            if !bad.is_empty() {
                return Err(format!("seed {seed} {mode}: {} differ", bad.join(",")));
            }
            runs += 1;
        }
    }
    Ok(format!("{runs} runs bitwise equal to the reference"))
}

fn oracle_soundness() -> Outcome {
    let mut plans = 0;
    for seed in 0..200u64 {
        let (block, chain) = chain_of(&random_program(seed).file);
        let td = chain.loops[0].range.ndim - 1;
        for t in 1..=6 {
            let plan = compute_tile_plan(&chain, t, td).map_err(|e| e.to_string())?;
            dependency_oracle(&chain, &plan, &block).map_err(|v| format!("seed {seed} T={t}: {v:?}"))?;
            plans += 1;
        }
    }
    for app in [AppName::Heat2d, AppName::Miniflow2d, AppName::Rk3chain] {
        let mut spec = AppSpec::new(app, vec![24, 40], 3);
        spec.span = Some(3);
        let w = Workload::App(spec);
        let block = w.build().map_err(|e| e.to_string())?;
        let chain = w.first_chain(&block).map_err(|e| e.to_string())?;
        for t in 1..=8 {
            let plan = compute_tile_plan(&chain, t, default_tiled_dim(&chain)).map_err(|e| e.to_string())?;
            dependency_oracle(&chain, &plan, &block).map_err(|v| format!("{app} T={t}: {v:?}"))?;
            plans += 1;
        }
    }
    let (mut mutations, mut caught) = (0, 0);
    for seed in 0..200u64 {
        let file = random_pipeline(seed);
        let (block, chain) = chain_of(&file);
        let td = chain.loops[0].range.ndim - 1;
        let hi = file.datasets[0].core[td][1];
        let plan = compute_tile_plan(&chain, 2 + (seed % 3) as usize, td).map_err(|e| e.to_string())?;
        // every loop but the last feeds the next one with a positive extent
        for j in 0..chain.loops.len() - 1 {
            for t in 0..plan.tile_count - 1 {
                let start = if t == 0 { 0 } else { plan.bounds[j][t - 1] };
                if plan.bounds[j][t] <= start || plan.bounds[j][t] >= hi {
                    continue;
                }
                let mut bad = plan.clone();
                bad.bounds[j][t] -= 1;
                mutations += 1;
                caught += dependency_oracle(&chain, &bad, &block).is_err() as usize;
            }
        }
    }
    ensure(
        mutations > 0 && caught == mutations,
        format!("{plans} plans pass; {caught}/{mutations} producer-bound mutations reported"),
    )
}

fn explicit_run(spec: &AppSpec, cyclic: bool) -> Result<oocstencil::RunOutcome, String> {
    let o = RunOptions { tiles: TileSpec::Fixed(4), cyclic, ..Default::default() };
    run_workload(&Workload::App(spec.clone()), &DeviceConfig::default(), &o, false).map_err(|e| e.to_string())
}

struct Classes {
    read_only: usize,
    write_first: usize,
    /// Left-footprint bytes of write-first datasets in chains run cyclically.
    cyclic_left_fp: u64,
}

/// Checks (a) and (b) chain by chain; chain `c` holds iterations
/// `c*span .. (c+1)*span` (no app here ends a chain early at these settings).
fn classify(spec: &AppSpec, o: &oocstencil::RunOutcome, cyclic_from: usize) -> Result<Classes, String> {
    let span = spec.span();
    if o.flushes.len() != spec.iters.div_ceil(span) {
        return Err(format!("{}: unexpected chain count {}", spec.app, o.flushes.len()));
    }
    let block = spec.build().map_err(|e| e.to_string())?;
    let mut moved: HashMap<(u64, String), (u64, u64)> = HashMap::new();
    for r in &o.audit {
        let e = moved.entry((r.chain, r.dataset.clone())).or_default();
        e.0 += r.downloaded;
        e.1 += r.uploaded;
    }
    let mut c = Classes { read_only: 0, write_first: 0, cyclic_left_fp: 0 };
    for ch in 0..o.flushes.len() {
        let mut loops = Vec::new();
        for it in ch * span..((ch + 1) * span).min(spec.iters) {
            loops.extend(spec.iteration(&block, it).map_err(|e| e.to_string())?);
        }
        let chain = LoopChain::new(ch as u64, loops, FlushReason::ExplicitFlush);
        let plan = compute_tile_plan(&chain, 4, default_tiled_dim(&chain)).map_err(|e| e.to_string())?;
        let fp = compute_footprints(&plan, &chain, &block);
        for f in &fp.datasets {
            let name = &block.dataset(f.dataset).name;
            let (d, u) = moved.get(&(ch as u64, name.clone())).copied().unwrap_or_default();
            if f.read_only && d != 0 {
                return Err(format!("{} chain {ch}: read-only {name} downloaded {d} B", spec.app));
            }
            if f.write_first && u != 0 {
                return Err(format!("{} chain {ch}: write-first {name} uploaded {u} B", spec.app));
            }
            c.read_only += f.read_only as usize;
            c.write_first += f.write_first as usize;
            if f.write_first && ch * span >= cyclic_from {
                let bytes: u64 =
                    (0..plan.tile_count).filter(|&t| f.dirty_through(t)).map(|t| f.bytes(&f.left_fp[t])).sum();
                if bytes != d {
                    return Err(format!("{} chain {ch}: {name} left footprints {bytes} B, downloaded {d} B", spec.app));
                }
                c.cyclic_left_fp += bytes;
            }
        }
    }
    Ok(c)
}

fn byte_accounting() -> Outcome {
    let spec = AppSpec::new(AppName::Miniflow2d, vec![64, 64], 20);
    let plain = explicit_run(&spec, false)?;
    let cyc = explicit_run(&spec, true)?;
    let mf = classify(&spec, &plain, MINIFLOW_INIT_ITERS)?;
    classify(&spec, &cyc, usize::MAX)?;
    let temps = oocstencil::apps::MINIFLOW_TEMPORARIES.len();
    let down = |o: &oocstencil::RunOutcome| o.audit.iter().map(|r| r.downloaded).sum::<u64>();
    let saved = down(&plain) - down(&cyc);
    // miniflow updates all its persistent fields every iteration, so its
    // chains have no read-only datasets; rk3chain's coefficients are.
    let mut rk = AppSpec::new(AppName::Rk3chain, vec![64, 64], 6);
    rk.span = Some(3);
    let rkc = classify(&rk, &explicit_run(&rk, false)?, usize::MAX)?;
    ensure(
        mf.write_first == 20 * temps && rkc.read_only > 0 && saved == mf.cyclic_left_fp,
        format!(
            "no uploads for {} write-first and no downloads for {} read-only dataset-chains; cyclic saves {saved} B, \
             temporaries' left footprints {} B",
            mf.write_first + rkc.write_first,
            mf.read_only + rkc.read_only,
            mf.cyclic_left_fp
        ),
    )
}

fn timeline_overlap() -> Outcome {
    let cfg = DeviceConfig::default();
    let mut p = Program::new(3);
    let mut ids = Vec::new();
    for t in 0..3 {
        let u = p.push(Command::new(CommandKind::H2D, 1, 16_000_000).tile(t));
        p.wait_for(0, &[u]);
        let k = p.push(Command::new(CommandKind::Kernel, 0, 1_020_000_000).tile(t));
        p.wait_for(2, &[k]);
        let d = p.push(Command::new(CommandKind::D2H, 2, 16_000_000).tile(t));
        ids.push((u, k, d));
    }
    let tl = simulate_timeline(&p, &cfg).map_err(|e| e.to_string())?;
    let dur = |i: usize| p.commands[i].duration(&cfg);
    let expect = dur(ids[0].0) + ids.iter().map(|x| dur(x.1)).sum::<f64>() + dur(ids[2].2);
    let err = (tl.makespan() - expect).abs();
    ensure(err <= 1e-9, format!("makespan {:.9e} s, analytic {expect:.9e} s, |diff| {err:.1e}", tl.makespan()))
}

fn metric_definition() -> Outcome {
    let mut b = Block::new(1).map_err(|e| e.to_string())?;
    let core = Extent::sized(&[100]).unwrap();
    let u = b.declare_dataset("u", core, &[0], 8, oocstencil::Fill::Value(1.0)).map_err(|e| e.to_string())?;
    let v = b.declare_dataset("v", core, &[0], 8, oocstencil::Fill::Value(1.0)).map_err(|e| e.to_string())?;
    let copy = ParLoop::new(
        "copy",
        core,
        vec![Arg::read(u, Stencil::point(1)), Arg::write(v, 1)],
        Kernel::write(1, Expr::read(0, &[0])),
    );
    let inc = ParLoop::new("inc", core, vec![Arg::read_write(u, 1)], Kernel::write(0, Expr::read(0, &[0])));
    let m = |lp: &ParLoop, t: f64| LoopMetric {
        chain: 0,
        loop_index: 0,
        loop_id: 0,
        name: lp.name.clone(),
        points: 100,
        bytes: loop_bytes(lp, &b),
        time_s: t,
    };
    // 1600 B in 1 s and 1600 B (read-write counted twice) in 3 s
    let agg = aggregate(&[m(&copy, 1.0), m(&inc, 3.0)], Some(&Timeline::default())).map_err(|e| e.to_string())?;
    ensure(agg.average_bandwidth == 800.0, format!("average bandwidth {} B/s", agg.average_bandwidth))
}

fn report(w: &Workload, cfg: &DeviceConfig, o: &RunOptions) -> Result<oocstencil::metrics::RunReport, String> {
    run_workload(w, cfg, o, false).map(|r| r.report).map_err(|e| format!("{}: {e}", w.label()))
}

/// Size where the problem is `ratio` times the capacity. The 32xM heat grid
/// has two (34)x(M+2) arrays; M = 2048 is exactly 1x.
fn heat_sweep() -> Outcome {
    let cap = 34 * 2050 * 16;
    let cfg = DeviceConfig::default().with_mode(Mode::Cache).with_capacity(cap);
    let mut eff = Vec::new();
    for (ratio, m) in [(0.5, 1024), (1.0, 2048), (2.0, 4096), (3.0, 6144)] {
        let mut spec = AppSpec::new(AppName::Heat2d, vec![32, m], 100);
        spec.span = Some(100);
        let w = Workload::App(spec);
        let untiled = report(&w, &cfg, &opts(TileSpec::Fixed(1)))?;
        let tiled = report(&w, &cfg, &opts(TileSpec::Auto))?;
        eff.push((ratio, untiled.efficiency, tiled.efficiency, tiled.tiles));
    }
    let (u3, t_half, t3) = (eff[3].1, eff[0].2, eff[3].2);
    let table: Vec<String> =
        eff.iter().map(|(r, u, t, n)| format!("{r}x untiled {u:.3} tiled {t:.3} (T={n})")).collect();
    ensure(u3 < 0.6 && t3 >= 0.85 * t_half, format!("{}; tiled 3x/0.5x = {:.3}", table.join(", "), t3 / t_half))
}

fn ratio_config(w: &Workload, base: DeviceConfig, ratio: f64) -> Result<DeviceConfig, String> {
    let cap = oocstencil::driver::capacity_for_ratio(w, ratio).map_err(|e| e.to_string())?;
    Ok(base.with_capacity(cap))
}

fn explicit_efficiency() -> Outcome {
    let mut spec = AppSpec::new(AppName::Rk3chain, vec![64, 1024], 30);
    spec.span = Some(3);
    let rk = Workload::App(spec);
    let cfg = ratio_config(&rk, DeviceConfig::nvlink(), 3.2)?;
    let fast = RunOptions { tiles: TileSpec::Auto, cyclic: true, prefetch: true, ..Default::default() };
    let rk_eff = report(&rk, &cfg, &fast)?.efficiency;
    let rk_plain = report(&rk, &cfg, &opts(TileSpec::Auto))?.efficiency;

    let mf = Workload::App(AppSpec::new(AppName::Miniflow2d, vec![64, 512], 6));
    let o = opts(TileSpec::Auto);
    let nv = report(&mf, &ratio_config(&mf, DeviceConfig::nvlink(), 2.0)?, &o)?.efficiency;
    let pcie = report(&mf, &ratio_config(&mf, DeviceConfig::default(), 2.0)?, &o)?.efficiency;
    ensure(
        rk_eff >= 0.95 && pcie < nv,
        format!(
            "rk3chain NVLink {rk_eff:.4} with prefetch+cyclic ({rk_plain:.4} without); miniflow2d PCIe {pcie:.4} < NVLink {nv:.4}"
        ),
    )
}

fn unified_memory() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (app, size, iters) in [(AppName::Miniflow2d, vec![64, 512], 6), (AppName::Rk3chain, vec![64, 1024], 6)] {
        let mut spec = AppSpec::new(app, size, iters);
        if app == AppName::Rk3chain {
            spec.span = Some(3);
        }
        let w = Workload::App(spec);
        let cfg = ratio_config(&w, DeviceConfig::default(), 2.0)?;
        let ex = report(&w, &cfg, &opts(TileSpec::Auto))?.average_bandwidth;
        let uni = cfg.clone().with_mode(Mode::Unified);
        let fault = report(&w, &uni, &opts(TileSpec::Auto))?.average_bandwidth;
        let pre = report(&w, &uni, &RunOptions { prefetch: true, ..opts(TileSpec::Auto) })?.average_bandwidth;
        ok &= fault < ex / 3.0 && pre > fault && pre <= ex;
        lines.push(format!("{app}: explicit {ex:.3e} fault-only {fault:.3e} prefetch {pre:.3e} B/s"));
    }
    ensure(ok, lines.join("; "))
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 8] = [
        ("bit-exact equivalence with the reference executor", bit_exact),
        ("dependency oracle soundness", oracle_soundness),
        ("byte accounting (read-only, write-first, cyclic)", byte_accounting),
        ("timeline overlap of a 3-tile pipeline", timeline_overlap),
        ("cache-mode oversubscription sweep", heat_sweep),
        ("explicit-mode efficiency and link bandwidth", explicit_efficiency),
        ("unified memory with and without prefetch", unified_memory),
        ("average bandwidth definition", metric_definition),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t0.elapsed().as_secs_f64();
        match out {
            Ok(msg) => println!("criterion {} PASS {name}: {msg} [{secs:.1}s]", i + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {msg} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
