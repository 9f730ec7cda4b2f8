use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use log::info;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use oocstencil::apps::{parse_size, AppName, AppSpec, Workload};
use oocstencil::device::write_audit;
use oocstencil::driver::{capacity_for_ratio, ratio_sweep, run_workload, scaling_sweep};
use oocstencil::metrics::{write_loop_metrics, write_reports};
use oocstencil::tiler::{
    choose_tile_count, compute_footprints, compute_tile_plan, default_tiled_dim, plan_json, plan_table,
};
use oocstencil::{ChainFile, DeviceConfig, Error, Mode, RunOptions, TileSpec};

/// Runs a bundled stencil app (or a chain file) through the simulated device.
///
/// Every flag can also come from a JSON file given with `--config`, using the
/// flag names with dashes replaced by underscores; flags on the command line win.
#[derive(Parser, Debug, Default, Serialize, Deserialize)]
#[command(name = "oocstencil", version)]
#[serde(default, deny_unknown_fields)]
struct Args {
    /// heat2d, miniflow2d or rk3chain
    #[arg(long)]
    app: Option<String>,
    /// Grid size in elements, e.g. 64x64
    #[arg(long)]
    size: Option<String>,
    #[arg(long)]
    iters: Option<usize>,
    /// reference, explicit, cache or unified
    #[arg(long)]
    mode: Option<String>,
    /// Tile count, or `auto` to pick the smallest that fits the device
    #[arg(long)]
    tiles: Option<String>,
    #[arg(long)]
    tiled_dim: Option<usize>,
    /// Device memory in bytes
    #[arg(long)]
    capacity: Option<u64>,
    /// Sets the capacity to problem bytes / R
    #[arg(long)]
    capacity_ratio: Option<f64>,
    /// Use the NVLink bandwidth profile for host transfers
    #[arg(long)]
    nvlink: bool,
    #[arg(long)]
    h2d: Option<f64>,
    #[arg(long)]
    d2h: Option<f64>,
    #[arg(long)]
    d2d: Option<f64>,
    #[arg(long)]
    devbw: Option<f64>,
    #[arg(long)]
    latency: Option<f64>,
    #[arg(long)]
    page_bytes: Option<u64>,
    #[arg(long)]
    fault_latency: Option<f64>,
    /// Skip writing back write-first datasets
    #[arg(long)]
    cyclic: bool,
    #[arg(long)]
    prefetch: bool,
    /// Iterations (timesteps) per chain
    #[arg(long)]
    tile_span: Option<usize>,
    /// Run a JSON chain description instead of an app
    #[arg(long)]
    chain_file: Option<PathBuf>,
    /// Directory for report.csv, loops.csv, timeline.csv and audit.csv
    #[arg(long)]
    out: Option<PathBuf>,
    /// Compare the final buffers bitwise against the reference executor
    #[arg(long)]
    verify: bool,
    /// Print the tile plan of the first chain and write plan.json
    #[arg(long)]
    plan: bool,
    /// Comma-separated sizes: run a sweep instead of a single run
    #[arg(long)]
    sweep_sizes: Option<String>,
    /// Comma-separated problem/capacity ratios: sweep the capacity on a fixed problem
    #[arg(long)]
    sweep_ratios: Option<String>,
    /// Comma-separated modes for the sweep
    #[arg(long)]
    sweep_modes: Option<String>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

/// Command-line values override the config file; unset flags and `false`
/// switches do not.
fn merge(cli: Args) -> Result<Args, Error> {
    let Some(path) = cli.config.clone() else { return Ok(cli) };
    let mut base: Value = serde_json::from_str(&fs::read_to_string(&path)?)?;
    let over = serde_json::to_value(&cli)?;
    if let (Some(b), Value::Object(o)) = (base.as_object_mut(), over) {
        for (k, v) in o {
            if !(v.is_null() || v == Value::Bool(false)) {
                b.insert(k, v);
            }
        }
    } else {
        return Err(Error::Config(format!("{}: expected a JSON object", path.display())));
    }
    Ok(serde_json::from_value(base)?)
}

fn device_config(a: &Args, mode: Mode) -> Result<DeviceConfig, Error> {
    let mut c = if a.nvlink { DeviceConfig::nvlink() } else { DeviceConfig::default() };
    c.mode = mode;
    if let Some(v) = a.capacity {
        c.capacity_bytes = v;
    }
    if let Some(v) = a.h2d {
        c.h2d_bandwidth = v;
        c.prefetch_bandwidth = v;
    }
    if let Some(v) = a.d2h {
        c.d2h_bandwidth = v;
    }
    if let Some(v) = a.d2d {
        c.d2d_bandwidth = v;
    }
    if let Some(v) = a.devbw {
        c.device_kernel_bandwidth = v;
    }
    if let Some(v) = a.latency {
        c.transfer_latency = v;
    }
    if let Some(v) = a.page_bytes {
        c.cache_page_bytes = v;
    }
    if let Some(v) = a.fault_latency {
        c.fault_latency = v;
    }
    c.validate()?;
    Ok(c)
}

fn workload(a: &Args) -> Result<Workload, Error> {
    if let Some(path) = &a.chain_file {
        let name = path.file_stem().map_or("chain".into(), |s| s.to_string_lossy().into_owned());
        return Ok(Workload::File { name, file: ChainFile::load(path)? });
    }
    let app: AppName = a.app.as_deref().unwrap_or("heat2d").parse()?;
    let size = parse_size(a.size.as_deref().unwrap_or("64x64"))?;
    let mut spec = AppSpec::new(app, size, a.iters.unwrap_or(10));
    spec.span = a.tile_span;
    Ok(Workload::App(spec))
}

fn options(a: &Args) -> Result<RunOptions, Error> {
    let tiles = match a.tiles.as_deref().unwrap_or("auto") {
        "auto" => TileSpec::Auto,
        t => TileSpec::Fixed(t.parse().map_err(|_| Error::Config(format!("bad tile count `{t}`")))?),
    };
    Ok(RunOptions { tiles, tiled_dim: a.tiled_dim, cyclic: a.cyclic, prefetch: a.prefetch })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Error> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn run(a: Args) -> Result<ExitCode, Error> {
    let w = workload(&a)?;
    let mode: Mode = a.mode.as_deref().unwrap_or("explicit").parse()?;
    let mut cfg = device_config(&a, mode)?;
    if let Some(r) = a.capacity_ratio {
        if r <= 0.0 {
            return Err(Error::Config("capacity ratio must be positive".into()));
        }
        cfg.capacity_bytes = capacity_for_ratio(&w, r)?;
    }
    let opts = options(&a)?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
    }

    if a.sweep_sizes.is_some() || a.sweep_ratios.is_some() {
        let modes: Vec<Mode> = match &a.sweep_modes {
            Some(m) => m.split(',').filter(|s| !s.is_empty()).map(str::parse).collect::<Result<_, _>>()?,
            None => vec![mode],
        };
        let rows = if let Some(ratios) = &a.sweep_ratios {
            let ratios: Vec<f64> = ratios
                .split(',')
                .filter(|s| !s.is_empty())
                .map(|r| r.trim().parse().map_err(|_| Error::Config(format!("bad ratio `{r}`"))))
                .collect::<Result<_, _>>()?;
            ratio_sweep(&w, &ratios, &modes, &cfg, &opts)?
        } else {
            let Workload::App(base) = &w else {
                return Err(Error::Config("size sweeps need --app".into()));
            };
            let sizes: Vec<Vec<i64>> = a
                .sweep_sizes
                .as_deref()
                .unwrap_or_default()
                .split(',')
                .filter(|s| !s.is_empty())
                .map(parse_size)
                .collect::<Result<_, _>>()?;
            scaling_sweep(base, &sizes, &modes, &cfg, &opts)
        };
        match &a.out {
            Some(dir) => write_reports(create(dir, "report.csv")?, &rows)?,
            None => write_reports(std::io::stdout().lock(), &rows)?,
        }
        return Ok(ExitCode::SUCCESS);
    }

    if a.plan {
        let block = w.build()?;
        let chain = w.first_chain(&block)?;
        let dim = opts.tiled_dim.unwrap_or_else(|| default_tiled_dim(&chain));
        let tiles = match opts.tiles {
            TileSpec::Fixed(t) => t,
            TileSpec::Auto => choose_tile_count(&chain, &block, cfg.capacity_bytes, dim)?.tiles,
        };
        let plan = compute_tile_plan(&chain, tiles, dim)?;
        let fp = compute_footprints(&plan, &chain, &block);
        print!("{}", plan_table(&chain, &plan, &fp, &block));
        if let Some(dir) = &a.out {
            fs::write(dir.join("plan.json"), plan_json(&chain, &plan, &fp, &block)?)?;
        }
        return Ok(ExitCode::SUCCESS);
    }

    let o = run_workload(&w, &cfg, &opts, a.verify)?;
    if let Some(dir) = &a.out {
        write_reports(create(dir, "report.csv")?, std::slice::from_ref(&o.report))?;
        write_loop_metrics(create(dir, "loops.csv")?, &o.loops)?;
        o.timeline.write_csv(create(dir, "timeline.csv")?)?;
        write_audit(create(dir, "audit.csv")?, &o.audit)?;
        info!("reports written to {}", dir.display());
    }
    let r = &o.report;
    println!(
        "{} {} mode={} tiles={} chains={} loops={} bytes={} time={:.6e}s avg_bw={:.4e}B/s efficiency={:.4} \
         uploaded={} downloaded={} hit_rate={:.4} faults={}",
        r.app,
        r.size,
        r.mode,
        r.tiles,
        o.flushes.len(),
        r.loops,
        r.total_bytes,
        r.total_time,
        r.average_bandwidth,
        r.efficiency,
        r.uploaded,
        r.downloaded,
        r.hit_rate,
        r.faults
    );
    for (name, v) in &o.reductions {
        println!("reduction {name} = {v:?}");
    }
    match &o.mismatches {
        Some(bad) if !bad.is_empty() => {
            eprintln!("verify: MISMATCH in {}", bad.join(", "));
            Ok(ExitCode::from(1))
        }
        Some(_) => {
            println!("verify: ok");
            Ok(ExitCode::SUCCESS)
        }
        None => Ok(ExitCode::SUCCESS),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    match merge(args).and_then(run) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
