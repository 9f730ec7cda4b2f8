//! Bundled workloads: a Jacobi heat solver, a small hydro-like chain with
//! write-first temporaries, and a three-stage Runge-Kutta update.
//!
//! The kernels are linear combinations chosen for their access patterns; the
//! numbers they produce mean nothing physically.

use std::fmt;
use std::str::FromStr;

use crate::chain::{FlushReason, LoopChain};
use crate::chainfile::ChainFile;
use crate::error::{Error, Result};
use crate::expr::{Expr, Kernel, ReduceOp};
use crate::extent::Extent;
use crate::mesh::{Arg, Block, DatasetId, Fill, ParLoop, Stencil};
use crate::runtime::Runtime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AppName {
    Heat2d,
    Miniflow2d,
    Rk3chain,
}

impl FromStr for AppName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heat2d" => Ok(AppName::Heat2d),
            "miniflow2d" | "miniflow" => Ok(AppName::Miniflow2d),
            "rk3chain" => Ok(AppName::Rk3chain),
            other => Err(Error::Config(format!("unknown app `{other}`"))),
        }
    }
}

impl fmt::Display for AppName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AppName::Heat2d => "heat2d",
            AppName::Miniflow2d => "miniflow2d",
            AppName::Rk3chain => "rk3chain",
        })
    }
}

/// Parses `NxM` or `NxMxK`.
pub fn parse_size(s: &str) -> Result<Vec<i64>> {
    let dims: Vec<i64> = s
        .split('x')
        .map(|p| p.trim().parse::<i64>().map_err(|_| Error::Config(format!("bad size `{s}`"))))
        .collect::<Result<_>>()?;
    if dims.is_empty() || dims.len() > 3 || dims.iter().any(|&n| n <= 0) {
        return Err(Error::Config(format!("bad size `{s}`")));
    }
    Ok(dims)
}

pub fn format_size(dims: &[i64]) -> String {
    dims.iter().map(i64::to_string).collect::<Vec<_>>().join("x")
}

#[derive(Clone, Debug, PartialEq)]
pub struct AppSpec {
    pub app: AppName,
    pub size: Vec<i64>,
    pub iters: usize,
    /// Iterations (timesteps) per chain; `None` keeps the app's default:
    /// the whole run for heat2d, one iteration otherwise.
    pub span: Option<usize>,
}

pub const MINIFLOW_TEMPORARIES: [&str; 6] = ["p", "q", "w1", "w2", "fx", "fy"];
pub const MINIFLOW_SUMMARY_EVERY: usize = 10;
pub const MINIFLOW_INIT_ITERS: usize = 2;

// low-storage RK3 coefficients
const RK_A: [&str; 3] = ["0.0", "-0.5555555555555556", "-1.1953125"];
const RK_B: [&str; 3] = ["0.3333333333333333", "0.9375", "0.5333333333333333"];
const RK_DT: &str = "0.001";

fn ex(src: &str) -> Expr {
    Expr::parse(src).unwrap_or_else(|e| panic!("built-in kernel `{src}`: {e}"))
}

fn id(b: &Block, name: &str) -> DatasetId {
    b.lookup(name).unwrap_or_else(|| panic!("dataset `{name}` missing"))
}

impl AppSpec {
    pub fn new(app: AppName, size: Vec<i64>, iters: usize) -> Self {
        AppSpec { app, size, iters, span: None }
    }

    pub fn span(&self) -> usize {
        let d = match self.app {
            AppName::Heat2d => self.iters,
            _ => 1,
        };
        self.span.unwrap_or(d).max(1)
    }

    fn core(&self) -> Result<Extent> {
        if self.size.len() != 2 {
            return Err(Error::Config(format!("{} needs a two-dimensional size", self.app)));
        }
        Extent::sized(&self.size)
    }

    pub fn build(&self) -> Result<Block> {
        let core = self.core()?;
        let mut b = Block::new(2)?;
        match self.app {
            AppName::Heat2d => {
                let init = ex("(+ (* 0.001 i) (* 0.002 j))");
                b.declare_dataset("A", core, &[1, 1], 8, Fill::Expr(&init))?;
                b.declare_dataset("B", core, &[1, 1], 8, Fill::Value(0.0))?;
            }
            AppName::Miniflow2d => {
                let fills = [
                    ("rho", "(+ 1.0 (* 0.001 i))"),
                    ("en", "(+ 2.0 (* 0.001 j))"),
                    ("u", "(* 0.01 (- i j))"),
                    ("v", "(* 0.005 (+ i j))"),
                ];
                for (name, f) in fills {
                    b.declare_dataset(name, core, &[2, 2], 8, Fill::Expr(&ex(f)))?;
                }
                // temporaries read with a stencil are computed one cell past the grid
                let wide = core.expand(&[-1, -1, 0], &[1, 1, 0]);
                for name in MINIFLOW_TEMPORARIES {
                    b.declare_dataset(name, wide, &[0, 0], 8, Fill::Value(0.0))?;
                }
            }
            AppName::Rk3chain => {
                b.declare_dataset("u", core, &[1, 1], 8, Fill::Expr(&ex("(* 0.01 (+ i (* 2 j)))")))?;
                b.declare_dataset("coef", core, &[0, 0], 8, Fill::Expr(&ex("(+ 0.5 (* 0.0001 i))")))?;
                b.declare_dataset("src", core, &[0, 0], 8, Fill::Expr(&ex("(* 0.0002 j)")))?;
                b.declare_dataset("w", core, &[0, 0], 8, Fill::Value(0.0))?;
                b.declare_dataset("dx", core, &[0, 0], 8, Fill::Value(0.0))?;
                b.declare_dataset("dy", core, &[0, 0], 8, Fill::Value(0.0))?;
            }
        }
        Ok(b)
    }

    /// Loops of iteration `it` (0-based).
    pub fn iteration(&self, b: &Block, it: usize) -> Result<Vec<ParLoop>> {
        let c = self.core()?;
        Ok(match self.app {
            AppName::Heat2d => heat_iteration(b, c, it),
            AppName::Miniflow2d => miniflow_iteration(b, c, it),
            AppName::Rk3chain => rk3_step(b, c),
        })
    }

    /// Enqueues the whole run, flushing at chain boundaries, then finishes.
    pub fn drive(&self, rt: &mut Runtime, cyclic: bool) -> Result<()> {
        let span = self.span();
        let mut cyc = false;
        for it in 0..self.iters {
            let want = cyclic && (self.app != AppName::Miniflow2d || it >= MINIFLOW_INIT_ITERS);
            if want != cyc {
                rt.flush(FlushReason::ExplicitFlush)?;
                rt.set_cyclic(want);
                cyc = want;
            }
            for lp in self.iteration(rt.block(), it)? {
                rt.enqueue(lp)?;
            }
            // the last span is left to `finish`
            if (it + 1).is_multiple_of(span) && it + 1 < self.iters {
                rt.flush(FlushReason::ExplicitFlush)?;
            }
        }
        rt.finish()
    }
}

fn heat_iteration(b: &Block, c: Extent, it: usize) -> Vec<ParLoop> {
    let (src, dst) = if it.is_multiple_of(2) { ("A", "B") } else { ("B", "A") };
    let k = ex("(* 0.2 (+ (r 0 0 0) (+ (+ (r 0 -1 0) (r 0 1 0)) (+ (r 0 0 -1) (r 0 0 1)))))");
    vec![ParLoop::new(
        "jacobi",
        c,
        vec![Arg::read(id(b, src), Stencil::star(2, 1)), Arg::write(id(b, dst), 2)],
        Kernel::write(1, k),
    )]
}

fn miniflow_iteration(b: &Block, c: Extent, it: usize) -> Vec<ParLoop> {
    let e = c.expand(&[-1, -1, 0], &[1, 1, 0]);
    let pt = || Stencil::point(2);
    let x3 = || Stencil::line(2, 0, 1);
    let y3 = || Stencil::line(2, 1, 1);
    let d = |n: &str| id(b, n);
    let r = |n: &str, s: Stencil| Arg::read(d(n), s);
    let w = |n: &str| Arg::write(d(n), 2);
    let rw = |n: &str| Arg::read_write(d(n), 2);
    let lp = |name: &str, range: Extent, args: Vec<Arg>, arg: usize, k: &str| {
        ParLoop::new(name, range, args, Kernel::write(arg, ex(k)))
    };
    let mut v = vec![
        lp("ideal_gas", e, vec![r("rho", pt()), r("en", pt()), w("p")], 2, "(* 0.4 (* (r 0 0 0) (r 1 0 0)))"),
        lp("viscosity", e, vec![r("u", x3()), w("q")], 1, "(- (* 0.25 (+ (r 0 -1 0) (r 0 1 0))) (* 0.5 (r 0 0 0)))"),
        lp("pressure_sum", e, vec![r("p", pt()), r("q", pt()), w("w1")], 2, "(+ (r 0 0 0) (r 1 0 0))"),
        lp("v_average", e, vec![r("v", y3()), w("w2")], 1, "(* 0.5 (+ (r 0 0 -1) (r 0 0 1)))"),
        lp("flux_x", c, vec![r("w1", x3()), w("fx")], 1, "(* 0.5 (+ (r 0 -1 0) (r 0 1 0)))"),
        lp("flux_y", c, vec![r("w2", y3()), w("fy")], 1, "(* 0.5 (+ (r 0 0 -1) (r 0 0 1)))"),
        lp(
            "advect_mass",
            c,
            vec![rw("rho"), r("fx", pt()), r("fy", pt())],
            0,
            "(- (r 0 0 0) (* 0.01 (+ (r 1 0 0) (r 2 0 0))))",
        ),
        lp(
            "pdv",
            c,
            vec![rw("en"), r("p", Stencil::star(2, 1))],
            0,
            "(- (r 0 0 0) (* 0.001 (- (* 4 (r 1 0 0)) (+ (+ (r 1 -1 0) (r 1 1 0)) (+ (r 1 0 -1) (r 1 0 1))))))",
        ),
        lp("accel_x", c, vec![rw("u"), r("p", x3())], 0, "(- (r 0 0 0) (* 0.01 (- (r 1 1 0) (r 1 -1 0))))"),
        lp("accel_y", c, vec![rw("v"), r("p", y3())], 0, "(- (r 0 0 0) (* 0.01 (- (r 1 0 1) (r 1 0 -1))))"),
        lp(
            "smooth",
            c,
            vec![r("rho", Stencil::star(2, 1)), w("w1")],
            1,
            "(* 0.2 (+ (r 0 0 0) (+ (+ (r 0 -1 0) (r 0 1 0)) (+ (r 0 0 -1) (r 0 0 1)))))",
        ),
        lp("heat", c, vec![rw("en"), r("w1", pt())], 0, "(+ (r 0 0 0) (* 0.001 (r 1 0 0)))"),
        lp("momentum", c, vec![r("u", pt()), r("v", pt()), w("w2")], 2, "(* (r 0 0 0) (r 1 0 0))"),
        lp("damp", c, vec![rw("u"), r("w2", pt())], 0, "(- (r 0 0 0) (* 0.001 (r 1 0 0)))"),
    ];
    if (it + 1).is_multiple_of(MINIFLOW_SUMMARY_EVERY) {
        v.push(ParLoop::new(
            "field_summary",
            c,
            vec![r("rho", pt()), r("en", pt()), r("u", pt()), r("v", pt())],
            Kernel::reduce(ReduceOp::Sum, "field_sum", ex("(+ (+ (r 0 0 0) (r 1 0 0)) (+ (r 2 0 0) (r 3 0 0)))")),
        ));
    }
    v
}

fn rk3_step(b: &Block, c: Extent) -> Vec<ParLoop> {
    let pt = || Stencil::point(2);
    let d = |n: &str| id(b, n);
    let mut v = Vec::with_capacity(9);
    for s in 0..3 {
        v.push(ParLoop::new(
            "deriv_x",
            c,
            vec![
                Arg::read(d("u"), Stencil::line(2, 0, 1)),
                Arg::read(d("coef"), pt()),
                Arg::read(d("src"), pt()),
                Arg::read(d("w"), pt()),
                Arg::write(d("dx"), 2),
            ],
            Kernel::write(
                4,
                ex("(+ (* (r 1 0 0) (- (+ (r 0 -1 0) (r 0 1 0)) (* 2 (r 0 0 0)))) (+ (* 0.1 (r 2 0 0)) (* 0.01 (r 3 0 0))))"),
            ),
        ));
        v.push(ParLoop::new(
            "deriv_y",
            c,
            vec![
                Arg::read(d("u"), Stencil::line(2, 1, 1)),
                Arg::read(d("coef"), pt()),
                Arg::read(d("src"), pt()),
                Arg::read(d("w"), pt()),
                Arg::read(d("dx"), pt()),
                Arg::write(d("dy"), 2),
            ],
            Kernel::write(
                5,
                ex("(+ (* (r 1 0 0) (- (+ (r 0 0 -1) (r 0 0 1)) (* 2 (r 0 0 0)))) (- (* 0.1 (r 2 0 0)) (* 0.001 (+ (r 3 0 0) (r 4 0 0)))))"),
            ),
        ));
        // args: w, u, dx, dy, coef, src
        let rhs = "(* DT (+ (* (r 4 0 0) (+ (r 2 0 0) (r 3 0 0))) (r 5 0 0)))".replace("DT", RK_DT);
        let new_w = format!("(+ (* {} (r 0 0 0)) {rhs})", RK_A[s]);
        let new_u = format!("(+ (r 1 0 0) (* {} {new_w}))", RK_B[s]);
        v.push(ParLoop::new(
            "rk_update",
            c,
            vec![
                Arg::read_write(d("w"), 2),
                Arg::read_write(d("u"), 2),
                Arg::read(d("dx"), pt()),
                Arg::read(d("dy"), pt()),
                Arg::read(d("coef"), pt()),
                Arg::read(d("src"), pt()),
            ],
            Kernel { writes: vec![(0, ex(&new_w)), (1, ex(&new_u))], reduction: None },
        ));
    }
    v
}

/// Something to run: a bundled app or a chain-description file.
#[derive(Clone, Debug, PartialEq)]
pub enum Workload {
    App(AppSpec),
    File { name: String, file: ChainFile },
}

impl Workload {
    pub fn label(&self) -> String {
        match self {
            Workload::App(a) => a.app.to_string(),
            Workload::File { name, .. } => name.clone(),
        }
    }

    pub fn size_label(&self) -> String {
        match self {
            Workload::App(a) => format_size(&a.size),
            Workload::File { file, .. } => file
                .datasets
                .first()
                .map(|d| format_size(&d.core.iter().map(|r| r[1] - r[0]).collect::<Vec<_>>()))
                .unwrap_or_default(),
        }
    }

    pub fn build(&self) -> Result<Block> {
        match self {
            Workload::App(a) => a.build(),
            Workload::File { file, .. } => file.build().map(|(b, _)| b),
        }
    }

    /// The loops of the first chain the workload flushes.
    pub fn first_chain(&self, block: &Block) -> Result<LoopChain> {
        let mut loops = Vec::new();
        match self {
            Workload::App(a) => {
                'outer: for it in 0..a.span().min(a.iters.max(1)) {
                    for lp in a.iteration(block, it)? {
                        let stop = lp.has_reduction();
                        loops.push(lp);
                        if stop {
                            break 'outer;
                        }
                    }
                }
            }
            Workload::File { file, .. } => {
                let (_, l) = file.build()?;
                for _ in 0..file.iterations {
                    loops.extend(l.iter().cloned());
                }
            }
        }
        for (i, lp) in loops.iter_mut().enumerate() {
            lp.id = i as u64;
        }
        Ok(LoopChain::new(0, loops, FlushReason::ExplicitFlush))
    }

    pub fn drive(&self, rt: &mut Runtime, cyclic: bool) -> Result<()> {
        match self {
            Workload::App(a) => a.drive(rt, cyclic),
            Workload::File { file, .. } => {
                let (_, loops) = file.build()?;
                rt.set_cyclic(cyclic);
                for _ in 0..file.iterations {
                    for lp in &loops {
                        rt.enqueue(lp.clone())?;
                    }
                }
                rt.finish()
            }
        }
    }
}
