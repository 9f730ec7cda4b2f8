//! JSON description of a block and a loop chain.
//!
//! ```json
//! {
//!   "datasets": [{"name": "u", "core": [[0, 64], [0, 32]], "halo": [1, 1], "fill": "(+ i j)"}],
//!   "stencils": [{"name": "star", "offsets": [[0, 0], [1, 0], [-1, 0]]}],
//!   "loops": [{"name": "smooth", "range": [[1, 63], [0, 32]],
//!              "args": [{"dataset": "u", "stencil": "star", "mode": "read"},
//!                       {"dataset": "v", "stencil": "point", "mode": "write"}],
//!              "kernel": "(* 0.5 (+ (r 0 1 0) (r 0 -1 0)))"}],
//!   "iterations": 4
//! }
//! ```
//!
//! A kernel given as a bare string is written to the loop's only written
//! argument. The stencil name `point` is always available.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Expr, Kernel, ReduceOp, Reduction};
use crate::extent::Extent;
use crate::mesh::{AccessMode, Arg, Block, Fill, ParLoop, Stencil};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FillSpec {
    Value(f64),
    Expr(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    pub core: Vec<[i64; 2]>,
    #[serde(default)]
    pub halo: Vec<i64>,
    #[serde(default = "zero_fill")]
    pub fill: FillSpec,
    #[serde(default = "eight")]
    pub elem_bytes: u64,
}

fn zero_fill() -> FillSpec {
    FillSpec::Value(0.0)
}

fn eight() -> u64 {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StencilSpec {
    pub name: String,
    pub offsets: Vec<Vec<i64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArgSpec {
    pub dataset: String,
    #[serde(default = "point_name")]
    pub stencil: String,
    pub mode: AccessMode,
}

fn point_name() -> String {
    "point".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WriteSpec {
    pub arg: usize,
    pub expr: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReductionSpec {
    pub op: ReduceOp,
    pub name: String,
    pub expr: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KernelSpec {
    Single(String),
    Full {
        #[serde(default)]
        writes: Vec<WriteSpec>,
        #[serde(default)]
        reduction: Option<ReductionSpec>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopSpec {
    #[serde(default)]
    pub name: String,
    pub range: Vec<[i64; 2]>,
    pub args: Vec<ArgSpec>,
    pub kernel: KernelSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainFile {
    pub datasets: Vec<DatasetSpec>,
    #[serde(default)]
    pub stencils: Vec<StencilSpec>,
    pub loops: Vec<LoopSpec>,
    /// How many times the loop list is enqueued.
    #[serde(default = "one")]
    pub iterations: usize,
}

fn one() -> usize {
    1
}

fn extent(b: &[[i64; 2]]) -> Result<Extent> {
    let lo: Vec<i64> = b.iter().map(|r| r[0]).collect();
    let hi: Vec<i64> = b.iter().map(|r| r[1]).collect();
    Extent::new(&lo, &hi)
}

impl ChainFile {
    pub fn parse(src: &str) -> Result<Self> {
        Ok(serde_json::from_str(src)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Builds the block and the loop list (one iteration).
    pub fn build(&self) -> Result<(Block, Vec<ParLoop>)> {
        let first = self.datasets.first().ok_or_else(|| Error::Config("chain file has no datasets".into()))?;
        let ndim = first.core.len();
        let mut block = Block::new(ndim)?;
        for ds in &self.datasets {
            let core = extent(&ds.core)?;
            let halo = if ds.halo.is_empty() { vec![0; ndim] } else { ds.halo.clone() };
            match &ds.fill {
                FillSpec::Value(v) => block.declare_dataset(&ds.name, core, &halo, ds.elem_bytes, Fill::Value(*v))?,
                FillSpec::Expr(s) => {
                    let e = Expr::parse(s)?;
                    block.declare_dataset(&ds.name, core, &halo, ds.elem_bytes, Fill::Expr(&e))?
                }
            };
        }
        let mut stencils = vec![("point".to_string(), Stencil::point(ndim))];
        for s in &self.stencils {
            let offs: Vec<&[i64]> = s.offsets.iter().map(Vec::as_slice).collect();
            stencils.push((s.name.clone(), Stencil::new(ndim, &offs)?));
        }
        let mut loops = Vec::new();
        for (i, l) in self.loops.iter().enumerate() {
            let mut args = Vec::new();
            for a in &l.args {
                let d = block
                    .lookup(&a.dataset)
                    .ok_or_else(|| Error::Config(format!("loop {i}: unknown dataset `{}`", a.dataset)))?;
                let st = stencils
                    .iter()
                    .rev()
                    .find(|(n, _)| *n == a.stencil)
                    .ok_or_else(|| Error::Config(format!("loop {i}: unknown stencil `{}`", a.stencil)))?;
                args.push(Arg::new(d, st.1.clone(), a.mode));
            }
            let kernel = match &l.kernel {
                KernelSpec::Single(src) => {
                    let written: Vec<usize> = (0..args.len()).filter(|&k| args[k].mode.writes()).collect();
                    let [w] = written[..] else {
                        return Err(Error::Config(format!(
                            "loop {i}: a bare kernel expression needs exactly one written argument"
                        )));
                    };
                    Kernel::write(w, Expr::parse(src)?)
                }
                KernelSpec::Full { writes, reduction } => Kernel {
                    writes: writes.iter().map(|w| Ok((w.arg, Expr::parse(&w.expr)?))).collect::<Result<_>>()?,
                    reduction: match reduction {
                        Some(r) => Some(Reduction { op: r.op, name: r.name.clone(), expr: Expr::parse(&r.expr)? }),
                        None => None,
                    },
                },
            };
            let name = if l.name.is_empty() { format!("loop{i}") } else { l.name.clone() };
            let lp = ParLoop::new(name, extent(&l.range)?, args, kernel);
            block.validate_loop(&lp)?;
            loops.push(lp);
        }
        Ok((block, loops))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SRC: &str = r#"{
      "datasets": [
        {"name": "u", "core": [[0, 16], [0, 4]], "halo": [1, 0], "fill": "(+ i (* 0.1 j))"},
        {"name": "v", "core": [[0, 16], [0, 4]], "fill": 0.30000000000000004}
      ],
      "stencils": [{"name": "x3", "offsets": [[-1, 0], [0, 0], [1, 0]]}],
      "loops": [
        {"name": "avg", "range": [[0, 16], [0, 4]],
         "args": [{"dataset": "u", "stencil": "x3", "mode": "read"},
                  {"dataset": "v", "mode": "write"}],
         "kernel": "(/ (+ (r 0 -1 0) (+ (r 0 0 0) (r 0 1 0))) 3)"},
        {"range": [[0, 16], [0, 4]],
         "args": [{"dataset": "v", "mode": "read"}],
         "kernel": {"reduction": {"op": "max", "name": "vmax", "expr": "(r 0 0 0)"}}}
      ],
      "iterations": 3
    }"#;

    #[test]
    fn parses_and_builds() {
        let cf = ChainFile::parse(SRC).unwrap();
        assert_eq!(cf.iterations, 3);
        let (block, loops) = cf.build().unwrap();
        assert_eq!(block.datasets().len(), 2);
        let v = block.lookup("v").unwrap();
        assert_eq!(block.dataset(v).host.data[0], 0.30000000000000004);
        let u = block.lookup("u").unwrap();
        assert_eq!(block.dataset(u).host.get(&[3, 2, 0]), 3.2);
        assert_eq!(loops.len(), 2);
        assert_eq!(loops[1].name, "loop1");
        assert!(loops[1].has_reduction());
        assert_eq!(loops[0].kernel.writes[0].0, 1);
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let cf = ChainFile::parse(SRC).unwrap();
        let back = ChainFile::parse(&cf.to_json().unwrap()).unwrap();
        assert_eq!(cf, back);
    }

    #[test]
    fn rejects_unknown_names() {
        let bad = SRC.replace("\"stencil\": \"x3\"", "\"stencil\": \"nope\"");
        assert!(matches!(ChainFile::parse(&bad).unwrap().build(), Err(Error::Config(_))));
        let bad = SRC.replace("\"dataset\": \"u\", \"stencil\"", "\"dataset\": \"w\", \"stencil\"");
        assert!(ChainFile::parse(&bad).unwrap().build().is_err());
        assert!(ChainFile::parse("{\"datasets\": [], \"loops\": [], \"bogus\": 1}").is_err());
    }
}
