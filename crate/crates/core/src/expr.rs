//! Interpreted kernel expressions.
//!
//! Kernels are small expression trees over constants and stencil reads. The
//! textual form is prefix notation, e.g. `(* 0.25 (+ (r 0 -1 0) (r 0 1 0)))`
//! where `(r ARG DX [DY [DZ]])` reads argument `ARG` at the given offset.
//! Fill expressions may additionally use the coordinates `i`, `j`, `k`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extent::Index;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Min => "min",
            BinOp::Max => "max",
        }
    }

    fn from_symbol(s: &str) -> Option<Self> {
        Some(match s {
            "+" => BinOp::Add,
            "-" => BinOp::Sub,
            "*" => BinOp::Mul,
            "/" => BinOp::Div,
            "min" => BinOp::Min,
            "max" => BinOp::Max,
            _ => return None,
        })
    }

    #[inline]
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
            BinOp::Min => a.min(b),
            BinOp::Max => a.max(b),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Read {
        arg: usize,
        offset: Index,
    },
    /// Grid coordinate along a dimension; only meaningful in fill expressions.
    Coord(usize),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn read(arg: usize, offset: &[i64]) -> Expr {
        let mut o = [0; 3];
        o[..offset.len()].copy_from_slice(offset);
        Expr::Read { arg, offset: o }
    }

    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    /// Evaluates with `read(arg, offset)` resolving stencil reads and `coord`
    /// giving the current point for [`Expr::Coord`].
    pub fn eval<R: FnMut(usize, &Index) -> f64>(&self, read: &mut R, coord: &Index) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Read { arg, offset } => read(*arg, offset),
            Expr::Coord(d) => coord[*d] as f64,
            Expr::Bin(op, a, b) => {
                let x = a.eval(read, coord);
                let y = b.eval(read, coord);
                op.apply(x, y)
            }
        }
    }

    pub fn for_each_read(&self, f: &mut impl FnMut(usize, &Index)) {
        match self {
            Expr::Read { arg, offset } => f(*arg, offset),
            Expr::Bin(_, a, b) => {
                a.for_each_read(f);
                b.for_each_read(f);
            }
            Expr::Const(_) | Expr::Coord(_) => {}
        }
    }

    pub fn uses_coords(&self) -> bool {
        match self {
            Expr::Coord(_) => true,
            Expr::Bin(_, a, b) => a.uses_coords() || b.uses_coords(),
            _ => false,
        }
    }

    /// Parses prefix notation.
    pub fn parse(src: &str) -> Result<Expr> {
        let tokens = tokenize(src);
        let mut pos = 0;
        let e = parse_expr(&tokens, &mut pos)?;
        if pos != tokens.len() {
            return Err(Error::Parse(format!("trailing input after expression in `{src}`")));
        }
        Ok(e)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            // Debug formatting of f64 is the shortest round-tripping form.
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Read { arg, offset } => {
                write!(f, "(r {arg} {} {} {})", offset[0], offset[1], offset[2])
            }
            Expr::Coord(d) => write!(f, "{}", ["i", "j", "k"][*d]),
            Expr::Bin(op, a, b) => write!(f, "({} {a} {b})", op.symbol()),
        }
    }
}

fn tokenize(src: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in src.chars() {
        match ch {
            '(' | ')' => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            }
            c if c.is_whitespace() => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn parse_expr(tokens: &[String], pos: &mut usize) -> Result<Expr> {
    let tok = tokens.get(*pos).ok_or_else(|| Error::Parse("unexpected end of expression".into()))?;
    *pos += 1;
    match tok.as_str() {
        "(" => {
            let head = tokens.get(*pos).ok_or_else(|| Error::Parse("unexpected end after `(`".into()))?.clone();
            *pos += 1;
            let e = if head == "r" {
                parse_read(tokens, pos)?
            } else if let Some(op) = BinOp::from_symbol(&head) {
                let mut operands = Vec::new();
                while tokens.get(*pos).map(String::as_str) != Some(")") {
                    if *pos >= tokens.len() {
                        return Err(Error::Parse("missing `)`".into()));
                    }
                    operands.push(parse_expr(tokens, pos)?);
                }
                let n = operands.len();
                let binary_only = matches!(op, BinOp::Sub | BinOp::Div);
                if n < 2 || (binary_only && n != 2) {
                    return Err(Error::Parse(format!("operator `{head}` got {n} operands")));
                }
                let mut it = operands.into_iter();
                let first = it.next().unwrap();
                it.fold(first, |acc, e| Expr::bin(op, acc, e))
            } else {
                return Err(Error::Parse(format!("unknown operator `{head}`")));
            };
            match tokens.get(*pos).map(String::as_str) {
                Some(")") => {
                    *pos += 1;
                    Ok(e)
                }
                _ => Err(Error::Parse("missing `)`".into())),
            }
        }
        ")" => Err(Error::Parse("unexpected `)`".into())),
        "i" => Ok(Expr::Coord(0)),
        "j" => Ok(Expr::Coord(1)),
        "k" => Ok(Expr::Coord(2)),
        atom => atom.parse::<f64>().map(Expr::Const).map_err(|_| Error::Parse(format!("bad literal `{atom}`"))),
    }
}

fn parse_read(tokens: &[String], pos: &mut usize) -> Result<Expr> {
    let mut ints = Vec::new();
    while let Some(t) = tokens.get(*pos) {
        if t == ")" {
            break;
        }
        let v = t.parse::<i64>().map_err(|_| Error::Parse(format!("bad integer `{t}` in read")))?;
        ints.push(v);
        *pos += 1;
    }
    if ints.len() < 2 || ints.len() > 4 || ints[0] < 0 {
        return Err(Error::Parse("read takes an argument index and 1..=3 offsets".into()));
    }
    Ok(Expr::read(ints[0] as usize, &ints[1..]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReduceOp {
    Sum,
    Min,
    Max,
}

impl ReduceOp {
    pub fn identity(self) -> f64 {
        match self {
            ReduceOp::Sum => 0.0,
            ReduceOp::Min => f64::INFINITY,
            ReduceOp::Max => f64::NEG_INFINITY,
        }
    }

    pub fn combine(self, acc: f64, v: f64) -> f64 {
        match self {
            ReduceOp::Sum => acc + v,
            ReduceOp::Min => acc.min(v),
            ReduceOp::Max => acc.max(v),
        }
    }

    /// Folds contributions in the given (row-major) order.
    pub fn fold(self, values: &[f64]) -> f64 {
        values.iter().fold(self.identity(), |acc, &v| self.combine(acc, v))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reduction {
    pub op: ReduceOp,
    pub name: String,
    pub expr: Expr,
}

/// Per-point computation of a loop: one expression per written argument and
/// an optional reduction.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Kernel {
    pub writes: Vec<(usize, Expr)>,
    pub reduction: Option<Reduction>,
}

impl Kernel {
    pub fn write(arg: usize, expr: Expr) -> Self {
        Kernel { writes: vec![(arg, expr)], reduction: None }
    }

    pub fn reduce(op: ReduceOp, name: impl Into<String>, expr: Expr) -> Self {
        Kernel { writes: Vec::new(), reduction: Some(Reduction { op, name: name.into(), expr }) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_nary_and_reads() {
        let e = Expr::parse("(* 0.25 (+ (r 0 -1 0) (r 0 1 0) (r 0 0 -1) (r 0 0 1)))").unwrap();
        let v = e.eval(&mut |_, _| 1.0, &[0; 3]);
        assert_eq!(v, 1.0);
        let mut reads = 0;
        e.for_each_read(&mut |_, _| reads += 1);
        assert_eq!(reads, 4);
    }

    #[test]
    fn add_one() {
        let e = Expr::parse("(+ (r 0 0) 1)").unwrap();
        assert_eq!(e.eval(&mut |_, _| 41.0, &[0; 3]), 42.0);
    }

    #[test]
    fn coords_in_fill() {
        let e = Expr::parse("(+ i j)").unwrap();
        assert!(e.uses_coords());
        assert_eq!(e.eval(&mut |_, _| unreachable!(), &[3, 3, 0]), 6.0);
    }

    #[test]
    fn division_by_zero_is_not_a_trap() {
        let e = Expr::parse("(/ 1 (r 0 0))").unwrap();
        assert_eq!(e.eval(&mut |_, _| 0.0, &[0; 3]), f64::INFINITY);
    }

    #[test]
    fn rejects_malformed() {
        assert!(Expr::parse("(+ 1)").is_err());
        assert!(Expr::parse("(- 1 2 3)").is_err());
        assert!(Expr::parse("(r 0)").is_err());
        assert!(Expr::parse("(foo 1 2)").is_err());
        assert!(Expr::parse("(+ 1 2").is_err());
        assert!(Expr::parse("1 2").is_err());
    }

    #[test]
    fn decimal_literals_are_lossless() {
        let e = Expr::parse("0.1").unwrap();
        assert_eq!(e, Expr::Const(0.1));
        assert_eq!(Expr::parse(&e.to_string()).unwrap(), e);
    }

    #[test]
    fn reductions_fold_in_order() {
        assert_eq!(ReduceOp::Sum.fold(&[0.0, 1.0, 2.0, 3.0]), 6.0);
        assert_eq!(ReduceOp::Max.fold(&[0.0, 5.0, 2.0]), 5.0);
        assert_eq!(ReduceOp::Min.fold(&[]), f64::INFINITY);
    }
}
