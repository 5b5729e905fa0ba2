//! The sixteen named losses (fifteen discovered ones plus cross-entropy) as
//! genomes, with hand-written closed forms, and phenotype export.
//!
//! `r` below is ŷ/(y+ε), `log` is log10(|x|+ε) and `ln` is ln(|x|+ε), matching
//! the search-space operations. Values are per element and include the sign,
//! i.e. what gets averaged into the scalar loss.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genome::{LossGenome, Node, Sign, SourceRef, DEFAULT_LENGTH};
use crate::numerics::bessel::{i0, i0e, i1, i1e};
use crate::numerics::{Op, EPS};
use crate::tensor::Tensor;

type ClosedForm = fn(f64, f64, LogEpsilon) -> f64;

pub const NAMES: [&str; 16] = [
    "B0", "B1", "B2", "C0", "C1", "C2", "M0", "M1", "M2", "R0", "R1", "R2", "A0", "A1", "A2", "CE",
];

/// Where ε sits in the `log(ŷ/y + ε)` term of R1 and R2.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogEpsilon {
    /// log10(|ŷ/(y+ε)| + ε): the form the search-space ops produce.
    #[default]
    RatioAndLog,
    /// log10(ŷ/(y+ε)) with no ε inside the logarithm. Closed form only; it
    /// diverges at ŷ = 0.
    RatioOnly,
}

#[derive(Clone, Debug)]
pub struct BuiltinLoss {
    pub name: &'static str,
    pub genome: LossGenome,
    closed: fn(f64, f64, LogEpsilon) -> f64,
}

impl BuiltinLoss {
    /// Hand-coded per-element value with the sign applied.
    pub fn closed_form(&self, y: f64, yhat: f64) -> f64 {
        (self.closed)(y, yhat, LogEpsilon::default())
    }

    pub fn closed_form_with(&self, y: f64, yhat: f64, eps: LogEpsilon) -> f64 {
        (self.closed)(y, yhat, eps)
    }

    /// Per-element signed values computed through the genome.
    pub fn values(&self, y: &[f64], yhat: &[f64]) -> Result<Vec<f64>> {
        signed_values(&self.genome, y, yhat)
    }
}

pub fn signed_values(g: &LossGenome, y: &[f64], yhat: &[f64]) -> Result<Vec<f64>> {
    let t = g.forward(&Tensor::from_vec(y.to_vec()), &Tensor::from_vec(yhat.to_vec()))?;
    let s = g.sign().value();
    Ok(t.into_data().into_iter().map(|v| s * v).collect())
}

struct Builder {
    nodes: Vec<Node>,
}

const Y: SourceRef = SourceRef::Y;
const YH: SourceRef = SourceRef::YHat;

impl Builder {
    fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn un(&mut self, op: Op, a: SourceRef) -> SourceRef {
        self.nodes.push(Node::unary(op, a));
        SourceRef::Node(self.nodes.len() - 1)
    }

    fn bin(&mut self, op: Op, a: SourceRef, b: SourceRef) -> SourceRef {
        self.nodes.push(Node::binary(op, a, b));
        SourceRef::Node(self.nodes.len() - 1)
    }

    fn ratio(&mut self) -> SourceRef {
        self.bin(Op::SafeDiv, YH, Y)
    }

    /// Pads with inactive nodes up to the standard genome length.
    fn finish(mut self, root: SourceRef, sign: Sign) -> LossGenome {
        let SourceRef::Node(root) = root else { unreachable!("root is always a node") };
        while self.nodes.len() < DEFAULT_LENGTH {
            self.nodes.push(Node::unary(Op::Neg, Y));
        }
        LossGenome::new(self.nodes, root, sign).expect("builtin genomes are valid")
    }
}

fn ln(x: f64) -> f64 {
    (x.abs() + EPS).ln()
}

fn log(x: f64) -> f64 {
    (x.abs() + EPS).log10()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn arctanh(x: f64) -> f64 {
    let c = 1.0 - 1e-6;
    0.5 * ((1.0 + x.clamp(-c, c)) / (1.0 - x.clamp(-c, c))).ln()
}

fn r(y: f64, yhat: f64) -> f64 {
    yhat / (y + EPS)
}

fn r_log(y: f64, yhat: f64, e: LogEpsilon) -> f64 {
    match e {
        LogEpsilon::RatioAndLog => log(r(y, yhat)),
        LogEpsilon::RatioOnly => r(y, yhat).log10(),
    }
}

fn build(name: &str) -> Option<BuiltinLoss> {
    let mut b = Builder::new();
    let (root, sign, closed): (SourceRef, Sign, ClosedForm) = match name {
        "B0" => {
            let q = b.ratio();
            let s = b.un(Op::Softplus, q);
            (b.un(Op::Sigmoid, s), Sign::Minus, |y, yh, _| -sigmoid(softplus(r(y, yh))))
        }
        "B1" => {
            let q = b.ratio();
            let s = b.un(Op::BesselI0e, q);
            (b.un(Op::DSigmoid, s), Sign::Minus, |y, yh, _| {
                let s = sigmoid(i0e(r(y, yh)));
                -s * (1.0 - s)
            })
        }
        "B2" => {
            let q = b.ratio();
            let s = b.un(Op::Erf, q);
            (b.un(Op::BesselI1e, s), Sign::Minus, |y, yh, _| -i1e(libm::erf(r(y, yh))))
        }
        "C0" => {
            let q = b.ratio();
            let s = b.un(Op::Arctanh, q);
            (b.un(Op::Ln, s), Sign::Minus, |y, yh, _| -ln(arctanh(r(y, yh))))
        }
        "C1" => {
            let q = b.ratio();
            let s = b.un(Op::Softplus, q);
            (b.un(Op::Ln, s), Sign::Minus, |y, yh, _| -ln(softplus(r(y, yh))))
        }
        "C2" => {
            let q = b.ratio();
            let s = b.un(Op::Log10, q);
            (b.un(Op::Sigmoid, s), Sign::Minus, |y, yh, _| -sigmoid(log(r(y, yh))))
        }
        "M0" => {
            let l = b.un(Op::Log10, YH);
            let a = b.un(Op::Arctanh, l);
            let i = b.un(Op::BesselI1, a);
            (b.bin(Op::Mul, i, Y), Sign::Minus, |y, yh, _| -i1(arctanh(log(yh))) * y)
        }
        "M1" => {
            let d = b.bin(Op::Sub, YH, Y);
            (b.un(Op::Softplus, d), Sign::Plus, |y, yh, _| (1.0 + (yh - y).exp()).ln())
        }
        "M2" => {
            let d = b.bin(Op::Sub, Y, YH);
            let i = b.un(Op::BesselI0, d);
            (b.un(Op::Arcsinh, i), Sign::Plus, |y, yh, _| i0(y - yh).asinh())
        }
        "R0" => {
            let q = b.ratio();
            let i = b.un(Op::BesselI0e, q);
            let d = b.un(Op::DTanh, i);
            (b.bin(Op::Add, d, i), Sign::Minus, |y, yh, _| {
                let i = i0e(r(y, yh));
                -((1.0 - i.tanh().powi(2)) + i)
            })
        }
        "R1" => {
            let q = b.ratio();
            let l = b.un(Op::Log10, q);
            let s = b.bin(Op::Add, l, Y);
            (b.bin(Op::ScaledDiv, l, s), Sign::Plus, |y, yh, e| {
                let l = r_log(y, yh, e);
                l / (1.0 + (l + y).powi(2)).sqrt()
            })
        }
        "R2" => {
            let q = b.ratio();
            let l = b.un(Op::Log10, q);
            let lnl = b.un(Op::Ln, l);
            let i = b.un(Op::BesselI0, Y);
            let p = b.un(Op::Abs, i);
            let m = b.bin(Op::Mul, p, lnl);
            (b.un(Op::Exp, m), Sign::Plus, |y, yh, e| {
                let base = r_log(y, yh, e).abs();
                (i0(y).abs() * (base + EPS).ln()).exp()
            })
        }
        "A0" => {
            let l = b.un(Op::Log10, YH);
            let d = b.un(Op::DSoftsign, l);
            let n = b.un(Op::Ln, d);
            (b.bin(Op::Mul, n, Y), Sign::Minus, |y, yh, _| -ln(1.0 / (1.0 + log(yh).abs()).powi(2)) * y)
        }
        "A1" => {
            let l = b.un(Op::Log10, YH);
            let i = b.un(Op::BesselI0e, l);
            let n = b.un(Op::Ln, i);
            (b.bin(Op::Mul, n, Y), Sign::Minus, |y, yh, _| -ln(i0e(log(yh))) * y)
        }
        "A2" => {
            let l = b.un(Op::Ln, YH);
            let i = b.un(Op::BesselI0e, l);
            (b.bin(Op::SafeDiv, Y, i), Sign::Plus, |y, yh, _| y / (i0e(ln(yh)) + EPS))
        }
        "CE" => {
            let l = b.un(Op::Ln, YH);
            (b.bin(Op::Mul, Y, l), Sign::Minus, |y, yh, _| -y * (yh.abs() + EPS).ln())
        }
        _ => return None,
    };
    let name = NAMES.iter().copied().find(|n| *n == name)?;
    Some(BuiltinLoss { name, genome: b.finish(root, sign), closed })
}

pub fn builtin(name: &str) -> Result<BuiltinLoss> {
    build(name).ok_or_else(|| Error::Config(format!("unknown built-in loss '{name}' (known: {})", NAMES.join(", "))))
}

pub fn all_builtins() -> Vec<BuiltinLoss> {
    NAMES.iter().map(|n| build(n).expect("every listed name builds")).collect()
}

/// Evenly spaced samples over `[lo, hi]`, endpoints included.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub samples: usize,
}

impl Default for Axis {
    /// The inclusive unit interval; ε keeps ln finite at ŷ = 0.
    fn default() -> Self {
        Self { lo: 0.0, hi: 1.0, samples: 101 }
    }
}

impl Axis {
    /// `[δ, 1 − δ]` with `samples` points.
    pub fn with_margin(delta: f64, samples: usize) -> Self {
        Self { lo: delta, hi: 1.0 - delta, samples }
    }

    pub fn points(&self) -> Vec<f64> {
        match self.samples {
            0 => Vec::new(),
            1 => vec![self.lo],
            n => (0..n).map(|i| self.lo + (self.hi - self.lo) * i as f64 / (n - 1) as f64).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 || self.lo >= self.hi || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::Config(format!("invalid axis {self:?}")));
        }
        Ok(())
    }
}

/// Min-max normalization to [0, 1]; a constant input gives zeros and `true`.
pub fn normalize(v: &[f64]) -> (Vec<f64>, bool) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if v.is_empty() || hi <= lo {
        return (vec![0.0; v.len()], true);
    }
    (v.iter().map(|x| (x - lo) / (hi - lo)).collect(), false)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub yhat: Vec<f64>,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    pub constant: bool,
}

/// Loss as a function of ŷ at y = 1.
pub fn binary_phenotype(g: &LossGenome, axis: &Axis) -> Result<Curve> {
    axis.validate()?;
    let yhat = axis.points();
    let raw = signed_values(g, &vec![1.0; yhat.len()], &yhat)?;
    let (normalized, constant) = normalize(&raw);
    Ok(Curve { yhat, raw, normalized, constant })
}

impl Curve {
    /// ŷ at the largest raw value (first one on ties).
    pub fn argmax(&self) -> (f64, f64) {
        let i = (0..self.raw.len()).fold(0, |b, i| if self.raw[i] > self.raw[b] { i } else { b });
        (self.yhat[i], self.raw[i])
    }
}

/// Values over a `y × ŷ` grid, stored y-major: index `iy * yhat.len() + ih`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhenotypeGrid {
    pub y: Vec<f64>,
    pub yhat: Vec<f64>,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    pub constant: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint {
    pub y: f64,
    pub yhat: f64,
    pub value: f64,
}

impl PhenotypeGrid {
    fn point(&self, i: usize, v: &[f64]) -> GridPoint {
        let n = self.yhat.len();
        GridPoint { y: self.y[i / n], yhat: self.yhat[i % n], value: v[i] }
    }

    /// Largest raw value (first in y-major order on ties).
    pub fn max_raw(&self) -> GridPoint {
        let i = (0..self.raw.len()).fold(0, |b, i| if self.raw[i] > self.raw[b] { i } else { b });
        self.point(i, &self.raw)
    }

    /// Writes `y,yhat,raw,normalized` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["y", "yhat", "raw", "normalized"])?;
        for i in 0..self.raw.len() {
            let p = self.point(i, &self.raw);
            out.write_record(&[p.y.to_string(), p.yhat.to_string(), p.value.to_string(), self.normalized[i].to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn surface(g: &LossGenome, y_axis: &Axis, yhat_axis: &Axis) -> Result<PhenotypeGrid> {
    y_axis.validate()?;
    yhat_axis.validate()?;
    let (ys, hs) = (y_axis.points(), yhat_axis.points());
    let yv: Vec<f64> = ys.iter().flat_map(|&y| std::iter::repeat_n(y, hs.len())).collect();
    let hv: Vec<f64> = ys.iter().flat_map(|_| hs.iter().copied()).collect();
    let raw = signed_values(g, &yv, &hv)?;
    let (normalized, constant) = normalize(&raw);
    Ok(PhenotypeGrid { y: ys, yhat: hs, raw, normalized, constant })
}

/// Normalized `a − b` over the grid. `raw` and `normalized` both hold the
/// difference of the two per-surface-normalized grids.
pub fn difference_surface(a: &LossGenome, b: &LossGenome, y_axis: &Axis, yhat_axis: &Axis) -> Result<PhenotypeGrid> {
    let sa = surface(a, y_axis, yhat_axis)?;
    let sb = surface(b, y_axis, yhat_axis)?;
    let diff: Vec<f64> = sa.normalized.iter().zip(&sb.normalized).map(|(p, q)| p - q).collect();
    Ok(PhenotypeGrid { y: sa.y, yhat: sa.yhat, raw: diff.clone(), normalized: diff, constant: sa.constant || sb.constant })
}
