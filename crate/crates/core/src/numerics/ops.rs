//! Operation kernels of the search space: 27 unary and 7 binary operations,
//! each with a guarded value and matching analytic partial derivatives.

use std::f64::consts::{FRAC_2_SQRT_PI, LN_10};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::bessel;
use crate::error::{Error, Result};

/// Shared ε of every `(·+ε)` guard.
pub const EPS: f64 = 1e-7;
/// exp and sinh inputs are clamped to ±EXP_CLAMP.
pub const EXP_CLAMP: f64 = 60.0;
/// I0 and I1 inputs are clamped to ±BESSEL_CLAMP (I0(700) ≈ 1.5e302).
pub const BESSEL_CLAMP: f64 = 700.0;
/// arctanh inputs are clamped to ±ATANH_CLAMP.
pub const ATANH_CLAMP: f64 = 1.0 - 1e-6;
/// x² saturates at this value.
pub const SQUARE_CAP: f64 = 1e12;

macro_rules! ops {
    ($($variant:ident => $name:literal, $arity:literal;)*) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum Op {
            $($variant,)*
        }

        impl Op {
            pub const ALL: [Op; 34] = [$(Op::$variant,)*];

            pub fn name(self) -> &'static str {
                match self {
                    $(Op::$variant => $name,)*
                }
            }

            pub fn arity(self) -> usize {
                match self {
                    $(Op::$variant => $arity,)*
                }
            }
        }

        impl FromStr for Op {
            type Err = Error;
            fn from_str(s: &str) -> Result<Op> {
                match s {
                    $($name => Ok(Op::$variant),)*
                    other => Err(Error::UnknownOp(other.to_string())),
                }
            }
        }
    };
}

ops! {
    Neg => "neg", 1;
    Exp => "exp", 1;
    Sigmoid => "sigmoid", 1;
    Softsign => "softsign", 1;
    Softplus => "softplus", 1;
    Erfc => "erfc", 1;
    Sinh => "sinh", 1;
    Tanh => "tanh", 1;
    Arctanh => "arctanh", 1;
    Abs => "abs", 1;
    BesselI0 => "bessel_i0", 1;
    BesselI1 => "bessel_i1", 1;
    BesselI1e => "bessel_i1e", 1;
    BesselI0e => "bessel_i0e", 1;
    Ln => "ln", 1;
    Log10 => "log10", 1;
    DSigmoid => "dsigmoid", 1;
    DSoftsign => "dsoftsign", 1;
    Erf => "erf", 1;
    Sin => "sin", 1;
    Arcsinh => "arcsinh", 1;
    DTanh => "dtanh", 1;
    Reciprocal => "reciprocal", 1;
    Square => "square", 1;
    Sqrt => "sqrt", 1;
    MaxZero => "max_zero", 1;
    MinZero => "min_zero", 1;
    Add => "add", 2;
    Sub => "sub", 2;
    Mul => "mul", 2;
    SafeDiv => "safe_div", 2;
    ScaledDiv => "scaled_div", 2;
    Max => "max", 2;
    Min => "min", 2;
}

impl Op {
    pub fn unary() -> impl Iterator<Item = Op> {
        Op::ALL.into_iter().filter(|o| o.arity() == 1)
    }

    pub fn binary() -> impl Iterator<Item = Op> {
        Op::ALL.into_iter().filter(|o| o.arity() == 2)
    }

    pub fn is_binary(self) -> bool {
        self.arity() == 2
    }

    /// Guarded value. `b` is ignored by unary operations.
    pub fn value(self, a: f64, b: f64) -> f64 {
        match self {
            Op::Neg => -a,
            Op::Exp => a.clamp(-EXP_CLAMP, EXP_CLAMP).exp(),
            Op::Sigmoid => sigmoid(a),
            Op::Softsign => a / (1.0 + a.abs()),
            Op::Softplus => softplus(a),
            Op::Erfc => libm::erfc(a),
            Op::Sinh => a.clamp(-EXP_CLAMP, EXP_CLAMP).sinh(),
            Op::Tanh => a.tanh(),
            Op::Arctanh => a.clamp(-ATANH_CLAMP, ATANH_CLAMP).atanh(),
            Op::Abs => a.abs(),
            Op::BesselI0 => bessel::i0(a.clamp(-BESSEL_CLAMP, BESSEL_CLAMP)),
            Op::BesselI1 => bessel::i1(a.clamp(-BESSEL_CLAMP, BESSEL_CLAMP)),
            Op::BesselI1e => bessel::i1e(a),
            Op::BesselI0e => bessel::i0e(a),
            Op::Ln => (a.abs() + EPS).ln(),
            Op::Log10 => (a.abs() + EPS).log10(),
            Op::DSigmoid => {
                let s = sigmoid(a);
                s * (1.0 - s)
            }
            Op::DSoftsign => {
                let d = 1.0 + a.abs();
                1.0 / (d * d)
            }
            Op::Erf => libm::erf(a),
            Op::Sin => a.sin(),
            Op::Arcsinh => a.asinh(),
            Op::DTanh => {
                let t = a.tanh();
                1.0 - t * t
            }
            Op::Reciprocal => 1.0 / shifted(a),
            Op::Square => (a * a).min(SQUARE_CAP),
            Op::Sqrt => a.abs().sqrt(),
            Op::MaxZero => a.max(0.0),
            Op::MinZero => a.min(0.0),
            Op::Add => a + b,
            Op::Sub => a - b,
            Op::Mul => a * b,
            Op::SafeDiv => a / shifted(b),
            Op::ScaledDiv => a / 1f64.hypot(b),
            Op::Max => {
                if a >= b {
                    a
                } else {
                    b
                }
            }
            Op::Min => {
                if a <= b {
                    a
                } else {
                    b
                }
            }
        }
    }

    /// Partial derivatives of [`Op::value`] with respect to `(a, b)`. Clamped
    /// regions have zero derivative; kinks take the one-sided value documented
    /// per case (0 at the origin for |x|, √|x|, ln/log10 and i0e).
    pub fn partials(self, a: f64, b: f64) -> [f64; 2] {
        let d = match self {
            Op::Neg => -1.0,
            Op::Exp => {
                if a.abs() > EXP_CLAMP {
                    0.0
                } else {
                    a.exp()
                }
            }
            Op::Sigmoid => {
                let s = sigmoid(a);
                s * (1.0 - s)
            }
            Op::Softsign => {
                let d = 1.0 + a.abs();
                1.0 / (d * d)
            }
            Op::Softplus => sigmoid(a),
            Op::Erfc => -FRAC_2_SQRT_PI * (-a * a).exp(),
            Op::Sinh => {
                if a.abs() > EXP_CLAMP {
                    0.0
                } else {
                    a.cosh()
                }
            }
            Op::Tanh => {
                let t = a.tanh();
                1.0 - t * t
            }
            Op::Arctanh => {
                if a.abs() > ATANH_CLAMP {
                    0.0
                } else {
                    1.0 / (1.0 - a * a)
                }
            }
            Op::Abs => sign(a),
            Op::BesselI0 => {
                if a.abs() > BESSEL_CLAMP {
                    0.0
                } else {
                    bessel::i1(a)
                }
            }
            Op::BesselI1 => {
                if a.abs() > BESSEL_CLAMP {
                    0.0
                } else if a == 0.0 {
                    0.5
                } else {
                    bessel::i0(a) - bessel::i1(a) / a
                }
            }
            // d/dx e^{-|x|} I1(x) = i0e(x) - i1e(x)/x - sign(x) i1e(x)
            Op::BesselI1e => {
                if a == 0.0 {
                    0.5
                } else {
                    let s = bessel::i1e(a);
                    bessel::i0e(a) - s / a - sign(a) * s
                }
            }
            // d/dx e^{-|x|} I0(x) = i1e(x) - sign(x) i0e(x)
            Op::BesselI0e => bessel::i1e(a) - sign(a) * bessel::i0e(a),
            Op::Ln => sign(a) / (a.abs() + EPS),
            Op::Log10 => sign(a) / ((a.abs() + EPS) * LN_10),
            Op::DSigmoid => {
                let s = sigmoid(a);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            Op::DSoftsign => {
                let d = 1.0 + a.abs();
                -2.0 * sign(a) / (d * d * d)
            }
            Op::Erf => FRAC_2_SQRT_PI * (-a * a).exp(),
            Op::Sin => a.cos(),
            Op::Arcsinh => 1.0 / 1f64.hypot(a),
            Op::DTanh => {
                let t = a.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Op::Reciprocal => {
                let d = shifted(a);
                -1.0 / (d * d)
            }
            Op::Square => {
                if a * a > SQUARE_CAP {
                    0.0
                } else {
                    2.0 * a
                }
            }
            Op::Sqrt => {
                if a == 0.0 {
                    0.0
                } else {
                    sign(a) * 0.5 / a.abs().sqrt()
                }
            }
            Op::MaxZero => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Op::MinZero => {
                if a < 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Op::Add => return [1.0, 1.0],
            Op::Sub => return [1.0, -1.0],
            Op::Mul => return [b, a],
            Op::SafeDiv => {
                let d = shifted(b);
                return [1.0 / d, -a / (d * d)];
            }
            Op::ScaledDiv => {
                let s = 1f64.hypot(b);
                return [1.0 / s, -a * (b / s) / (s * s)];
            }
            Op::Max => return if a >= b { [1.0, 0.0] } else { [0.0, 1.0] },
            Op::Min => return if a <= b { [1.0, 0.0] } else { [0.0, 1.0] },
        };
        [d, 0.0]
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Op {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Op {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Op, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// x + ε, never exactly zero.
fn shifted(x: f64) -> f64 {
    let d = x + EPS;
    if d == 0.0 {
        EPS
    } else {
        d
    }
}

pub fn eval_unary(op: Op, x: f64) -> Result<f64> {
    if op.is_binary() {
        return Err(Error::InvalidGenome(format!("`{op}` is binary, called with one argument")));
    }
    Ok(op.value(x, 0.0))
}

pub fn eval_binary(op: Op, x1: f64, x2: f64) -> Result<f64> {
    if !op.is_binary() {
        return Err(Error::InvalidGenome(format!("`{op}` is unary, called with two arguments")));
    }
    Ok(op.value(x1, x2))
}

/// Partial derivatives, one per argument.
pub fn grad_op(op: Op, args: &[f64]) -> Result<Vec<f64>> {
    if args.len() != op.arity() {
        return Err(Error::InvalidGenome(format!(
            "`{op}` takes {} argument(s), got {}",
            op.arity(),
            args.len()
        )));
    }
    let p = op.partials(args[0], args.get(1).copied().unwrap_or(0.0));
    Ok(p[..op.arity()].to_vec())
}

/// Lookup by operation identifier, e.g. `"bessel_i0e"`.
pub fn op_by_name(name: &str) -> Result<Op> {
    name.parse()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn op_table_has_27_unary_and_7_binary() {
        assert_eq!(Op::unary().count(), 27);
        assert_eq!(Op::binary().count(), 7);
        for op in Op::ALL {
            assert_eq!(op.name().parse::<Op>().unwrap(), op);
        }
    }

    #[test]
    fn unknown_name_is_corrupt_genome() {
        assert!(matches!(op_by_name("arctan"), Err(Error::UnknownOp(_))));
    }

    #[test]
    fn arity_mismatch_is_rejected() {
        assert!(eval_unary(Op::Add, 1.0).is_err());
        assert!(eval_binary(Op::Sin, 1.0, 2.0).is_err());
        assert!(grad_op(Op::Mul, &[1.0]).is_err());
    }

    #[test]
    fn unary_examples() {
        assert_eq!(eval_unary(Op::Sigmoid, 0.0).unwrap(), 0.5);
        assert_eq!(eval_unary(Op::BesselI0, 0.0).unwrap(), 1.0);
        assert_eq!(eval_unary(Op::BesselI1, 0.0).unwrap(), 0.0);
        assert_eq!(eval_unary(Op::BesselI0e, 0.0).unwrap(), 1.0);
        assert!((eval_unary(Op::BesselI0, 1.0).unwrap() - 1.266_065_877_752_008_4).abs() < 1e-14);
        assert!((eval_unary(Op::Softplus, 0.0).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn binary_examples() {
        assert_eq!(eval_binary(Op::SafeDiv, 1.0, 0.0).unwrap(), 1.0 / EPS);
        assert_eq!(eval_binary(Op::ScaledDiv, 3.0, 0.0).unwrap(), 3.0);
        assert_eq!(eval_binary(Op::Max, -2.0, 5.0).unwrap(), 5.0);
        assert_eq!(eval_binary(Op::Min, -2.0, 5.0).unwrap(), -2.0);
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(grad_op(Op::Sigmoid, &[0.0]).unwrap(), vec![0.25]);
        assert_eq!(grad_op(Op::BesselI0, &[0.0]).unwrap(), vec![0.0]);
        assert_eq!(grad_op(Op::Square, &[3.0]).unwrap(), vec![6.0]);
        assert_eq!(grad_op(Op::Mul, &[2.0, 5.0]).unwrap(), vec![5.0, 2.0]);
    }

    #[test]
    fn guards_hold() {
        assert_eq!(Op::Arctanh.value(2.0, 0.0), ATANH_CLAMP.atanh());
        assert_eq!(Op::Arctanh.partials(2.0, 0.0)[0], 0.0);
        assert_eq!(Op::Sqrt.value(-4.0, 0.0), 2.0);
        assert_eq!(Op::Exp.value(1e3, 0.0), EXP_CLAMP.exp());
        assert_eq!(Op::Exp.partials(1e3, 0.0)[0], 0.0);
        assert_eq!(Op::Square.value(1e7, 0.0), SQUARE_CAP);
        assert_eq!(Op::Square.partials(1e7, 0.0)[0], 0.0);
        assert!(Op::Reciprocal.value(-EPS, 0.0).is_finite());
        assert!(Op::SafeDiv.value(1.0, -EPS).is_finite());
    }

    #[test]
    fn no_kernel_overflows_on_wide_range() {
        let mut xs: Vec<f64> = (-200..=200).map(|k| k as f64 * 5_000.0).collect();
        xs.extend([-1e6, 1e6, -EPS, 0.0, EPS, -1.0, 1.0, 1e-300, -1e-300, 699.9, 700.1]);
        for op in Op::ALL {
            for &a in &xs {
                for &b in &[-1e6, -EPS, 0.0, 0.5, 1e6] {
                    let v = op.value(a, b);
                    let g = op.partials(a, b);
                    assert!(v.is_finite(), "{op}({a},{b}) = {v}");
                    assert!(g.iter().all(|d| d.is_finite()), "{op}'({a},{b}) = {g:?}");
                }
            }
        }
    }
}
