//! Scalar kernels of the search space and information-theoretic references.
//!
//! All kernels are pure functions. Inputs outside an operation's safe domain are
//! clamped (exp/sinh to ±60, arctanh to ±(1−1e-6), I0/I1 to ±700, x² capped at
//! 1e12, √x read as √|x|) and derivatives are zero on clamped regions.

pub mod bessel;
pub mod info;
pub mod ops;

pub use info::{cross_entropy, entropy, kl};
pub use ops::{eval_binary, eval_unary, grad_op, op_by_name, Op, EPS};
