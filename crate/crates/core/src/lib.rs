//! Loss-function search over expression-graph genomes.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: the unary/binary operation kernels with analytic derivatives,
//!   modified Bessel functions, and entropy/KL/cross-entropy reference functions.
//! - [`genome`]: loss genomes as fixed-length DAGs of hidden state nodes over the
//!   inputs `y` and `ŷ`, with mutation, evaluation, reverse-mode gradients and a
//!   versioned text format.
//! - [`data`], [`augment`], [`trainer`]: desk-scale datasets, the five
//!   augmentation pipelines, and surrogate training that scores a genome.
//! - [`evolution`]: regularized (aging) evolution and the staged elimination protocol.
//! - [`analysis`]: Kendall tau-b, correlation matrices, best-k intersections and
//!   average-linkage clustering.
//! - [`losses`]: the built-in discovered losses and their phenotypes.
//!
//! Batch-level work (pool evaluation, sweeps, clustering) goes through [`par`],
//! which runs on rayon when the `parallel` feature is enabled and sequentially
//! otherwise. Results are identical either way.

pub mod analysis;
pub mod augment;
pub mod data;
pub mod error;
pub mod evolution;
pub mod genome;
pub mod losses;
pub mod numerics;
pub mod par;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
