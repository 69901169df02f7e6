//! Pruned contextual inside-outside (CIO) layers for recursive composition
//! augmented Transformers.
//!
//! The crate is `no_std` (it needs `alloc`) and holds every algorithmic piece:
//! a small reverse-mode tensor backend, chart data structures, the top-down
//! split parser with its pruning scheduler, the CIO stack, the full model with
//! masked-language-model pretraining, and grammar-induction metrics together
//! with the cubic brute-force oracle used to validate the pruned engine.
//! File formats, the CLI and threading live in the companion `recat` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod chart;
pub mod cio;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod pruner;
pub mod train;
pub mod tree;

pub use error::{Error, Result};
pub use numerics::{DType, Real, Tensor};
