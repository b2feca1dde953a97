//! Ensembles of small convolutional networks trained jointly under pairwise
//! cooperation/diversity penalties, evaluated on few-shot episodes with
//! cosine mean-centroid classifiers, and distilled into a single network.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is a pure
//! function of its inputs and explicit random streams; file formats, the
//! command-line driver and thread pools live in the `coopens` crate.
//!
//! Module map:
//!
//! - [`tape`]: reverse-mode automatic differentiation over dense [`Tensor`]s,
//!   with [`gradcheck`] as the finite-difference verifier.
//! - [`data`]: procedural image corpora, class splits, augmentation, batching.
//! - [`models`]: the toy convolutional backbone and ensemble container.
//! - [`penalties`]: conditional non-ground-truth probabilities and the
//!   pairwise relationship functions.
//! - [`training`]: joint ensemble loss, Adam, plateau schedule, robust recipe.
//! - [`episodic`]: episode sampling, centroid classifiers, aggregation, reports.
//! - [`distill`]: temperature distillation of an ensemble into one network.

#![no_std]
// `!(x > 0.0)` is how parameter checks reject NaN; numeric loops index
// several parallel slices at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod distill;
pub mod episodic;
pub mod error;
pub mod gradcheck;
pub mod models;
pub mod penalties;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
