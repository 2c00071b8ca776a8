//! Faithfulness evaluation for multimodal explainers.
//!
//! A model is treated as a cooperative game over the visual patches and text
//! tokens of one instance. The crate provides perturbation curves for each
//! modality, the synergy curves built from six joint and marginal bounds and
//! their scalar summary, exact pairwise Shapley interaction on small games
//! (including the macro-coalition game used as ground truth), and the rank
//! statistics and mixed model used to compare explainers across a corpus.
//!
//! The crate is `no_std` with `alloc`; the `std` feature only links the
//! standard library for downstream convenience.

#![no_std]
extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod corpus;
mod error;
pub mod game;
pub mod mask;
pub mod perturb;
pub mod shapley;
pub mod stats;
pub mod synergy;

pub use error::{Error, EvalError, Result};
