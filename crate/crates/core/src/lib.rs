//! Sparse neural-network training with gradient-based connection growth and
//! magnitude-based pruning.
//!
//! Two reference classifiers are provided: a stack of sparsely connected
//! (SC) layers over a flattened sensor window, and a recurrent classifier
//! built from one hidden-layer LSTM cell over a per-step encoding.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datapipe;
pub mod error;
pub mod growprune;
pub mod metrics;
pub mod model;
pub mod modelfile;
pub mod numerics;

pub use error::{Error, Result};
