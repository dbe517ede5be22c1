//! Shared-feature video filtering for edge nodes.
//!
//! One base network runs per frame and exposes its intermediate activations
//! ("taps"). Any number of small per-application microclassifiers read those
//! taps, optionally cropped, and emit a relevance probability per frame.
//! Per-frame verdicts are smoothed into events, and the crate carries the
//! evaluation metrics and multiply-add cost model used to compare the
//! approach against per-task pixel classifiers.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and the
//! benchmark harness live in `filterforward-harness`.

#![no_std]
#![deny(rust_2018_idioms)]

#[cfg(test)]
extern crate std;

extern crate alloc;

pub mod base;
pub mod baseline;
pub mod cost;
pub mod error;
pub mod events;
pub mod grad;
pub mod metrics;
pub mod microclassifier;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
