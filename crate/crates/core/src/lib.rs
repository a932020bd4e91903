//! Numeric core for single-source domain generalization with ensembles.
//!
//! A small CNN engine with hand-written backward passes, an augmentation pool,
//! classical raw-pixel learners and the fusion strategies that combine them.
//! Needs only `alloc`; enable the `std` feature for SIMD GEMM dispatch.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod augment;
pub mod classical;
pub mod data;
pub mod ensemble;
mod error;
pub mod gradcheck;
pub mod nn;
pub mod ops;
pub mod rng;
mod tensor;

pub use error::{Error, Result};
pub use tensor::{LayerGrads, Tensor};
