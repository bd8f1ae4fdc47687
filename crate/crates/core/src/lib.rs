//! Core library for depth-by-poking style self-supervised depth estimation.
//!
//! Everything in this crate is pure computation on in-memory buffers:
//! a small dense-tensor library with reverse-mode automatic differentiation,
//! the dual-encoder depth/variance network, its training objectives, a
//! procedural grasp simulator that produces single-pixel depth labels,
//! dataset splitting/batching, classical sensor baselines, and the
//! evaluation metrics (RMSE, histograms, studentized residuals, Q-Q
//! points, discard curves).
//!
//! File formats, the training loop, and the CLI live in the companion
//! `dbp` crate. This crate is `no_std`-compatible (with `alloc`); disable
//! default features to drop `std`.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod baseline;
pub mod data;
pub mod error;
pub mod graph;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod sim;
pub mod tensor;

pub use error::Error;
pub use graph::{Graph, TensorId};
pub use scalar::Scalar;
pub use tensor::Tensor;
