//! Multi-fidelity Gaussian process inference for linear integro-differential
//! equations `L u = f`.
//!
//! A squared-exponential prior on the solution `u` is pushed through the linear
//! operator `L` to obtain a prior on the forcing `f`. Conditioning the joint
//! process on noisy forcing data of two fidelities plus a few anchor
//! observations of `u` yields a posterior over the solution.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, configuration and the
//! command line live in the companion `mfgp` crate.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`kernels`] | squared-exponential ARD kernel and its log-parameter gradient |
//! | [`operators`] | operator catalog, closed-form operator kernels, numeric oracle |
//! | [`model`] | block covariance, NLML and gradient, L-BFGS training |
//! | [`posterior`] | predictions for `u` and `f`, max-variance active learning |
//! | [`benchmarks`] | reference problems, data generation, error metrics |
#![cfg_attr(not(any(feature = "std", test)), no_std)]
#![deny(unsafe_code)]
// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod benchmarks;
mod ddouble;
mod error;
pub mod kernels;
pub mod linalg;
pub mod model;
pub mod operators;
pub mod optim;
pub mod posterior;
pub mod quadrature;
mod rng;

pub use error::{Error, Result};
pub use kernels::KernelParams;
pub use model::{HyperParams, MultiFidelityDataset, TrainConfig, TrainedModel};
pub use operators::{LinearOperatorSpec, QuadratureSpec};
pub use posterior::PosteriorPrediction;
