//! Bayesian inversion of AVO attributes for gas, oil and clay fields, with
//! FFT-based Gaussian random field priors, MARS and kernel-regression
//! surrogates for the rock-physics forward model, and MCMC samplers.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod fft2;
pub mod field;
pub mod grf;
pub mod io;
pub mod model;

pub use error::{Error, Result};
pub use field::{FieldVector, GridSpec};
pub use grf::{
    build_base, build_base_with, BaseOptions, CirculantBase, CorrelationKind, CorrelationSpec,
};
pub use model::{
    AvoObservation, ForwardJacobian, ForwardModel, LatentState, NoiseSpec, Prior, PriorConfig,
    PriorSpec, SyntheticForward,
};
pub mod diagnostics;
pub mod mars;
pub mod mcmc;
pub mod npkr;
