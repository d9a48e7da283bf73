//! Learning curves for multi-task Gaussian process regression.
//!
//! The covariance between task functions is assumed to factorise as
//! `<f_s(x) f_t(x')> = D_st C(x, x')`, with `D` a free-form inter-task
//! covariance matrix and `C` a unit-variance kernel on one-dimensional
//! inputs. The crate provides
//!
//! * [`spectra`]: eigenvalues of `C` with respect to the input density
//!   (closed forms and a Nyström discretisation),
//! * [`solver`]: the coupled self-consistency equations for the average
//!   Bayes errors of all tasks, and learning curves built from them,
//! * [`asymptotics`]: large-`n` forms, the multi-task gain, pure-transfer
//!   limits and the many-task function `g_T`,
//! * [`simulator`]: a Monte-Carlo estimate of the Bayes error obtained by
//!   averaging the exact GP posterior variance over sampled data sets,
//! * [`harness`]: scenario configs, CSV output and the `mtgp` CLI.
//!
//! All numerical code is generic over a [`Real`] scalar (`f32` or `f64`);
//! the `*64` aliases below fix it to `f64`, which is what the harness uses.

// `!(x > 0)` is used on purpose so that NaN is rejected along with the
// out-of-range values; index loops mirror the matrix formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod asymptotics;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod linalg;
pub mod quadrature;
pub mod rng;
pub mod simulator;
pub mod solver;
pub mod spectra;

use std::fmt;

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

pub use error::{Error, Result};
pub use kernel::{Covariance, DegenerateKernel, InputDist, KernelKind, KernelSpec};
pub use solver::{BayesErrors, SolverOptions, TaskSetup};
pub use spectra::{KernelSpectrum, Smoothness};

/// Scalar type the numerical code is generic over.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + fmt::Display + fmt::LowerExp + Send + Sync + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` literal into the working scalar.
#[inline]
pub(crate) fn lit<S: Real>(x: f64) -> S {
    S::from_f64(x).expect("f64 literal representable in scalar type")
}

#[inline]
pub(crate) fn to_f64<S: Real>(x: S) -> f64 {
    x.to_f64().expect("scalar convertible to f64")
}

pub type KernelSpec64 = KernelSpec<f64>;
pub type InputDist64 = InputDist<f64>;
pub type KernelSpectrum64 = KernelSpectrum<f64>;
pub type TaskSetup64 = TaskSetup<f64>;
pub type BayesErrors64 = BayesErrors<f64>;
pub type SolverOptions64 = SolverOptions<f64>;
pub type GainReport64 = asymptotics::GainReport<f64>;
pub type SimEstimate64 = simulator::SimEstimate<f64>;
pub type Dataset64 = simulator::Dataset<f64>;

pub type KernelSpec32 = KernelSpec<f32>;
pub type InputDist32 = InputDist<f32>;
pub type KernelSpectrum32 = KernelSpectrum<f32>;
pub type TaskSetup32 = TaskSetup<f32>;
pub type BayesErrors32 = BayesErrors<f32>;
