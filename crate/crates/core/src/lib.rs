//! Finite-scale laboratory for Pliss times, Folner empirical measures, Gibbs
//! volume bounds and entropy/exponent checks on a handful of model
//! diffeomorphisms with known ground truth.
//!
//! The linear-algebra kernels and the Pliss combinatorics are generic over the
//! scalar type; the dynamical models and everything built on orbits run in
//! `f64`.

use nalgebra as na;

pub mod cocycle;
pub mod entropy;
pub mod error;
pub mod folner;
pub mod geometry;
pub mod measures;
pub mod models;
pub mod pliss;
pub mod rng;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Scalar bound used by the generic kernels.
pub trait Real: na::RealField + Copy + num_traits::FromPrimitive + num_traits::ToPrimitive {}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` literal into the working scalar.
#[inline]
pub(crate) fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("scalar conversion")
}

pub type Mat64 = na::DMatrix<f64>;
pub type Mat32 = na::DMatrix<f32>;
pub type Frame64 = cocycle::Frame<f64>;
pub type Frame32 = cocycle::Frame<f32>;
pub type MeanErgodic64 = pliss::MeanErgodic<f64>;
pub type BiPliss64 = pliss::BiPliss;
