//! Channel estimation for hybrid mmWave/THz UM-MIMO.
//!
//! The pipeline: synthetic wideband channels ([`channel`]), compressed
//! hybrid-beamforming measurements ([`measurement`]), coarse sparse recovery
//! ([`recovery`]), a from-scratch CNN refiner ([`nn`]), BN-scale channel
//! pruning of that refiner ([`slimming`]) and the experiment driver
//! ([`harness`]).
//!
//! Numeric code is generic over [`Real`]; the aliases below fix the scalar
//! for the common cases.

pub mod channel;
pub mod error;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod measurement;
pub mod nn;
pub mod recovery;
pub mod scalar;
pub mod slimming;

pub use error::{Error, Result};
pub use scalar::Real;

pub type C64 = num_complex::Complex<f64>;
pub type CMatrix64 = linalg::CMatrix<f64>;
pub type CMatrix32 = linalg::CMatrix<f32>;
pub type Tensor32 = nn::Tensor4<f32>;
pub type Tensor64 = nn::Tensor4<f64>;
pub type Network32 = nn::Network<f32>;
pub type Network64 = nn::Network<f64>;
