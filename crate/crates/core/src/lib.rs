//! Block-wise planar channel estimation for time-varying, frequency-selective
//! multiuser MIMO-OFDM uplinks.
//!
//! The pipeline splits each frame into `U × V` time-frequency sub-blocks,
//! fits a plane (mean, time slope, frequency slope) per user and antenna by
//! LMMSE from the pilot rows ([`bpcm`]), and optionally refines and
//! interpolates the result with a dilated 3D convolutional network
//! ([`drcn`]). Channel simulation, classical baselines, dataset and weight
//! files, and an NMSE benchmark harness are included.
//!
//! Numerics are generic over [`Real`] (`f32` or `f64`); the `*64` aliases
//! below fix the scalar to `f64`.

pub mod baselines;
pub mod bpcm;
pub mod channel;
pub mod dataset_io;
pub mod drcn;
pub mod error;
pub mod evaluation;
pub mod frame;
pub mod linalg;
pub mod scalar;
pub mod system;

pub use bpcm::{BpcmEstimator, PlanarCoefficients, PriorSpec, PriorTable};
pub use channel::{ChannelRealization, PathParams, ProfileSpec};
pub use error::{ConfigError, Error, Result, Violation};
pub use frame::{FrameConfig, PilotBook, SubBlockIndex};
pub use scalar::{Cx, Real};
pub use system::{RxFrame, RxSubBlock};

pub type C64 = Cx<f64>;
pub type C32 = Cx<f32>;
pub type PilotBook64 = PilotBook<f64>;
pub type ChannelRealization64 = ChannelRealization<f64>;
pub type RxFrame64 = RxFrame<f64>;
pub type PriorTable64 = PriorTable<f64>;
pub type BpcmEstimator64 = BpcmEstimator<f64>;
pub type Network32 = drcn::Network<f32>;
pub type Network64 = drcn::Network<f64>;
