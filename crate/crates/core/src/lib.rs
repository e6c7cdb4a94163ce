//! Motion-to-emotion classification from 3D skeleton keypoints and per-frame
//! scene context.
//!
//! Keypoint clips become movement vectors ([`motion`]), per-frame encoder
//! maps become context tokens ([`context`]), and a transformer whose motion
//! tokens attend over the context tokens ([`model`]) yields a distribution
//! over six emotions. Everything numeric is generic over [`Scalar`] (`f32` or
//! `f64`) and differentiated by the tape in [`autodiff`].

pub mod ablation;
pub mod autodiff;
pub mod config;
pub mod context;
pub mod data;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod motion;
pub mod nn;
pub mod optim;
pub mod params;
pub mod run;
pub mod scalar;
pub mod seed;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type Tape64 = autodiff::Tape<f64>;
/// Network trained in single precision.
pub type Net32 = model::MoEmoNet<f32>;
/// Network in double precision, used for gradient checks.
pub type Net64 = model::MoEmoNet<f64>;
