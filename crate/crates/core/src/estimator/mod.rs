//! A small end-to-end trainable landmark estimator.
//!
//! A convolutional backbone regresses the 11 camera parameters and the TPS
//! parameters; the warped mean shape is projected to give initial
//! landmarks, which per-landmark offset heads then refine from bilinearly
//! sampled features. Trained on synthetic renders of the mean face.

pub mod checkpoint;
pub mod config;
pub mod model;
pub mod net;
pub mod synth;
pub mod train;

pub use config::EstimatorConfig;
pub use model::{Forward, Losses, Model};
pub use synth::{synth_generate, TrainSample};
pub use train::{train, TrainLog, TrainRecord};

/// Scalar type of network parameters and activations. Geometry always runs
/// in `f64`.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;
