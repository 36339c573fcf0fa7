//! Learning with noisy labels on synthetic data: GMM loss partitioning,
//! virtual outliers sampled inside the feature envelope, energy
//! regularization, semi-supervised co-training and energy-score OOD metrics.
//!
//! The numeric core is generic over [`Scalar`] (`f32`/`f64`); data and the
//! experiment harness run in `f64`.

pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod harness;
pub mod nn;
pub mod objective;
pub mod partition;
pub mod scalar;
pub mod ssl;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Network = nn::DenseNet<f64>;
pub type Network32 = nn::DenseNet<f32>;
pub type Gradients = nn::GradientBundle<f64>;
pub type Envelope = geometry::Envelope<f64>;
pub type Centroids = geometry::CentroidSet<f64>;
pub type ScoreSet = eval::OodScoreSet<f64>;
