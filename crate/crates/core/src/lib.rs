//! Predicting single-event-upset fault-simulation outcomes with
//! spatio-temporal graph neural networks.
//!
//! The pipeline runs netlist → golden simulation and SEU campaign → VCD
//! features → flip-flop graph → dataset → model training and evaluation.
//! Numeric code is generic over [`Scalar`] (`f32` for training, `f64` for
//! gradient checks); the aliases below fix the common instantiations.

pub mod bits;
pub mod dataset;
pub mod faultsim;
pub mod graphgen;
pub mod models;
pub mod netlist;
pub mod nn;
pub mod trainer;
pub mod waveform;
mod scalar;

pub use scalar::Scalar;

pub type Tensor32 = nn::Tensor<f32>;
pub type Tensor64 = nn::Tensor<f64>;
pub type FeatureTensor32 = waveform::FeatureTensor<f32>;
pub type ParamStore32 = nn::ParamStore<f32>;
pub type Model32 = models::Model<f32>;
