//! Hardware-latency-aware neural architecture search.
//!
//! The pipeline: profile candidate operators on a device (or predict them with a learned cost
//! model) into a latency lookup table, train a supernet whose architecture parameters are
//! regularized by expected latency, derive a compact network, then retrain, evaluate and lint
//! it against accelerator design rules.
//!
//! Numeric code is generic over [`Scalar`] (`f32` / `f64`); the `*64` aliases below are what
//! the pipeline uses.

pub mod costmodel;
pub mod data;
pub mod graph;
pub mod latency;
pub mod lint;
pub mod nn;
pub mod profiler;
pub mod scalar;
pub mod search;
pub mod toy;

pub use scalar::Scalar;

pub type Tensor64 = nn::Tensor<f64>;
pub type Tensor32 = nn::Tensor<f32>;
pub type Parameter64 = nn::Parameter<f64>;
pub type ModuleInstance64 = nn::ModuleInstance<f64>;
pub type Sequential64 = nn::Sequential<f64>;
pub type SuperNetModel64 = search::SuperNetModel<f64>;
pub type ArchParams64 = search::ArchParams<f64>;
