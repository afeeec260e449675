//! Balanced-learning primitives for detector training experiments:
//! IoU-balanced sampling, a balanced feature pyramid with an
//! embedded-Gaussian non-local refinement, and the balanced L1 loss family,
//! all with analytic gradients and a finite-difference checker.
//!
//! The numeric core is generic over the scalar type (see [`scalar::Real`]);
//! the aliases below pin the common instantiations. Everything is plain
//! CPU code with deterministic, seed-driven randomness.

pub mod boxes;
pub mod error;
pub mod loss;
pub mod pyramid;
pub mod sampler;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};

/// f64 tensor, the instantiation the gradient-check tolerances assume.
pub type Tensor64 = tensor::Tensor<f64>;
/// f32 tensor for forward-only experimentation.
pub type Tensor32 = tensor::Tensor<f32>;
pub type Box2D64 = boxes::Box2D<f64>;
pub type Candidate64 = boxes::Candidate<f64>;
pub type AssignConfig64 = boxes::AssignConfig<f64>;
pub type SamplerConfig64 = sampler::SamplerConfig<f64>;
pub type BalancedL1Params64 = loss::BalancedL1Params<f64>;
pub type PyramidLevels64 = pyramid::PyramidLevels<f64>;
pub type NonLocalWeights64 = pyramid::NonLocalWeights<f64>;
