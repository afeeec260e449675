//! Scalar abstraction for the numeric core.
//!
//! All math in this crate is generic over [`Real`], so the same code runs in
//! f32 or f64. The acceptance tolerances assume f64; the f32 instantiation is
//! provided for cheap forward-only experimentation.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar usable by tensors, losses and geometry.
pub trait Real: Float + FromPrimitive + Debug + Display + Send + Sync + 'static {}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an f64 literal into the active scalar type.
///
/// Panics only if the literal is not representable, which for the constants
/// used in this crate cannot happen.
pub fn lit<S: Real>(v: f64) -> S {
    S::from_f64(v).expect("literal representable in scalar type")
}
