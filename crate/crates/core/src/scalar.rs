//! Floating-point abstraction for the math core.

use num_traits::{Float, FloatConst, FromPrimitive};

/// Scalar the geometry and fit code is generic over.
///
/// `f32` matches the on-disk hit format and what a trigger-grade
/// implementation would use; `f64` is what the host pipeline and the test
/// oracles run at.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + Default
    + core::fmt::Debug
    + core::fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("scalar literal must be representable")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
