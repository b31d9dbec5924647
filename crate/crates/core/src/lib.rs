//! Toy event filter for a four-layer cylindrical pixel tracker around a
//! stopping target.
//!
//! The crate covers the full round trip needed to exercise the filter at
//! desk scale:
//!
//! * [`toygen`] produces detector frames (signal three-track decays plus
//!   background positrons and noise) with truth records,
//! * [`framestore`] packs frames into fixed-size binary chunks,
//! * [`cuts`], [`triplet_fit`] and [`vertex`] are the three filter stages,
//! * [`pipeline`] composes the stages and runs chunks through a worker pool,
//! * [`tune`] derives cut thresholds from truth-labelled runs,
//! * [`config`] holds the run configuration file format.
//!
//! All geometry and fit math is generic over the floating-point scalar via
//! [`Scalar`]; the pipeline itself runs at `f64` while hits are stored as
//! `f32` on disk.

// Guards are written `!(x > y)` rather than `x <= y` so that NaN fails
// closed; the `partial_cmp` spelling clippy prefers says the same thing in
// three lines.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod cuts;
pub mod framestore;
pub mod geometry;
pub mod metrics;
pub mod pipeline;
pub mod scalar;
pub mod toygen;
pub mod triplet_fit;
pub mod tune;
pub mod vertex;

pub use scalar::Scalar;

/// Scalar type the pipeline stages run at.
pub type Real = f64;

pub type Vec2f = geometry::Vec2<f32>;
pub type Vec3f = geometry::Vec3<f32>;
pub type Vec2d = geometry::Vec2<f64>;
pub type Vec3d = geometry::Vec3<f64>;
