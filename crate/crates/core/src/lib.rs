//! Factored 4D scene geometry: per-view rays, ray depth, camera pose and a
//! shared metric scale, plus scene flow in several parameterizations, the
//! training losses over them, benchmark metrics, a synthetic scene generator
//! and an on-disk bundle format.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bundle;
pub mod cli;
pub mod convert;
pub mod error;
pub mod geom;
pub mod gradcheck;
pub mod grid;
pub mod loss;
pub mod metrics;
pub mod motion;
pub mod sequence;
pub mod synth;

pub use error::{Error, Result};
pub use geom::{Intrinsics, MetricScale, Pointmap, Pose, Quat, RayDepthMap, RayMap, SceneFlowField, Vec2, Vec3};
pub use grid::Grid;
pub use motion::{DopplerMap, OpticalFlowField};
pub use sequence::{MotionRepr, SceneSequence, SequenceKind, ViewBundle};
