//! Discrete elastic rod dynamics and input synthesis for segmented soft arms,
//! with a constant-curvature baseline for comparison.

// `!(x > 0.0)` is used on purpose so that NaN fails validation too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod actuation;
pub mod elastic;
pub mod error;
pub mod geometry;
pub mod kinematics;
pub mod pcc;
pub mod registry;
pub mod scenario;
pub mod sim;
pub mod trajgen;
pub mod verify;
