//! Registration of oriented point sets (2D contours, 3D surfaces) by
//! minimizing the L2 distance between kernel density estimates built from
//! Gaussian position kernels and von Mises-Fisher direction kernels.

// `!(x > 0.0)` is the idiom here for rejecting NaN along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod correspond;
pub mod costs;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod kernels;
pub mod normals;
pub mod optimize;
pub mod par;
pub mod transforms;

pub use error::{Error, Result};
pub use geometry::{Connectivity, OrientedPointSet, Vec3};
pub use kernels::KernelParams;
pub use transforms::{NormalMode, Transform, TransformFamily};
