//! Correspondence-free registration of 3D point sets against 2D
//! projections.
//!
//! Given a 3D source cloud, a 2D target cloud, and camera intrinsics, the
//! solvers in this crate estimate the rigid pose whose pinhole projection
//! best overlays the targets, without known point correspondences. The
//! main solver maximizes a Gaussian-kernel correspondence mass with a
//! coarse-to-fine width schedule; a closest-point Euclidean baseline and an
//! alternating full-set/subset refinement are built on the same machinery.

pub mod dynaweight;
pub mod error;
pub mod liegeo;
pub mod metrics;
pub mod objectives;
pub mod points;
pub mod solvers;
pub mod spatial;
pub mod synthlab;

pub use error::{Error, Result};
pub use liegeo::{CameraIntrinsics, Pose, Twist};
pub use points::{PointSet2D, PointSet3D};
