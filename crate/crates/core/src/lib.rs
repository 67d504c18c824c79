//! Object-level semantic mapping from monocular semantic observations.
//!
//! The crate estimates camera poses and per-instance object poses and shapes
//! by minimizing discrepancies between projected mesh models and observed
//! segmentation masks and semantic keypoints. Projection models are
//! differentiable: keypoint Jacobians are analytic, silhouette gradients use
//! an approximate screen-space backward pass through the rasterizer.
//!
//! Modules:
//! - [`liegroup`]: axis-angle rotations, exp/log maps, right Jacobian, poses.
//! - [`mesh`]: triangle meshes, keypoint selection, curvature regularizer,
//!   mirror symmetry, voxelization, OBJ I/O.
//! - [`camera`]: intrinsics, perspective projection, keypoint Jacobians.
//! - [`raster`]: silhouette rasterization with z-buffer and backward pass.
//! - [`losses`]: mask/keypoint losses, their gradients, the joint objective.
//! - [`assoc`]: semantic observations and temporal instance tracking.
//! - [`estimator`]: triangulation, rigid alignment, pose/shape optimization.
//! - [`sim`]: synthetic scenes, observation synthesis, odometry, metrics.
//! - [`gradcheck`]: finite-difference verification suites.

pub mod assoc;
pub mod camera;
pub mod estimator;
pub mod gradcheck;
pub mod liegroup;
pub mod losses;
pub mod mesh;
pub mod raster;
pub mod sim;
