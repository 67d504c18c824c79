//! Object and camera state estimation: keypoint triangulation, rigid
//! alignment for pose initialization, and the gradient-descent stages that
//! refine object pose, object shape, and camera pose against semantic
//! observations.

mod kabsch;
mod optimize;
mod triangulate;

pub use kabsch::kabsch_align;
pub use optimize::{
    optimize_camera_pose, optimize_object, optimize_object_pose,
    optimize_object_shape, CameraOptResult, OptimTrace,
};
pub use triangulate::{triangulate_keypoints, TriangulatedKeypoint};

use crate::assoc::Track;
use crate::camera::CameraIntrinsics;
use crate::liegroup::Pose;
use crate::losses::{LossError, LossWeights};
use crate::mesh::{KeypointAssociation, MeshError, TriMesh};
use nalgebra::Vector2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("initialization needs at least {needed} triangulated keypoints, got {valid}")]
    InsufficientKeypoints { valid: usize, needed: usize },
    #[error("degenerate geometry: {reason}")]
    DegenerateGeometry { reason: String },
    #[error("optimization diverged at iteration {iteration}: loss is not finite")]
    Diverged { iteration: usize },
    #[error(
        "mesh degenerated during shape optimization ({fraction:.1}% near-zero-area faces) \
         despite regularizer increase"
    )]
    MeshDegenerate { fraction: f64 },
    #[error("track observation references frame {frame}, but only {cameras} cameras are known")]
    UnknownFrame { frame: usize, cameras: usize },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Estimated state of one object instance: pose, deformable mesh copy of
/// the category mean model, and the keypoint selection. Mesh connectivity
/// is fixed for the lifetime of the state.
#[derive(Debug, Clone)]
pub struct ObjectState {
    pub pose: Pose,
    pub mesh: TriMesh,
    pub assoc: KeypointAssociation,
    pub class: u32,
}

/// Hyperparameters of the optimization stages. The defaults are artifact
/// choices; none of them is calibrated to any external dataset.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    /// Initial line-search step for the object pose stage.
    pub pose_step: f64,
    /// Initial line-search step for the shape stage.
    pub shape_step: f64,
    /// Initial line-search step for camera pose refinement.
    pub camera_step: f64,
    pub pose_iterations: usize,
    pub shape_iterations: usize,
    pub camera_iterations: usize,
    pub weights: LossWeights,
    /// Curvature regularizer weight in the shape stage.
    pub curvature_weight: f64,
    /// Relative loss-change threshold treated as converged.
    pub convergence_tol: f64,
    /// Keypoint confidence gate for initialization measurements.
    pub q_min: f64,
    /// Pose/shape rounds in [`optimize_object`].
    pub alternations: usize,
    /// Keep the mesh mirror-symmetric during shape optimization.
    pub enforce_symmetry: bool,
    /// Rays closer to parallel than this make a keypoint untriangulatable.
    pub min_triangulation_angle_deg: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            pose_step: 1.0,
            shape_step: 0.25,
            camera_step: 1.0,
            pose_iterations: 100,
            shape_iterations: 300,
            camera_iterations: 30,
            weights: LossWeights::default(),
            curvature_weight: 0.1,
            convergence_tol: 1e-10,
            q_min: 0.5,
            alternations: 1,
            enforce_symmetry: true,
            min_triangulation_angle_deg: 1.0,
        }
    }
}

/// Initializes an object state from a finished track: triangulates its
/// high-quality keypoints, then rigidly aligns the category-model keypoints
/// to the triangulated ones. The mesh starts as a copy of the mean model.
pub fn init_object(
    track: &Track,
    mean_mesh: &TriMesh,
    mean_assoc: &KeypointAssociation,
    cameras: &[Pose],
    intrinsics: &CameraIntrinsics,
    config: &OptimConfig,
) -> Result<ObjectState, EstimatorError> {
    let per_keypoint = track.high_quality_measurements(config.q_min);
    for measurements in &per_keypoint {
        for (frame, _) in measurements {
            if *frame >= cameras.len() {
                return Err(EstimatorError::UnknownFrame {
                    frame: *frame,
                    cameras: cameras.len(),
                });
            }
        }
    }
    let observations: Vec<Vec<(usize, Vector2<f64>)>> = per_keypoint;
    let triangulated = triangulate_keypoints(
        &observations,
        cameras,
        intrinsics,
        config.min_triangulation_angle_deg.to_radians(),
    );

    let model_kps = mean_assoc.keypoints(mean_mesh);
    let mut src = Vec::new();
    let mut dst = Vec::new();
    for (k, t) in triangulated.iter().enumerate() {
        if t.valid && k < model_kps.len() {
            src.push(model_kps[k]);
            dst.push(t.position);
        }
    }
    if src.len() < 3 {
        return Err(EstimatorError::InsufficientKeypoints { valid: src.len(), needed: 3 });
    }
    let pose = kabsch_align(&src, &dst)?;
    Ok(ObjectState {
        pose,
        mesh: mean_mesh.clone(),
        assoc: mean_assoc.clone(),
        class: track.class,
    })
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::camera::{transform_to_camera, EPS_DEPTH};
    use crate::liegroup::AxisAngle;
    use crate::raster::{rasterize_silhouette, vertex_visibility, MaskImage};
    use nalgebra::Vector3;

    /// Renders ground-truth mask and keypoints of `state` from `camera`.
    pub fn synthesize(
        camera: &Pose,
        mesh: &TriMesh,
        assoc: &KeypointAssociation,
        pose: &Pose,
        k: &CameraIntrinsics,
        w: usize,
        h: usize,
    ) -> (MaskImage, Vec<Vector2<f64>>, Vec<bool>) {
        let vertices_cam = transform_to_camera(camera, pose, &mesh.vertices);
        let (mask, state) = rasterize_silhouette(&vertices_cam, &mesh.faces, k, w, h).unwrap();
        let vis = vertex_visibility(&state, assoc.vertex_indices());
        let mut kps = Vec::new();
        let mut valid = Vec::new();
        for (i, &vi) in assoc.vertex_indices().iter().enumerate() {
            let p = vertices_cam[vi];
            if p.z > EPS_DEPTH {
                kps.push(Vector2::new(
                    k.fu() * p.x / p.z + k.skew() * p.y / p.z + k.c_u,
                    k.fv() * p.y / p.z + k.c_v,
                ));
                valid.push(vis[i]);
            } else {
                kps.push(Vector2::zeros());
                valid.push(false);
            }
        }
        (mask, kps, valid)
    }

    /// A ring of cameras looking at the world origin from distance `dist`.
    pub fn camera_ring(count: usize, dist: f64, height: f64) -> Vec<Pose> {
        (0..count)
            .map(|i| {
                let a = i as f64 / count as f64 * std::f64::consts::TAU;
                look_at(
                    Vector3::new(dist * a.cos(), dist * a.sin(), height),
                    Vector3::zeros(),
                )
            })
            .collect()
    }

    /// Camera pose at `eye` with the optical axis toward `target`.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> Pose {
        crate::sim::look_at(eye, target)
    }

    pub fn rotation_error(a: &Pose, b: &Pose) -> f64 {
        let ra = a.rotation_matrix();
        let rb = b.rotation_matrix();
        let rel = &ra.transpose() * &rb;
        crate::liegroup::so3_log(&rel).angle()
    }

}
