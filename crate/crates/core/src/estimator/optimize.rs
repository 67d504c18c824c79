//! Gradient-descent stages over the joint mask/keypoint objective, with
//! Armijo backtracking line search (c = 1e-4, shrink 0.5) so every stage
//! produces a monotone loss trace.

use super::{EstimatorError, ObjectState, OptimConfig};
use crate::assoc::SemanticObservation;
use crate::camera::CameraIntrinsics;
use crate::liegroup::{pose_compose, AxisAngle, Pose};
use crate::losses::{
    compute_visibilities, total_objective, GradientRequest, LossWeights, ObjectModel,
    ObservationTerm,
};
use crate::mesh::{curvature_energy, symmetrize_gradient, SymmetryMap, TriMesh};
use nalgebra::Vector3;

const ARMIJO_C: f64 = 1e-4;
const SHRINK: f64 = 0.5;
const MIN_STEP: f64 = 1e-12;

/// Loss history of one optimization stage; `loss[0]` is the starting value
/// and each following entry is the loss after an accepted step.
#[derive(Debug, Clone, Default)]
pub struct OptimTrace {
    pub loss: Vec<f64>,
    pub accepted_steps: Vec<f64>,
    pub warnings: Vec<String>,
}

impl OptimTrace {
    pub fn initial_loss(&self) -> f64 {
        *self.loss.first().unwrap_or(&f64::NAN)
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss.last().unwrap_or(&f64::NAN)
    }
}

fn terms_of<'a>(
    frames: &'a [(usize, &'a SemanticObservation)],
    object: usize,
) -> Vec<ObservationTerm<'a>> {
    frames
        .iter()
        .map(|(camera, obs)| ObservationTerm {
            camera: *camera,
            object,
            mask: &obs.mask,
            keypoints: &obs.keypoints,
            keypoint_valid: &obs.keypoint_valid,
        })
        .collect()
}

/// Backtracking line search: returns `(step, new_loss)` for the first step
/// satisfying the Armijo condition, or None when no step down to the
/// minimum works. Infinite trial losses (candidates voided by the fixed
/// visibility) are rejected like any insufficient step; NaN is divergence.
fn backtrack(
    f0: f64,
    g2: f64,
    start: f64,
    mut eval: impl FnMut(f64) -> Result<f64, EstimatorError>,
    iteration: usize,
) -> Result<Option<(f64, f64)>, EstimatorError> {
    let mut step = start;
    while step >= MIN_STEP {
        let f = eval(step)?;
        if f.is_nan() {
            return Err(EstimatorError::Diverged { iteration });
        }
        if f <= f0 - ARMIJO_C * step * g2 {
            return Ok(Some((step, f)));
        }
        step *= SHRINK;
    }
    Ok(None)
}

/// Refines the object pose (rotation and translation) against the combined
/// mask and keypoint loss over the given frames, mesh held fixed.
pub fn optimize_object_pose(
    state: &mut ObjectState,
    frames: &[(usize, &SemanticObservation)],
    cameras: &[Pose],
    intrinsics: &CameraIntrinsics,
    config: &OptimConfig,
) -> Result<OptimTrace, EstimatorError> {
    let terms = terms_of(frames, 0);
    let grad_request = GradientRequest { object_poses: true, ..Default::default() };
    let mut trace = OptimTrace::default();
    let mut warm = config.pose_step;

    for iteration in 0..config.pose_iterations {
        let model = ObjectModel { pose: state.pose, mesh: &state.mesh, assoc: &state.assoc };
        // Visibility frozen for this iteration: trial steps cannot shed
        // residuals by hiding keypoints.
        let vis =
            compute_visibilities(cameras, std::slice::from_ref(&model), &terms, intrinsics)?;
        let value = total_objective(
            cameras,
            std::slice::from_ref(&model),
            &terms,
            intrinsics,
            &config.weights,
            &grad_request,
            Some(&vis),
        )?;
        if !value.total.is_finite() {
            return Err(EstimatorError::Diverged { iteration });
        }
        if trace.loss.is_empty() {
            trace.loss.push(value.total);
        }
        let f0 = value.total;
        let g = &value.gradients.object_poses[0];
        let g2 = g.rotation.norm_squared() + g.translation.norm_squared();
        if g2 < 1e-24 {
            break;
        }
        let candidate_pose = |step: f64| {
            Pose::new(
                AxisAngle(state.pose.rotation.0 - step * g.rotation),
                state.pose.translation - step * g.translation,
            )
        };
        let accepted = backtrack(
            f0,
            g2,
            warm.max(config.pose_step),
            |step| {
                let cand = ObjectModel {
                    pose: candidate_pose(step),
                    mesh: &state.mesh,
                    assoc: &state.assoc,
                };
                Ok(total_objective(
                    cameras,
                    std::slice::from_ref(&cand),
                    &terms,
                    intrinsics,
                    &config.weights,
                    &GradientRequest::default(),
                    Some(&vis),
                )?
                .total)
            },
            iteration,
        )?;
        let Some((step, f)) = accepted else {
            break;
        };
        state.pose = candidate_pose(step);
        trace.loss.push(f);
        trace.accepted_steps.push(step);
        warm = (step * 2.0).clamp(MIN_STEP, config.pose_step * 1024.0);
        if (f0 - f) <= config.convergence_tol * f0.abs().max(1e-12) {
            break;
        }
    }
    Ok(trace)
}

/// Deforms the mesh vertices against the mask loss plus the curvature
/// regularizer, pose held fixed. Topology is untouched; when symmetry is
/// enforced, the gradient is projected so every step preserves the mirror
/// constraint exactly. A collapse guard watches the fraction of
/// near-zero-area faces: the first violation raises the regularizer weight
/// tenfold, a second aborts.
pub fn optimize_object_shape(
    state: &mut ObjectState,
    frames: &[(usize, &SemanticObservation)],
    cameras: &[Pose],
    intrinsics: &CameraIntrinsics,
    config: &OptimConfig,
) -> Result<OptimTrace, EstimatorError> {
    let terms = terms_of(frames, 0);
    let weights = LossWeights { w_mask: config.weights.w_mask, w_kps: 0.0 };
    let grad_request = GradientRequest { object_vertices: true, ..Default::default() };
    let symmetry = if config.enforce_symmetry {
        Some(SymmetryMap::detect(&state.mesh, 1e-9)?)
    } else {
        None
    };
    let area_floor = 1e-6 * mean_face_area(&state.mesh);
    let neighbors = state.mesh.vertex_neighbors();
    let mut lambda = config.curvature_weight;
    let mut lambda_boosted = false;
    let mut trace = OptimTrace::default();
    let mut warm = config.shape_step;

    let eval_loss = |mesh: &TriMesh, lambda: f64| -> Result<f64, EstimatorError> {
        let model = ObjectModel { pose: state.pose, mesh, assoc: &state.assoc };
        let value = total_objective(
            cameras,
            std::slice::from_ref(&model),
            &terms,
            intrinsics,
            &weights,
            &GradientRequest::default(),
            None,
        )?;
        Ok(value.total + lambda * curvature_energy(mesh)?.0)
    };

    for iteration in 0..config.shape_iterations {
        let model = ObjectModel { pose: state.pose, mesh: &state.mesh, assoc: &state.assoc };
        let value = total_objective(
            cameras,
            std::slice::from_ref(&model),
            &terms,
            intrinsics,
            &weights,
            &grad_request,
            None,
        )?;
        let (energy, curv_grad) = curvature_energy(&state.mesh)?;
        let f0 = value.total + lambda * energy;
        if !f0.is_finite() {
            return Err(EstimatorError::Diverged { iteration });
        }
        if trace.loss.is_empty() {
            trace.loss.push(f0);
        }
        let mut grad: Vec<Vector3<f64>> = value.gradients.object_vertices[0]
            .iter()
            .zip(&curv_grad)
            .map(|(m, c)| m + lambda * c)
            .collect();
        if let Some(sym) = &symmetry {
            grad = symmetrize_gradient(&grad, sym)?;
        }
        let g2: f64 = grad.iter().map(|g| g.norm_squared()).sum();
        if g2 < 1e-24 {
            break;
        }

        // The silhouette backward pass is noisy per vertex; averaging each
        // gradient with its one-ring neighbors gives a coherent direction
        // that often keeps descending where the raw gradient stalls. Both
        // candidate directions run under the same Armijo guard.
        let smoothed = smooth_field(&grad, &neighbors);
        let smoothed = match &symmetry {
            Some(sym) => symmetrize_gradient(&smoothed, sym)?,
            None => smoothed,
        };
        let dot_smoothed: f64 =
            grad.iter().zip(&smoothed).map(|(g, d)| g.dot(d)).sum();

        // Per-vertex equalized variant: boundary vertices with large edge
        // gradients stop dominating the step scale.
        let max_norm = grad.iter().map(Vector3::norm).fold(0.0, f64::max);
        let normalized: Vec<Vector3<f64>> =
            grad.iter().map(|g| g / (g.norm() + 0.1 * max_norm)).collect();
        let normalized = match &symmetry {
            Some(sym) => symmetrize_gradient(&normalized, sym)?,
            None => normalized,
        };
        let dot_normalized: f64 =
            grad.iter().zip(&normalized).map(|(g, d)| g.dot(d)).sum();

        let mut accepted = None;
        let mut directions: Vec<(&Vec<Vector3<f64>>, f64)> = Vec::new();
        if dot_smoothed > 0.0 {
            directions.push((&smoothed, dot_smoothed));
        }
        directions.push((&grad, g2));
        if dot_normalized > 0.0 {
            directions.push((&normalized, dot_normalized));
        }
        for (direction, slope) in directions {
            let stepped = |step: f64| -> TriMesh {
                let mut mesh = state.mesh.clone();
                for (v, d) in mesh.vertices.iter_mut().zip(direction) {
                    *v -= step * d;
                }
                mesh
            };
            if let Some((step, f)) = backtrack(
                f0,
                slope,
                warm.max(config.shape_step),
                |step| eval_loss(&stepped(step), lambda),
                iteration,
            )? {
                accepted = Some((stepped(step), step, f));
                break;
            }
        }
        let Some((mesh, step, f)) = accepted else {
            break;
        };
        state.mesh = mesh;
        trace.loss.push(f);
        trace.accepted_steps.push(step);
        warm = (step * 2.0).clamp(MIN_STEP, config.shape_step * 1024.0);

        let degenerate = zero_area_fraction(&state.mesh, area_floor);
        if degenerate > 0.10 {
            if lambda_boosted {
                return Err(EstimatorError::MeshDegenerate { fraction: degenerate * 100.0 });
            }
            lambda *= 10.0;
            lambda_boosted = true;
            trace.warnings.push(format!(
                "{:.1}% of faces near zero area after iteration {iteration}; \
                 curvature weight raised to {lambda}",
                degenerate * 100.0
            ));
        }
        if (f0 - f) <= config.convergence_tol * f0.abs().max(1e-12) {
            break;
        }
    }
    Ok(trace)
}

/// Runs `alternations` rounds of pose-then-shape optimization.每 round's
/// pose stage sees the mesh carved in the previous round (its keypoints sit
/// near the instance surface, removing the mean-model matching bias), while
/// each shape stage re-carves from a fresh copy of the initial mesh so that
/// deformations baked in at a stale pose do not persist.
pub fn optimize_object(
    state: &mut ObjectState,
    frames: &[(usize, &SemanticObservation)],
    cameras: &[Pose],
    intrinsics: &CameraIntrinsics,
    config: &OptimConfig,
) -> Result<(Vec<OptimTrace>, Vec<OptimTrace>), EstimatorError> {
    let initial_mesh = state.mesh.clone();
    let mut pose_traces = Vec::new();
    let mut shape_traces = Vec::new();
    for round in 0..config.alternations.max(1) {
        pose_traces.push(optimize_object_pose(state, frames, cameras, intrinsics, config)?);
        if round > 0 {
            state.mesh = initial_mesh.clone();
        }
        shape_traces.push(optimize_object_shape(state, frames, cameras, intrinsics, config)?);
    }
    Ok((pose_traces, shape_traces))
}

/// Outcome of per-frame camera refinement.
#[derive(Debug, Clone)]
pub struct CameraOptResult {
    pub pose: Pose,
    /// Pose after the odometry prediction and after each accepted step.
    pub pose_trace: Vec<Pose>,
    pub trace: OptimTrace,
    /// True when no objects were visible and the result is odometry only.
    pub odometry_only: bool,
}

/// Initializes the camera pose by composing the previous pose with the
/// odometry measurement, then descends the combined loss over the visible
/// known objects, object states held fixed. With no visible objects the
/// odometry prediction is returned flagged.
pub fn optimize_camera_pose(
    previous: &Pose,
    odometry: &Pose,
    objects: &[ObjectState],
    observations: &[(usize, &SemanticObservation)],
    intrinsics: &CameraIntrinsics,
    config: &OptimConfig,
) -> Result<CameraOptResult, EstimatorError> {
    let init = pose_compose(previous, odometry);
    if observations.is_empty() {
        return Ok(CameraOptResult {
            pose: init,
            pose_trace: vec![init],
            trace: OptimTrace::default(),
            odometry_only: true,
        });
    }
    let models: Vec<ObjectModel> = objects
        .iter()
        .map(|o| ObjectModel { pose: o.pose, mesh: &o.mesh, assoc: &o.assoc })
        .collect();
    let terms: Vec<ObservationTerm> = observations
        .iter()
        .map(|(object, obs)| ObservationTerm {
            camera: 0,
            object: *object,
            mask: &obs.mask,
            keypoints: &obs.keypoints,
            keypoint_valid: &obs.keypoint_valid,
        })
        .collect();
    let grad_request = GradientRequest { camera_poses: true, ..Default::default() };

    let mut pose = init;
    let mut pose_trace = vec![init];
    let mut trace = OptimTrace::default();
    let mut warm = config.camera_step;

    for iteration in 0..config.camera_iterations {
        let vis =
            compute_visibilities(std::slice::from_ref(&pose), &models, &terms, intrinsics)?;
        let value = total_objective(
            std::slice::from_ref(&pose),
            &models,
            &terms,
            intrinsics,
            &config.weights,
            &grad_request,
            Some(&vis),
        )?;
        if !value.total.is_finite() {
            return Err(EstimatorError::Diverged { iteration });
        }
        if trace.loss.is_empty() {
            trace.loss.push(value.total);
        }
        let f0 = value.total;
        let g = &value.gradients.cameras[0];
        let g2 = g.rotation.norm_squared() + g.translation.norm_squared();
        if g2 < 1e-24 {
            break;
        }
        let candidate = |step: f64| {
            Pose::new(
                AxisAngle(pose.rotation.0 - step * g.rotation),
                pose.translation - step * g.translation,
            )
        };
        let accepted = backtrack(
            f0,
            g2,
            warm.max(config.camera_step),
            |step| {
                Ok(total_objective(
                    std::slice::from_ref(&candidate(step)),
                    &models,
                    &terms,
                    intrinsics,
                    &config.weights,
                    &GradientRequest::default(),
                    Some(&vis),
                )?
                .total)
            },
            iteration,
        )?;
        let Some((step, f)) = accepted else {
            break;
        };
        pose = candidate(step);
        pose_trace.push(pose);
        trace.loss.push(f);
        trace.accepted_steps.push(step);
        warm = (step * 2.0).clamp(MIN_STEP, config.camera_step * 1024.0);
        if (f0 - f) <= config.convergence_tol * f0.abs().max(1e-12) {
            break;
        }
    }
    Ok(CameraOptResult { pose, pose_trace, trace, odometry_only: false })
}

/// One-ring average of a per-vertex field: `(f_i + mean(f_nbrs)) / 2`.
fn smooth_field(field: &[Vector3<f64>], neighbors: &[Vec<usize>]) -> Vec<Vector3<f64>> {
    field
        .iter()
        .enumerate()
        .map(|(i, f)| {
            if neighbors[i].is_empty() {
                return *f;
            }
            let mean = neighbors[i].iter().map(|&j| field[j]).sum::<Vector3<f64>>()
                / neighbors[i].len() as f64;
            (f + mean) / 2.0
        })
        .collect()
}

fn mean_face_area(mesh: &TriMesh) -> f64 {
    if mesh.faces.is_empty() {
        return 1.0;
    }
    let total: f64 = mesh.faces.iter().map(|f| face_area(mesh, f)).sum();
    total / mesh.faces.len() as f64
}

fn face_area(mesh: &TriMesh, f: &[usize; 3]) -> f64 {
    let (a, b, c) = (mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]);
    (b - a).cross(&(c - a)).norm() / 2.0
}

fn zero_area_fraction(mesh: &TriMesh, floor: f64) -> f64 {
    if mesh.faces.is_empty() {
        return 0.0;
    }
    let n = mesh.faces.iter().filter(|f| face_area(mesh, f) < floor).count();
    n as f64 / mesh.faces.len() as f64
}
