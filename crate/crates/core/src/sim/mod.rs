//! Synthetic world standing in for a robot simulator plus perception stack:
//! ground-truth objects and camera trajectories, rendered semantic
//! observations with configurable noise, drifting odometry, a ground-truth
//! keypoint propagator replacing optical flow, and evaluation metrics.

mod config;
mod metrics;
mod pipeline;
mod trajectory;

pub use config::{
    default_localization_config, default_mapping_config, ExperimentConfig, MeanModelConfig,
    NoiseConfig, ObjectConfig, SceneCameraConfig, TrajectoryConfig,
};
#[cfg(test)]
pub(crate) use config::look_at;
pub use pipeline::{
    run_localization, run_mapping, subsample_scene, LocalizationOutcome, MappedObject,
    MappingOutcome,
};
pub use metrics::{ate, mapping_report, MappingReport};
pub use trajectory::{quaternion_of, read_trajectory, write_trajectory};

use crate::assoc::{
    Bbox, PropagatedKeypoints, SemanticObservation, StepResult, Track, Tracker,
};
use crate::camera::{transform_to_camera, CameraIntrinsics, EPS_DEPTH};
use crate::estimator::EstimatorError;
use crate::liegroup::{pose_compose, pose_inverse, so3_exp, so3_log, AxisAngle, Pose};
use crate::losses::LossError;
use crate::mesh::{KeypointAssociation, MeshError, TriMesh};
use crate::raster::{rasterize_silhouette, vertex_visibility, MaskImage, RasterError};
use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scene: {reason}")]
    InvalidScene { reason: String },
    #[error("trajectory lengths differ: {left} vs {right}")]
    TrajectoryLengthMismatch { left: usize, right: usize },
    #[error("bad config: {reason}")]
    BadConfig { reason: String },
    #[error("{path}: {source}")]
    ConfigIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    ConfigParse { path: String, message: String },
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// A ground-truth object instance.
#[derive(Debug, Clone)]
pub struct SceneObject {
    pub class: u32,
    pub pose: Pose,
    pub mesh: TriMesh,
    pub assoc: KeypointAssociation,
}

/// Ground-truth world: objects, a timestamped camera trajectory, and the
/// camera model.
#[derive(Debug, Clone)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    pub trajectory: Vec<(f64, Pose)>,
    pub intrinsics: CameraIntrinsics,
    pub width: usize,
    pub height: usize,
}

impl Scene {
    /// Checks timestamps and that every object is seen from somewhere.
    pub fn validate(&self) -> Result<(), SimError> {
        for pair in self.trajectory.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(SimError::InvalidScene {
                    reason: format!(
                        "timestamps not strictly increasing at {} -> {}",
                        pair[0].0, pair[1].0
                    ),
                });
            }
        }
        for (i, obj) in self.objects.iter().enumerate() {
            let visible_somewhere = self.trajectory.iter().any(|(_, cam)| {
                let center = crate::camera::point_to_camera(cam, &obj.pose, &Vector3::zeros());
                center.z > EPS_DEPTH
            });
            if !visible_somewhere {
                return Err(SimError::InvalidScene {
                    reason: format!("object {i} is behind the camera in every frame"),
                });
            }
        }
        Ok(())
    }

    pub fn camera(&self, frame: usize) -> &Pose {
        &self.trajectory[frame].1
    }

    pub fn frame_count(&self) -> usize {
        self.trajectory.len()
    }
}

/// Observation noise and odometry corruption parameters. Everything is
/// seeded; equal seeds reproduce byte-identical outputs.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    pub keypoint_sigma_px: f64,
    /// Magnitude of random mask erosion/dilation in pixels (0 disables).
    pub mask_morph_px: i32,
    pub odom_rot_sigma_rad: f64,
    pub odom_trans_sigma_m: f64,
    pub odom_trans_bias: Vector3<f64>,
    pub seed: u64,
}

impl NoiseModel {
    pub fn noiseless(seed: u64) -> Self {
        NoiseModel {
            keypoint_sigma_px: 0.0,
            mask_morph_px: 0,
            odom_rot_sigma_rad: 0.0,
            odom_trans_sigma_m: 0.0,
            odom_trans_bias: Vector3::zeros(),
            seed,
        }
    }
}

/// A synthesized observation together with its ground-truth object index.
#[derive(Debug, Clone)]
pub struct LabeledObservation {
    pub object: usize,
    pub obs: SemanticObservation,
}

/// Renders the semantic observations of one frame: per visible object a
/// mask, keypoints with z-buffer visibility, bounding box, and confidences.
/// Objects whose silhouette misses the image produce no observation.
/// Detection confidence is the visible fraction of the silhouette, measured
/// against a 3x-expanded canvas.
pub fn synthesize_observations(
    scene: &Scene,
    frame: usize,
    noise: &NoiseModel,
) -> Result<Vec<LabeledObservation>, SimError> {
    let camera = scene.camera(frame);
    let (w, h) = (scene.width, scene.height);
    let mut rng = frame_rng(noise.seed, frame as u64, 0);
    let gauss = Normal::new(0.0, noise.keypoint_sigma_px.max(1e-300)).unwrap();
    let mut out = Vec::new();

    for (oi, obj) in scene.objects.iter().enumerate() {
        let verts_cam = transform_to_camera(camera, &obj.pose, &obj.mesh.vertices);
        let (mask, state) =
            rasterize_silhouette(&verts_cam, &obj.mesh.faces, &scene.intrinsics, w, h)?;
        let area = mask.area();
        if area == 0 {
            continue;
        }

        // Total silhouette area on a 3x canvas for the visibility fraction.
        let expanded = CameraIntrinsics {
            c_u: scene.intrinsics.c_u + w as f64,
            c_v: scene.intrinsics.c_v + h as f64,
            ..scene.intrinsics
        };
        let (full_mask, _) =
            rasterize_silhouette(&verts_cam, &obj.mesh.faces, &expanded, 3 * w, 3 * h)?;
        let confidence = area as f64 / full_mask.area().max(area) as f64;

        let visibility = vertex_visibility(&state, obj.assoc.vertex_indices());
        let mut keypoints = Vec::with_capacity(obj.assoc.keypoint_count());
        let mut valid = Vec::with_capacity(obj.assoc.keypoint_count());
        for (k, &vi) in obj.assoc.vertex_indices().iter().enumerate() {
            let p = verts_cam[vi];
            if p.z > EPS_DEPTH {
                let pix = Vector2::new(
                    scene.intrinsics.fu() * p.x / p.z
                        + scene.intrinsics.skew() * p.y / p.z
                        + scene.intrinsics.c_u,
                    scene.intrinsics.fv() * p.y / p.z + scene.intrinsics.c_v,
                );
                let inlier = pix.x >= 0.0
                    && pix.y >= 0.0
                    && (pix.x as usize) < w
                    && (pix.y as usize) < h
                    && mask.get(pix.x as usize, pix.y as usize) >= 0.5;
                keypoints.push(pix);
                valid.push(visibility[k] && inlier);
            } else {
                keypoints.push(Vector2::zeros());
                valid.push(false);
            }
        }
        // Noise applies after validity is decided from the true geometry.
        if noise.keypoint_sigma_px > 0.0 {
            for (k, pix) in keypoints.iter_mut().enumerate() {
                if valid[k] {
                    pix.x += gauss.sample(&mut rng);
                    pix.y += gauss.sample(&mut rng);
                }
            }
        }

        let mask = if noise.mask_morph_px != 0 {
            let r = rng.gen_range(-noise.mask_morph_px..=noise.mask_morph_px);
            morph(&mask, r)
        } else {
            mask
        };
        let Some((bx, by, bw, bh)) = mask.bounding_box() else {
            continue; // erosion removed the object entirely
        };

        let q: Vec<f64> = valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        out.push(LabeledObservation {
            object: oi,
            obs: SemanticObservation {
                class: obj.class,
                mask,
                keypoints,
                keypoint_valid: valid,
                bbox: Bbox { x: bx as f64, y: by as f64, w: bw as f64, h: bh as f64 },
                confidence,
                keypoint_confidence: q,
            },
        });
    }
    Ok(out)
}

/// Square morphological dilation (positive) or erosion (negative) by |r|
/// one-pixel steps.
fn morph(mask: &MaskImage, r: i32) -> MaskImage {
    let mut current = mask.clone();
    for _ in 0..r.unsigned_abs() {
        let mut next = current.clone();
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                let mut any = false;
                let mut all = true;
                for dy in -1i32..=1 {
                    for dx in -1i32..=1 {
                        let nx = x as i32 + dx;
                        let ny = y as i32 + dy;
                        let v = if nx < 0
                            || ny < 0
                            || nx >= mask.width() as i32
                            || ny >= mask.height() as i32
                        {
                            0.0
                        } else {
                            current.get(nx as usize, ny as usize)
                        };
                        any |= v >= 0.5;
                        all &= v >= 0.5;
                    }
                }
                next.set(x, y, if r > 0 { any as u8 as f64 } else { all as u8 as f64 });
            }
        }
        current = next;
    }
    current
}

/// Relative pose measurements between consecutive trajectory frames,
/// perturbed by seeded rotation/translation noise plus a constant bias.
/// Integrating them from the first ground-truth pose drifts from the truth.
pub fn noisy_odometry(trajectory: &[(f64, Pose)], noise: &NoiseModel) -> Vec<Pose> {
    let mut rng = frame_rng(noise.seed, 0, 1);
    let rot = Normal::new(0.0, noise.odom_rot_sigma_rad.max(1e-300)).unwrap();
    let trans = Normal::new(0.0, noise.odom_trans_sigma_m.max(1e-300)).unwrap();
    trajectory
        .windows(2)
        .map(|pair| {
            let rel = pose_compose(&pose_inverse(&pair[0].1), &pair[1].1);
            let d_rot = if noise.odom_rot_sigma_rad > 0.0 {
                Vector3::new(rot.sample(&mut rng), rot.sample(&mut rng), rot.sample(&mut rng))
            } else {
                Vector3::zeros()
            };
            let d_trans = if noise.odom_trans_sigma_m > 0.0 {
                Vector3::new(
                    trans.sample(&mut rng),
                    trans.sample(&mut rng),
                    trans.sample(&mut rng),
                )
            } else {
                Vector3::zeros()
            };
            let rel_rot = rel.rotation_matrix();
            let perturbed_rot = &rel_rot * &so3_exp(&AxisAngle(d_rot));
            Pose {
                rotation: so3_log(&perturbed_rot),
                translation: rel.translation + noise.odom_trans_bias + d_trans,
            }
        })
        .collect()
}

/// Integrates relative measurements from a starting pose.
pub fn integrate_odometry(start: &Pose, relatives: &[Pose]) -> Vec<Pose> {
    let mut out = vec![*start];
    for rel in relatives {
        out.push(pose_compose(out.last().unwrap(), rel));
    }
    out
}

/// Ground-truth keypoint propagator standing in for optical flow: predicts
/// where an object's keypoints land in another frame, with optional pixel
/// noise.
pub struct GtPropagator<'a> {
    pub scene: &'a Scene,
    pub sigma_px: f64,
    pub seed: u64,
}

impl GtPropagator<'_> {
    pub fn predict(&self, object: usize, to_frame: usize) -> PropagatedKeypoints {
        let obj = &self.scene.objects[object];
        let camera = self.scene.camera(to_frame);
        let verts_cam = transform_to_camera(camera, &obj.pose, &obj.mesh.vertices);
        let k = &self.scene.intrinsics;
        let mut rng =
            frame_rng(self.seed ^ 0x9e37_79b9_7f4a_7c15, to_frame as u64, object as u64 + 2);
        let gauss = Normal::new(0.0, self.sigma_px.max(1e-300)).unwrap();
        let mut positions = Vec::new();
        let mut valid = Vec::new();
        for &vi in obj.assoc.vertex_indices() {
            let p = verts_cam[vi];
            if p.z > EPS_DEPTH {
                let mut pix = Vector2::new(
                    k.fu() * p.x / p.z + k.skew() * p.y / p.z + k.c_u,
                    k.fv() * p.y / p.z + k.c_v,
                );
                if self.sigma_px > 0.0 {
                    pix.x += gauss.sample(&mut rng);
                    pix.y += gauss.sample(&mut rng);
                }
                positions.push(pix);
                valid.push(true);
            } else {
                positions.push(Vector2::zeros());
                valid.push(false);
            }
        }
        PropagatedKeypoints { positions, valid }
    }
}

/// Full tracking pass over a scene: per-frame synthesis, ground-truth
/// propagation, and greedy score-based association.
#[derive(Debug)]
pub struct TrackingRun {
    pub tracks: Vec<Track>,
    /// Ground-truth object of each track id.
    pub track_labels: Vec<usize>,
    /// Per frame, per submitted observation: its ground-truth object.
    pub frame_labels: Vec<Vec<usize>>,
    pub steps: Vec<StepResult>,
}

impl TrackingRun {
    /// Fraction of continuation assignments that attached an observation to
    /// a track of the same ground-truth object.
    pub fn association_accuracy(&self) -> f64 {
        let mut total = 0usize;
        let mut correct = 0usize;
        for (frame, step) in self.steps.iter().enumerate() {
            for (track_id, obs_idx) in &step.assignments {
                total += 1;
                if self.track_labels[*track_id] == self.frame_labels[frame][*obs_idx] {
                    correct += 1;
                }
            }
        }
        if total == 0 {
            return 1.0;
        }
        correct as f64 / total as f64
    }
}

pub fn run_tracking(scene: &Scene, noise: &NoiseModel) -> Result<TrackingRun, SimError> {
    let propagator = GtPropagator { scene, sigma_px: noise.keypoint_sigma_px, seed: noise.seed };
    let mut tracker = Tracker::new();
    let mut track_labels: Vec<usize> = Vec::new();
    let mut frame_labels = Vec::new();
    let mut steps = Vec::new();

    for frame in 0..scene.frame_count() {
        let labeled = synthesize_observations(scene, frame, noise)?;
        let labels: Vec<usize> = labeled.iter().map(|l| l.object).collect();
        let observations: Vec<SemanticObservation> =
            labeled.into_iter().map(|l| l.obs).collect();

        // Forward predictions for each active track use the ground truth of
        // the object that spawned the track (optical-flow stand-in).
        let forward: Vec<PropagatedKeypoints> = tracker
            .active_ids()
            .iter()
            .map(|&tid| propagator.predict(track_labels[tid], frame))
            .collect();
        let backward: Vec<PropagatedKeypoints> = if frame == 0 {
            labels.iter().map(|&l| propagator.predict(l, 0)).collect()
        } else {
            labels.iter().map(|&l| propagator.predict(l, frame - 1)).collect()
        };

        let step = tracker
            .step(frame, observations, &forward, &backward)
            .map_err(|e| SimError::InvalidScene { reason: e.to_string() })?;
        // New track ids are handed out in submission order of the unmatched
        // observations, which recovers each new track's ground-truth label.
        let assigned: std::collections::BTreeSet<usize> =
            step.assignments.iter().map(|(_, oi)| *oi).collect();
        let unmatched =
            (0..labels.len()).filter(|oi| !assigned.contains(oi));
        for (&tid, obs_idx) in step.new_tracks.iter().zip(unmatched) {
            debug_assert_eq!(tid, track_labels.len());
            track_labels.push(labels[obs_idx]);
        }

        frame_labels.push(labels);
        steps.push(step);
    }
    Ok(TrackingRun { tracks: tracker.into_tracks(), track_labels, frame_labels, steps })
}

/// Independent ChaCha stream per (seed, frame, purpose).
fn frame_rng(seed: u64, frame: u64, purpose: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(frame * 16 + purpose);
    rng
}
