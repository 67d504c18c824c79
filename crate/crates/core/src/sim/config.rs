//! Human-readable (TOML) experiment configuration: camera, trajectory,
//! objects, noise, the category mean model, and optimizer settings.

use super::{NoiseModel, Scene, SceneObject, SimError};
use crate::camera::CameraIntrinsics;
use crate::estimator::OptimConfig;
use crate::liegroup::{AxisAngle, Pose};
use crate::mesh::{farthest_point_keypoints, make_icosphere, KeypointAssociation, TriMesh};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub camera: SceneCameraConfig,
    pub trajectory: TrajectoryConfig,
    pub objects: Vec<ObjectConfig>,
    pub noise: NoiseConfig,
    pub mean_model: MeanModelConfig,
    pub optim: OptimConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        default_mapping_config()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneCameraConfig {
    /// Focal length times pixel density, in pixels.
    pub fu: f64,
    pub fv: f64,
    pub skew: f64,
    pub cu: f64,
    pub cv: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for SceneCameraConfig {
    fn default() -> Self {
        SceneCameraConfig {
            fu: 110.0,
            fv: 110.0,
            skew: 0.0,
            cu: 64.0,
            cv: 64.0,
            width: 128,
            height: 128,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryConfig {
    /// "orbit" or "explicit".
    pub kind: String,
    pub frames: usize,
    pub distance: f64,
    /// Camera heights cycled along the orbit.
    pub heights: Vec<f64>,
    pub center: [f64; 3],
    pub start_angle_deg: f64,
    pub sweep_deg: f64,
    pub dt: f64,
    /// Used when kind = "explicit".
    pub poses: Vec<PoseConfig>,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            kind: "orbit".into(),
            frames: 16,
            distance: 4.5,
            heights: vec![1.7, 2.478, 2.8, 2.478, 1.7, 0.922, 0.6, 0.922, 1.7, 2.478, 2.8, 2.478, 1.7, 0.922, 0.6, 0.922],
            center: [0.0; 3],
            start_angle_deg: 0.0,
            sweep_deg: 360.0,
            dt: 0.1,
            poses: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseConfig {
    pub t: f64,
    pub position: [f64; 3],
    pub axis_angle: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectConfig {
    pub class: u32,
    pub subdivisions: u32,
    /// Anisotropic semi-axes of the scaled icosphere, meters.
    pub radii: [f64; 3],
    pub position: [f64; 3],
    pub axis_angle: [f64; 3],
    /// Optional second component forming a union shape.
    pub part2_radii: Option<[f64; 3]>,
    pub part2_offset: Option<[f64; 3]>,
}

impl Default for ObjectConfig {
    fn default() -> Self {
        ObjectConfig {
            class: 1,
            subdivisions: 2,
            radii: [1.0, 0.6, 0.4],
            position: [0.0; 3],
            axis_angle: [0.0; 3],
            part2_radii: None,
            part2_offset: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub keypoint_sigma_px: f64,
    pub mask_morph_px: i32,
    pub odom_rot_sigma_deg: f64,
    pub odom_trans_sigma: f64,
    pub odom_trans_bias: [f64; 3],
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            keypoint_sigma_px: 0.0,
            mask_morph_px: 0,
            odom_rot_sigma_deg: 0.0,
            odom_trans_sigma: 0.0,
            odom_trans_bias: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MeanModelConfig {
    pub subdivisions: u32,
    pub radius: f64,
    pub keypoints: usize,
}

impl Default for MeanModelConfig {
    fn default() -> Self {
        MeanModelConfig { subdivisions: 2, radius: 0.62, keypoints: 12 }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, SimError> {
        toml::from_str(text).map_err(|e| SimError::ConfigParse {
            path: origin.to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path_str = path.as_ref().display().to_string();
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|source| SimError::ConfigIo { path: path_str.clone(), source })?;
        Self::from_toml_str(&text, &path_str)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            f: 1.0,
            s_u: self.camera.fu,
            s_v: self.camera.fv,
            s_n: self.camera.skew,
            c_u: self.camera.cu,
            c_v: self.camera.cv,
        }
    }

    pub fn noise_model(&self) -> NoiseModel {
        NoiseModel {
            keypoint_sigma_px: self.noise.keypoint_sigma_px,
            mask_morph_px: self.noise.mask_morph_px,
            odom_rot_sigma_rad: self.noise.odom_rot_sigma_deg.to_radians(),
            odom_trans_sigma_m: self.noise.odom_trans_sigma,
            odom_trans_bias: Vector3::from(self.noise.odom_trans_bias),
            seed: self.seed,
        }
    }

    /// The category-level mean model and its keypoint selection. Keypoint
    /// vertex indices are chosen on the unit icosphere, so ground-truth
    /// objects built at the same subdivision share them semantically.
    pub fn mean_model(&self) -> (TriMesh, KeypointAssociation) {
        let unit = make_icosphere(self.mean_model.subdivisions, 1.0);
        let assoc = farthest_point_keypoints(&unit, self.mean_model.keypoints);
        let mesh = make_icosphere(self.mean_model.subdivisions, self.mean_model.radius);
        let assoc = KeypointAssociation::new(assoc.vertex_indices().to_vec(), &mesh)
            .expect("same topology");
        (mesh, assoc)
    }

    pub fn build_scene(&self) -> Result<Scene, SimError> {
        if self.objects.is_empty() {
            return Err(SimError::BadConfig { reason: "no objects declared".into() });
        }
        let unit = make_icosphere(self.mean_model.subdivisions, 1.0);
        let kp_indices = farthest_point_keypoints(&unit, self.mean_model.keypoints);

        let mut objects = Vec::new();
        for (i, oc) in self.objects.iter().enumerate() {
            if oc.subdivisions != self.mean_model.subdivisions {
                return Err(SimError::BadConfig {
                    reason: format!(
                        "object {i} subdivision {} differs from mean model {}; keypoint \
                         correspondence requires equal topology",
                        oc.subdivisions, self.mean_model.subdivisions
                    ),
                });
            }
            let base = make_icosphere(oc.subdivisions, 1.0).scaled(Vector3::from(oc.radii));
            let mesh = match (oc.part2_radii, oc.part2_offset) {
                (Some(radii), offset) => {
                    let mut part = make_icosphere(oc.subdivisions, 1.0)
                        .scaled(Vector3::from(radii));
                    let shift = Vector3::from(offset.unwrap_or([0.0; 3]));
                    for v in &mut part.vertices {
                        *v += shift;
                    }
                    base.merged(&part)
                }
                _ => base,
            };
            let assoc = KeypointAssociation::new(kp_indices.vertex_indices().to_vec(), &mesh)
                .map_err(SimError::Mesh)?;
            objects.push(SceneObject {
                class: oc.class,
                pose: Pose::new(
                    AxisAngle::new(oc.axis_angle[0], oc.axis_angle[1], oc.axis_angle[2]),
                    Vector3::from(oc.position),
                ),
                mesh,
                assoc,
            });
        }

        let trajectory = self.build_trajectory()?;
        let scene = Scene {
            objects,
            trajectory,
            intrinsics: self.intrinsics(),
            width: self.camera.width,
            height: self.camera.height,
        };
        scene.validate()?;
        Ok(scene)
    }

    fn build_trajectory(&self) -> Result<Vec<(f64, Pose)>, SimError> {
        let t = &self.trajectory;
        match t.kind.as_str() {
            "explicit" => {
                if t.poses.is_empty() {
                    return Err(SimError::BadConfig {
                        reason: "explicit trajectory declares no poses".into(),
                    });
                }
                Ok(t.poses
                    .iter()
                    .map(|p| {
                        (
                            p.t,
                            Pose::new(
                                AxisAngle::new(
                                    p.axis_angle[0],
                                    p.axis_angle[1],
                                    p.axis_angle[2],
                                ),
                                Vector3::from(p.position),
                            ),
                        )
                    })
                    .collect())
            }
            "orbit" => {
                if t.frames == 0 {
                    return Err(SimError::BadConfig { reason: "orbit needs frames > 0".into() });
                }
                if t.heights.is_empty() {
                    return Err(SimError::BadConfig { reason: "orbit needs heights".into() });
                }
                let center = Vector3::from(t.center);
                let full_circle = (t.sweep_deg - 360.0).abs() < 1e-9;
                let denom = if full_circle { t.frames as f64 } else { (t.frames - 1).max(1) as f64 };
                Ok((0..t.frames)
                    .map(|i| {
                        let angle =
                            (t.start_angle_deg + t.sweep_deg * i as f64 / denom).to_radians();
                        let eye = center
                            + Vector3::new(
                                t.distance * angle.cos(),
                                t.distance * angle.sin(),
                                t.heights[i % t.heights.len()],
                            );
                        (i as f64 * t.dt, look_at(eye, center))
                    })
                    .collect())
            }
            other => Err(SimError::BadConfig {
                reason: format!("unknown trajectory kind {other:?} (orbit|explicit)"),
            }),
        }
    }
}

/// Camera pose at `eye` with the optical axis toward `target`
/// (z forward, x right, y down; world z is up).
pub(crate) fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> Pose {
    let forward = (target - eye).normalize();
    let right = forward.cross(&Vector3::z());
    let right = if right.norm() < 1e-9 { Vector3::x() } else { right.normalize() };
    let down = forward.cross(&right).normalize();
    let rot = nalgebra::Matrix3::from_columns(&[right, down, forward]);
    Pose::from_parts(
        &crate::liegroup::RotationMatrix::try_new(rot).expect("orthonormal by construction"),
        eye,
    )
}

/// Single-ellipsoid shape-from-silhouette experiment: eight orbit views at
/// three elevations around one anisotropic object, no observation noise.
/// Two pose/shape rounds: once the mesh has deformed toward the instance,
/// re-fitting the pose removes the bias of matching mean-model keypoints
/// against instance detections.
pub fn default_mapping_config() -> ExperimentConfig {
    ExperimentConfig {
        seed: 7,
        camera: SceneCameraConfig::default(),
        trajectory: TrajectoryConfig::default(),
        objects: vec![ObjectConfig::default()],
        noise: NoiseConfig::default(),
        mean_model: MeanModelConfig::default(),
        optim: OptimConfig { alternations: 2, ..Default::default() },
    }
}

/// Seventy-frame arc past six known objects with biased, drifting odometry.
pub fn default_localization_config() -> ExperimentConfig {
    let radii_list: [[f64; 3]; 6] = [
        [0.8, 0.6, 0.5],
        [0.6, 0.6, 0.6],
        [0.9, 0.5, 0.45],
        [0.7, 0.7, 0.5],
        [0.55, 0.75, 0.5],
        [0.85, 0.55, 0.6],
    ];
    let objects = radii_list
        .iter()
        .enumerate()
        .map(|(i, radii)| {
            let a = i as f64 / 6.0 * std::f64::consts::TAU;
            ObjectConfig {
                class: 1,
                subdivisions: 2,
                radii: *radii,
                position: [2.4 * a.cos(), 2.4 * a.sin(), 0.0],
                axis_angle: [0.0, 0.0, a],
                part2_radii: None,
                part2_offset: None,
            }
        })
        .collect();
    ExperimentConfig {
        seed: 11,
        camera: SceneCameraConfig::default(),
        trajectory: TrajectoryConfig {
            kind: "orbit".into(),
            frames: 70,
            distance: 8.0,
            heights: vec![1.8],
            center: [0.0; 3],
            start_angle_deg: 0.0,
            sweep_deg: 150.0,
            dt: 0.1,
            poses: Vec::new(),
        },
        objects,
        noise: NoiseConfig {
            keypoint_sigma_px: 0.5,
            mask_morph_px: 0,
            odom_rot_sigma_deg: 0.2,
            odom_trans_sigma: 0.02,
            odom_trans_bias: [0.01, 0.0, 0.0],
        },
        mean_model: MeanModelConfig::default(),
        optim: OptimConfig::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_configs_build_valid_scenes() {
        let mapping = default_mapping_config();
        let scene = mapping.build_scene().unwrap();
        assert_eq!(scene.frame_count(), 16);
        assert_eq!(scene.objects.len(), 1);

        let loc = default_localization_config();
        let scene = loc.build_scene().unwrap();
        assert_eq!(scene.frame_count(), 70);
        assert_eq!(scene.objects.len(), 6);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let config = default_localization_config();
        let text = config.to_toml_string();
        let back = ExperimentConfig::from_toml_str(&text, "inline").unwrap();
        assert_eq!(back.seed, config.seed);
        assert_eq!(back.objects.len(), config.objects.len());
        assert_eq!(back.trajectory.frames, config.trajectory.frames);
        assert_eq!(back.noise.odom_trans_bias, config.noise.odom_trans_bias);
        let scene = back.build_scene().unwrap();
        assert_eq!(scene.frame_count(), 70);
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let text = r#"
seed = 99
[[objects]]
radii = [0.5, 0.5, 0.5]
"#;
        let config = ExperimentConfig::from_toml_str(text, "inline").unwrap();
        assert_eq!(config.seed, 99);
        assert_eq!(config.camera.width, 128);
        assert_eq!(config.objects.len(), 1);
        config.build_scene().unwrap();
    }

    #[test]
    fn mismatched_subdivision_is_rejected() {
        let mut config = default_mapping_config();
        config.objects[0].subdivisions = 3;
        assert!(matches!(config.build_scene(), Err(SimError::BadConfig { .. })));
    }

    #[test]
    fn union_objects_build_closed_meshes() {
        let mut config = default_mapping_config();
        config.objects[0].part2_radii = Some([0.5, 0.5, 0.5]);
        config.objects[0].part2_offset = Some([0.7, 0.0, 0.0]);
        let scene = config.build_scene().unwrap();
        assert!(scene.objects[0].mesh.is_closed());
        assert_eq!(scene.objects[0].mesh.face_components().len(), 2);
    }

    #[test]
    fn unknown_trajectory_kind_is_rejected() {
        let mut config = default_mapping_config();
        config.trajectory.kind = "spline".into();
        assert!(matches!(config.build_scene(), Err(SimError::BadConfig { .. })));
    }
}
