//! Camera intrinsics, perspective projection, the keypoint observation
//! model, and its analytic Jacobians with respect to camera/object pose and
//! vertex position.
//!
//! A point `v` in the object frame maps to camera coordinates
//! `gamma = R_c^T (R_o v + p_o - p_c)` and then to pixels `K pi(gamma)`,
//! where `pi(x) = (x1/x3, x2/x3, 1)` and `K` is the 2x3 intrinsic matrix.

use crate::liegroup::{hat, so3_right_jacobian, AxisAngle, Pose};
use crate::mesh::{KeypointAssociation, TriMesh};
use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3};
use thiserror::Error;

/// Depth below which a point counts as behind the camera.
pub const EPS_DEPTH: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("point is behind the camera (depth {depth:.3e} <= {EPS_DEPTH:.0e})")]
    BehindCamera { depth: f64 },
}

/// Pinhole intrinsics: focal length `f` (meters), pixel densities
/// `s_u`, `s_v` (pixels/meter), skew factor `s_n`, principal point
/// `(c_u, c_v)` (pixels).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CameraIntrinsics {
    pub f: f64,
    pub s_u: f64,
    pub s_v: f64,
    pub s_n: f64,
    pub c_u: f64,
    pub c_v: f64,
}

impl CameraIntrinsics {
    /// Simple intrinsics with focal-length-in-pixels `fu`, `fv`, no skew.
    pub fn from_pixel_focal(fu: f64, fv: f64, c_u: f64, c_v: f64) -> Self {
        CameraIntrinsics { f: 1.0, s_u: fu, s_v: fv, s_n: 0.0, c_u, c_v }
    }

    pub fn fu(&self) -> f64 {
        self.f * self.s_u
    }

    pub fn fv(&self) -> f64 {
        self.f * self.s_v
    }

    pub fn skew(&self) -> f64 {
        self.f * self.s_n
    }

    /// The 2x3 intrinsic matrix applied after perspective division.
    pub fn k_matrix(&self) -> Matrix2x3<f64> {
        Matrix2x3::new(self.fu(), self.skew(), self.c_u, 0.0, self.fv(), self.c_v)
    }

    /// Pixel coordinates of a normalized (unit-depth) camera point.
    fn pixel_of_normalized(&self, n: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fu() * n.x + self.skew() * n.y + self.c_u, self.fv() * n.y + self.c_v)
    }

    /// Unit-depth ray direction (camera frame) through a pixel.
    pub fn unproject(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        let yn = (pixel.y - self.c_v) / self.fv();
        let xn = (pixel.x - self.c_u - self.skew() * yn) / self.fu();
        Vector3::new(xn, yn, 1.0)
    }
}

/// Perspective division `(x1/x3, x2/x3, 1)`; errors on non-positive depth.
pub fn perspective(x: &Vector3<f64>) -> Result<Vector3<f64>, CameraError> {
    if x.z <= EPS_DEPTH {
        return Err(CameraError::BehindCamera { depth: x.z });
    }
    Ok(Vector3::new(x.x / x.z, x.y / x.z, 1.0))
}

/// Maps object-frame points into the camera frame:
/// `R_c^T (R_o p + p_o - p_c)` applied per point.
pub fn transform_to_camera(
    camera: &Pose,
    object: &Pose,
    points: &[Vector3<f64>],
) -> Vec<Vector3<f64>> {
    let rc_t = camera.rotation_matrix().transpose();
    let ro = object.rotation_matrix();
    let offset = object.translation - camera.translation;
    points.iter().map(|p| rc_t.matrix() * (ro.matrix() * p + offset)).collect()
}

/// Single-point version of [`transform_to_camera`].
pub fn point_to_camera(camera: &Pose, object: &Pose, point: &Vector3<f64>) -> Vector3<f64> {
    let rc_t = camera.rotation_matrix().transpose();
    let ro = object.rotation_matrix();
    rc_t.matrix() * (ro.matrix() * point + object.translation - camera.translation)
}

/// Projected keypoints with per-keypoint validity; keypoints behind the
/// camera are flagged invalid rather than failing the whole frame.
#[derive(Debug, Clone)]
pub struct ProjectedKeypoints {
    pub pixels: Vec<Vector2<f64>>,
    pub valid: Vec<bool>,
    /// Camera-frame depth per keypoint (meaningful where `valid`).
    pub depths: Vec<f64>,
}

/// Projects the mesh keypoints selected by `assoc` into pixels.
pub fn project_keypoints(
    camera: &Pose,
    object: &Pose,
    mesh: &TriMesh,
    assoc: &KeypointAssociation,
    intrinsics: &CameraIntrinsics,
) -> ProjectedKeypoints {
    let cam_points = transform_to_camera(camera, object, &assoc.keypoints(mesh));
    let mut pixels = Vec::with_capacity(cam_points.len());
    let mut valid = Vec::with_capacity(cam_points.len());
    let mut depths = Vec::with_capacity(cam_points.len());
    for p in &cam_points {
        depths.push(p.z);
        if p.z <= EPS_DEPTH {
            pixels.push(Vector2::zeros());
            valid.push(false);
        } else {
            pixels.push(intrinsics.pixel_of_normalized(&Vector3::new(p.x / p.z, p.y / p.z, 1.0)));
            valid.push(true);
        }
    }
    ProjectedKeypoints { pixels, valid, depths }
}

/// Projects arbitrary camera-frame points to pixels; behind-camera points
/// yield None.
pub fn project_camera_points(
    points_cam: &[Vector3<f64>],
    intrinsics: &CameraIntrinsics,
) -> Vec<Option<Vector2<f64>>> {
    points_cam
        .iter()
        .map(|p| {
            if p.z <= EPS_DEPTH {
                None
            } else {
                Some(intrinsics.pixel_of_normalized(&Vector3::new(p.x / p.z, p.y / p.z, 1.0)))
            }
        })
        .collect()
}

/// The five 2x3 derivative blocks of one projected keypoint.
#[derive(Debug, Clone, Copy)]
pub struct KeypointJacobians {
    pub wrt_camera_rotation: Matrix2x3<f64>,
    pub wrt_camera_translation: Matrix2x3<f64>,
    pub wrt_object_rotation: Matrix2x3<f64>,
    pub wrt_object_translation: Matrix2x3<f64>,
    pub wrt_vertex: Matrix2x3<f64>,
}

/// Derivative of the perspective division, carried as 3x3 with a zero third
/// row; the 2x3 intrinsic matrix drops that row in the chain.
pub fn perspective_jacobian(x: &Vector3<f64>) -> Matrix3<f64> {
    let iz = 1.0 / x.z;
    Matrix3::new(iz, 0.0, -x.x * iz * iz, 0.0, iz, -x.y * iz * iz, 0.0, 0.0, 0.0)
}

/// Analytic Jacobians of the pixel projection of object-frame `vertex` with
/// respect to camera rotation/translation, object rotation/translation, and
/// the vertex itself. Pose rotations are parameterized by their axis-angle
/// vectors; right-Jacobian factors map additive axis-angle perturbations
/// onto the rotation manifold.
pub fn keypoint_jacobians(
    camera: &Pose,
    object: &Pose,
    vertex: &Vector3<f64>,
    intrinsics: &CameraIntrinsics,
) -> Result<KeypointJacobians, CameraError> {
    let rc_t = camera.rotation_matrix().transpose();
    let ro = object.rotation_matrix();
    let world = ro.matrix() * vertex + object.translation - camera.translation;
    let gamma = rc_t.matrix() * world;
    if gamma.z <= EPS_DEPTH {
        return Err(CameraError::BehindCamera { depth: gamma.z });
    }

    let front = intrinsics.k_matrix() * perspective_jacobian(&gamma);

    let d_gamma_d_theta_c =
        rc_t.matrix() * hat(&world) * so3_right_jacobian(&AxisAngle(-camera.rotation.0));
    let d_gamma_d_theta_o =
        -rc_t.matrix() * ro.matrix() * hat(vertex) * so3_right_jacobian(&object.rotation);
    let d_gamma_d_p_c = -rc_t.matrix();
    let d_gamma_d_p_o = *rc_t.matrix();
    let d_gamma_d_vertex = rc_t.matrix() * ro.matrix();

    Ok(KeypointJacobians {
        wrt_camera_rotation: front * d_gamma_d_theta_c,
        wrt_camera_translation: front * d_gamma_d_p_c,
        wrt_object_rotation: front * d_gamma_d_theta_o,
        wrt_object_translation: front * d_gamma_d_p_o,
        wrt_vertex: front * d_gamma_d_vertex,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liegroup::{pose_compose, pose_inverse};
    use crate::mesh::make_icosphere;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::from_pixel_focal(500.0, 500.0, 320.0, 240.0)
    }

    fn random_pose(rng: &mut impl Rng, max_angle: f64, max_trans: f64) -> Pose {
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
        .normalize();
        let t = if max_trans > 0.0 {
            Vector3::new(
                rng.gen_range(-max_trans..max_trans),
                rng.gen_range(-max_trans..max_trans),
                rng.gen_range(-max_trans..max_trans),
            )
        } else {
            Vector3::zeros()
        };
        Pose::new(AxisAngle(axis * rng.gen_range(0.0..max_angle)), t)
    }

    /// Camera/object pair with the object placed in front of the camera.
    fn random_scene(rng: &mut impl Rng) -> (Pose, Pose) {
        let camera = random_pose(rng, 2.5, 3.0);
        let forward = camera.rotation_matrix().matrix() * Vector3::z();
        let lateral = camera.rotation_matrix().matrix()
            * Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0);
        let mut object = random_pose(rng, 2.5, 0.0);
        object.translation = camera.translation + forward * rng.gen_range(4.0..8.0) + lateral;
        (camera, object)
    }

    #[test]
    fn perspective_divides_by_depth() {
        let p = perspective(&Vector3::new(2.0, 4.0, 2.0)).unwrap();
        assert_eq!(p, Vector3::new(1.0, 2.0, 1.0));
        let p = perspective(&Vector3::new(0.0, 0.0, 5.0)).unwrap();
        assert_eq!(p, Vector3::new(0.0, 0.0, 1.0));
        assert!(perspective(&Vector3::new(1.0, 1.0, 0.0)).is_err());
    }

    #[test]
    fn identity_poses_leave_points_unchanged() {
        let pts = vec![Vector3::new(0.3, -0.2, 5.0), Vector3::new(1.0, 2.0, 3.0)];
        let out = transform_to_camera(&Pose::identity(), &Pose::identity(), &pts);
        assert_eq!(pts, out);
    }

    #[test]
    fn object_translation_shifts_points() {
        let t = Vector3::new(0.5, -1.0, 2.0);
        let obj = Pose::new(AxisAngle::zero(), t);
        let pts = vec![Vector3::new(0.1, 0.2, 0.3)];
        let out = transform_to_camera(&Pose::identity(), &obj, &pts);
        assert!((out[0] - (pts[0] + t)).norm() < 1e-15);
    }

    #[test]
    fn transform_matches_pose_composition_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let (camera, object) = random_scene(&mut rng);
            let pts: Vec<Vector3<f64>> = (0..5)
                .map(|_| {
                    Vector3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    )
                })
                .collect();
            let direct = transform_to_camera(&camera, &object, &pts);
            let composed = pose_compose(&pose_inverse(&camera), &object);
            for (p, d) in pts.iter().zip(&direct) {
                assert!((composed.transform_point(p) - d).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn principal_point_and_focal_scaling() {
        let k = test_intrinsics();
        let mesh = TriMesh::new(
            vec![Vector3::new(0.0, 0.0, 5.0), Vector3::new(1.0, 0.0, 5.0), Vector3::y()],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let assoc = KeypointAssociation::new(vec![0, 1], &mesh).unwrap();
        let proj = project_keypoints(&Pose::identity(), &Pose::identity(), &mesh, &assoc, &k);
        assert!(proj.valid[0] && proj.valid[1]);
        assert!((proj.pixels[0] - Vector2::new(320.0, 240.0)).norm() < 1e-12);
        assert!((proj.pixels[1] - Vector2::new(420.0, 240.0)).norm() < 1e-12);
    }

    #[test]
    fn behind_camera_keypoints_flagged_invalid() {
        let k = test_intrinsics();
        let mesh = TriMesh::new(
            vec![Vector3::new(0.0, 0.0, 5.0), Vector3::new(0.0, 0.0, -5.0), Vector3::y()],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let assoc = KeypointAssociation::new(vec![0, 1], &mesh).unwrap();
        let proj = project_keypoints(&Pose::identity(), &Pose::identity(), &mesh, &assoc, &k);
        assert!(proj.valid[0]);
        assert!(!proj.valid[1]);
    }

    #[test]
    fn projection_matches_homogeneous_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let k = CameraIntrinsics {
            f: 0.01,
            s_u: 52_000.0,
            s_v: 49_000.0,
            s_n: 120.0,
            c_u: 310.0,
            c_v: 245.0,
        };
        for _ in 0..100 {
            let (camera, object) = random_scene(&mut rng);
            let mesh = make_icosphere(0, 0.8);
            let assoc = KeypointAssociation::new(vec![0, 3, 7], &mesh).unwrap();
            let proj = project_keypoints(&camera, &object, &mesh, &assoc, &k);

            // Independent oracle: 3x4 homogeneous projection from nalgebra
            // isometries (quaternion rotations).
            let iso_c = nalgebra::Isometry3::from_parts(
                nalgebra::Translation3::from(camera.translation),
                nalgebra::UnitQuaternion::from_scaled_axis(camera.rotation.0),
            );
            let iso_o = nalgebra::Isometry3::from_parts(
                nalgebra::Translation3::from(object.translation),
                nalgebra::UnitQuaternion::from_scaled_axis(object.rotation.0),
            );
            let obj_to_cam = (iso_c.inverse() * iso_o).to_homogeneous();
            let k3 = Matrix3::new(k.fu(), k.skew(), k.c_u, 0.0, k.fv(), k.c_v, 0.0, 0.0, 1.0);
            let p34 = k3 * obj_to_cam.fixed_view::<3, 4>(0, 0);
            for (i, &vi) in assoc.vertex_indices().iter().enumerate() {
                let v = mesh.vertices[vi];
                let h = p34 * nalgebra::Vector4::new(v.x, v.y, v.z, 1.0);
                let oracle = Vector2::new(h.x / h.z, h.y / h.z);
                assert!(proj.valid[i]);
                assert!(
                    (proj.pixels[i] - oracle).norm() < 1e-10,
                    "pixel {:?} vs oracle {:?}",
                    proj.pixels[i],
                    oracle
                );
            }
        }
    }

    #[test]
    fn translating_camera_and_object_together_preserves_pixels() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let k = test_intrinsics();
        let mesh = make_icosphere(0, 0.5);
        let assoc = KeypointAssociation::new(vec![1, 5, 9], &mesh).unwrap();
        for _ in 0..50 {
            let (camera, object) = random_scene(&mut rng);
            let shift = Vector3::new(
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
            );
            let cam2 = Pose::new(camera.rotation, camera.translation + shift);
            let obj2 = Pose::new(object.rotation, object.translation + shift);
            let a = project_keypoints(&camera, &object, &mesh, &assoc, &k);
            let b = project_keypoints(&cam2, &obj2, &mesh, &assoc, &k);
            for i in 0..assoc.keypoint_count() {
                assert!((a.pixels[i] - b.pixels[i]).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn jacobian_blocks_at_identity_poses() {
        let k = test_intrinsics();
        let v = Vector3::new(0.0, 0.0, 4.0);
        let j = keypoint_jacobians(&Pose::identity(), &Pose::identity(), &v, &k).unwrap();
        // d gamma / d p_o = I and d gamma / d p_c = -I, so the pixel blocks
        // must be exact negatives.
        assert!((j.wrt_object_translation + j.wrt_camera_translation).norm() < 1e-12);
        // With theta_o = 0: d gamma / d theta_o = -hat(v).
        let front = k.k_matrix() * perspective_jacobian(&v);
        let expected = -front * hat(&v);
        assert!((j.wrt_object_rotation - expected).norm() < 1e-12);
    }

    /// Central finite differences of the projection wrt one parameter block.
    fn fd_block(
        camera: &Pose,
        object: &Pose,
        vertex: &Vector3<f64>,
        k: &CameraIntrinsics,
        which: usize,
        h: f64,
    ) -> Matrix2x3<f64> {
        let project = |camera: &Pose, object: &Pose, vertex: &Vector3<f64>| -> Vector2<f64> {
            let gamma = point_to_camera(camera, object, vertex);
            let n = perspective(&gamma).unwrap();
            k.k_matrix() * n
        };
        let mut out = Matrix2x3::zeros();
        for axis in 0..3 {
            let mut delta = Vector3::zeros();
            delta[axis] = h;
            let (pp, pm) = match which {
                0 => (
                    project(
                        &Pose::new(AxisAngle(camera.rotation.0 + delta), camera.translation),
                        object,
                        vertex,
                    ),
                    project(
                        &Pose::new(AxisAngle(camera.rotation.0 - delta), camera.translation),
                        object,
                        vertex,
                    ),
                ),
                1 => (
                    project(
                        &Pose::new(camera.rotation, camera.translation + delta),
                        object,
                        vertex,
                    ),
                    project(
                        &Pose::new(camera.rotation, camera.translation - delta),
                        object,
                        vertex,
                    ),
                ),
                2 => (
                    project(
                        camera,
                        &Pose::new(AxisAngle(object.rotation.0 + delta), object.translation),
                        vertex,
                    ),
                    project(
                        camera,
                        &Pose::new(AxisAngle(object.rotation.0 - delta), object.translation),
                        vertex,
                    ),
                ),
                3 => (
                    project(
                        camera,
                        &Pose::new(object.rotation, object.translation + delta),
                        vertex,
                    ),
                    project(
                        camera,
                        &Pose::new(object.rotation, object.translation - delta),
                        vertex,
                    ),
                ),
                _ => (
                    project(camera, object, &(vertex + delta)),
                    project(camera, object, &(vertex - delta)),
                ),
            };
            let col = (pp - pm) / (2.0 * h);
            out.set_column(axis, &col);
        }
        out
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let k = test_intrinsics();
        for config in 0..200 {
            let (camera, object) = random_scene(&mut rng);
            let vertex = Vector3::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            );
            let j = match keypoint_jacobians(&camera, &object, &vertex, &k) {
                Ok(j) => j,
                Err(_) => continue, // vertex fell behind the camera
            };
            let blocks = [
                ("camera_rotation", j.wrt_camera_rotation),
                ("camera_translation", j.wrt_camera_translation),
                ("object_rotation", j.wrt_object_rotation),
                ("object_translation", j.wrt_object_translation),
                ("vertex", j.wrt_vertex),
            ];
            for (which, (name, analytic)) in blocks.iter().enumerate() {
                let fd = fd_block(&camera, &object, &vertex, &k, which, 1e-6);
                let rel = (analytic - fd).norm() / fd.norm().max(1e-9);
                assert!(
                    rel < 1e-6,
                    "config {config}, block {name}: rel err {rel:.3e}\nanalytic {analytic}\nfd {fd}"
                );
            }
        }
    }

    #[test]
    fn unproject_inverts_projection() {
        let k = CameraIntrinsics {
            f: 0.008,
            s_u: 61_000.0,
            s_v: 60_000.0,
            s_n: 35.0,
            c_u: 330.0,
            c_v: 250.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        for _ in 0..50 {
            let p = Vector3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(0.5..10.0),
            );
            let pix = k.pixel_of_normalized(&perspective(&p).unwrap());
            let ray = k.unproject(&pix);
            assert!((ray * p.z - p).norm() < 1e-9);
        }
    }
}
