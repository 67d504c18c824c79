//! Multi-view keypoint triangulation: midpoint initialization from the
//! widest-baseline ray pair, then Levenberg-Marquardt refinement of the
//! reprojection error over all views.

use crate::camera::{perspective_jacobian, CameraIntrinsics, EPS_DEPTH};
use crate::liegroup::Pose;
use nalgebra::{Matrix3, Vector2, Vector3};

#[derive(Debug, Clone, Copy)]
pub struct TriangulatedKeypoint {
    pub position: Vector3<f64>,
    pub valid: bool,
    /// Number of views that contributed.
    pub views: usize,
}

/// Triangulates each keypoint independently from its per-view pixel
/// measurements. A keypoint is invalid when it has fewer than two views or
/// when no ray pair subtends at least `min_angle_rad`.
pub fn triangulate_keypoints(
    observations: &[Vec<(usize, Vector2<f64>)>],
    cameras: &[Pose],
    intrinsics: &CameraIntrinsics,
    min_angle_rad: f64,
) -> Vec<TriangulatedKeypoint> {
    observations
        .iter()
        .map(|obs| triangulate_one(obs, cameras, intrinsics, min_angle_rad))
        .collect()
}

fn triangulate_one(
    obs: &[(usize, Vector2<f64>)],
    cameras: &[Pose],
    intrinsics: &CameraIntrinsics,
    min_angle_rad: f64,
) -> TriangulatedKeypoint {
    let invalid =
        TriangulatedKeypoint { position: Vector3::zeros(), valid: false, views: obs.len() };
    if obs.len() < 2 {
        return invalid;
    }

    // World-frame rays through each measurement.
    let rays: Vec<(Vector3<f64>, Vector3<f64>)> = obs
        .iter()
        .map(|(cam_idx, pixel)| {
            let cam = &cameras[*cam_idx];
            let dir = cam.rotation_matrix().matrix() * intrinsics.unproject(pixel);
            (cam.translation, dir.normalize())
        })
        .collect();

    // Widest-baseline pair for the midpoint initialization.
    let mut best = (0usize, 1usize, -1.0f64);
    for i in 0..rays.len() {
        for j in (i + 1)..rays.len() {
            let angle = rays[i].1.dot(&rays[j].1).clamp(-1.0, 1.0).acos();
            if angle > best.2 {
                best = (i, j, angle);
            }
        }
    }
    if best.2 < min_angle_rad {
        return invalid;
    }
    let Some(mut point) = ray_midpoint(&rays[best.0], &rays[best.1]) else {
        return invalid;
    };

    // Levenberg-Marquardt on the stacked reprojection error.
    let cost = |p: &Vector3<f64>| -> (f64, Vector3<f64>, Matrix3<f64>) {
        let mut cost = 0.0;
        let mut jtr = Vector3::zeros();
        let mut jtj = Matrix3::zeros();
        for (cam_idx, pixel) in obs {
            let cam = &cameras[*cam_idx];
            let rct = cam.rotation_matrix().transpose();
            let gamma = rct.matrix() * (p - cam.translation);
            if gamma.z <= EPS_DEPTH {
                continue;
            }
            let proj = Vector2::new(
                intrinsics.fu() * gamma.x / gamma.z
                    + intrinsics.skew() * gamma.y / gamma.z
                    + intrinsics.c_u,
                intrinsics.fv() * gamma.y / gamma.z + intrinsics.c_v,
            );
            let r = proj - pixel;
            cost += r.norm_squared();
            let jac = intrinsics.k_matrix() * perspective_jacobian(&gamma) * rct.matrix();
            jtr += jac.transpose() * r;
            jtj += jac.transpose() * jac;
        }
        (cost, jtr, jtj)
    };

    let (mut current_cost, mut jtr, mut jtj) = cost(&point);
    let mut lambda = 1e-3;
    for _ in 0..100 {
        let damped = jtj + Matrix3::identity() * lambda;
        let Some(step) = damped.lu().solve(&(-jtr)) else {
            break;
        };
        let candidate = point + step;
        let (c, njtr, njtj) = cost(&candidate);
        if c < current_cost {
            let rel_change = (current_cost - c) / current_cost.max(1e-300);
            point = candidate;
            current_cost = c;
            jtr = njtr;
            jtj = njtj;
            lambda = (lambda * 0.1).max(1e-12);
            if rel_change < 1e-10 {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e10 {
                break;
            }
        }
    }

    TriangulatedKeypoint { position: point, valid: true, views: obs.len() }
}

/// Midpoint of the shortest segment between two rays.
fn ray_midpoint(
    a: &(Vector3<f64>, Vector3<f64>),
    b: &(Vector3<f64>, Vector3<f64>),
) -> Option<Vector3<f64>> {
    let (oa, da) = a;
    let (ob, db) = b;
    let r = oa - ob;
    let a11 = da.dot(da);
    let a12 = -da.dot(db);
    let a22 = db.dot(db);
    let det = a11 * a22 - a12 * a12;
    if det.abs() < 1e-12 {
        return None;
    }
    let b1 = -da.dot(&r);
    let b2 = db.dot(&r);
    let t = (b1 * a22 - b2 * a12) / det;
    let s = (a11 * b2 - a12 * b1) / det;
    Some(((oa + da * t) + (ob + db * s)) / 2.0)
}
