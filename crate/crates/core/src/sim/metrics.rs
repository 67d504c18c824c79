//! Trajectory and mapping evaluation metrics.

use super::SimError;
use crate::camera::{transform_to_camera, CameraIntrinsics};
use crate::estimator::kabsch_align;
use crate::liegroup::Pose;
use crate::losses::mask_loss;
use crate::mesh::{voxel_iou, voxelize_on_grid, GridSpec, TriMesh};
use crate::raster::rasterize_silhouette;
use nalgebra::Vector3;

/// Root-mean-square positional error between two equally long trajectories,
/// optionally after rigid alignment of the estimate onto the truth.
pub fn ate(
    estimated: &[(f64, Pose)],
    ground_truth: &[(f64, Pose)],
    align: bool,
) -> Result<f64, SimError> {
    if estimated.len() != ground_truth.len() {
        return Err(SimError::TrajectoryLengthMismatch {
            left: estimated.len(),
            right: ground_truth.len(),
        });
    }
    if estimated.is_empty() {
        return Ok(0.0);
    }
    let est: Vec<Vector3<f64>> = estimated.iter().map(|(_, p)| p.translation).collect();
    let gt: Vec<Vector3<f64>> = ground_truth.iter().map(|(_, p)| p.translation).collect();
    let errors: Vec<f64> = if align {
        let pose = kabsch_align(&est, &gt)?;
        est.iter().zip(&gt).map(|(e, g)| (pose.transform_point(e) - g).norm()).collect()
    } else {
        est.iter().zip(&gt).map(|(e, g)| (e - g).norm()).collect()
    };
    let mse = errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64;
    Ok(mse.sqrt())
}

/// Mapping quality of one estimated object against its ground truth.
#[derive(Debug, Clone)]
pub struct MappingReport {
    pub per_view_mask_iou: Vec<f64>,
    pub mean_mask_iou: f64,
    /// None when a mesh is not closed (solid voxelization undefined).
    pub voxel_iou: Option<f64>,
    pub warnings: Vec<String>,
}

/// Compares silhouettes per view and voxelized volumes in the world frame.
#[allow(clippy::too_many_arguments)]
pub fn mapping_report(
    gt_mesh: &TriMesh,
    gt_pose: &Pose,
    est_mesh: &TriMesh,
    est_pose: &Pose,
    views: &[Pose],
    intrinsics: &CameraIntrinsics,
    width: usize,
    height: usize,
    voxel_resolution: usize,
) -> Result<MappingReport, SimError> {
    let mut per_view = Vec::with_capacity(views.len());
    for camera in views {
        let gt_cam = transform_to_camera(camera, gt_pose, &gt_mesh.vertices);
        let (gt_sil, _) = rasterize_silhouette(&gt_cam, &gt_mesh.faces, intrinsics, width, height)?;
        let est_cam = transform_to_camera(camera, est_pose, &est_mesh.vertices);
        let (est_sil, _) =
            rasterize_silhouette(&est_cam, &est_mesh.faces, intrinsics, width, height)?;
        per_view.push(-mask_loss(&gt_sil, &est_sil)?);
    }
    let mean_mask_iou = if per_view.is_empty() {
        0.0
    } else {
        per_view.iter().sum::<f64>() / per_view.len() as f64
    };

    let mut warnings = Vec::new();
    let gt_world = world_mesh(gt_mesh, gt_pose);
    let est_world = world_mesh(est_mesh, est_pose);
    let voxel = if !gt_world.is_closed() || !est_world.is_closed() {
        warnings.push("open mesh: voxel IoU omitted".to_string());
        None
    } else {
        let (amin, amax) = vertex_bounds(&gt_world);
        let (bmin, bmax) = vertex_bounds(&est_world);
        let spec = GridSpec::fit(amin.inf(&bmin), amax.sup(&bmax), voxel_resolution);
        let ga = voxelize_on_grid(&gt_world, spec)?;
        let gb = voxelize_on_grid(&est_world, spec)?;
        Some(voxel_iou(&ga, &gb)?)
    };
    Ok(MappingReport { per_view_mask_iou: per_view, mean_mask_iou, voxel_iou: voxel, warnings })
}

fn world_mesh(mesh: &TriMesh, pose: &Pose) -> TriMesh {
    TriMesh {
        vertices: mesh.vertices.iter().map(|v| pose.transform_point(v)).collect(),
        faces: mesh.faces.clone(),
    }
}

fn vertex_bounds(mesh: &TriMesh) -> (Vector3<f64>, Vector3<f64>) {
    let mut min = Vector3::repeat(f64::INFINITY);
    let mut max = Vector3::repeat(f64::NEG_INFINITY);
    for v in &mesh.vertices {
        min = min.inf(v);
        max = max.sup(v);
    }
    (min, max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::test_support::look_at;
    use crate::liegroup::AxisAngle;
    use crate::mesh::make_icosphere;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wavy_trajectory(n: usize) -> Vec<(f64, Pose)> {
        (0..n)
            .map(|i| {
                let t = i as f64;
                (
                    t,
                    Pose::new(
                        AxisAngle::new(0.0, 0.0, 0.1 * t),
                        Vector3::new(t, (t * 0.7).sin(), 0.3 * (t * 0.4).cos()),
                    ),
                )
            })
            .collect()
    }

    #[test]
    fn identical_trajectories_have_zero_ate() {
        let t = wavy_trajectory(20);
        assert_eq!(ate(&t, &t, false).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_gives_offset_ate() {
        let gt = wavy_trajectory(20);
        let offset = Vector3::new(0.3, -0.4, 0.0);
        let est: Vec<(f64, Pose)> = gt
            .iter()
            .map(|(t, p)| (*t, Pose::new(p.rotation, p.translation + offset)))
            .collect();
        let err = ate(&est, &gt, false).unwrap();
        assert!((err - 0.5).abs() < 1e-12);
        // Rigid alignment removes the offset entirely.
        let aligned = ate(&est, &gt, true).unwrap();
        assert!(aligned < 1e-9, "aligned ATE {aligned:.2e}");
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let gt = wavy_trajectory(10);
        let est = wavy_trajectory(11);
        assert!(ate(&est, &gt, false).is_err());
    }

    #[test]
    fn identical_objects_have_unit_ious() {
        let mesh = make_icosphere(2, 0.7);
        let pose = Pose::new(AxisAngle::new(0.1, 0.2, 0.0), Vector3::new(0.2, 0.0, 0.1));
        let views = vec![
            look_at(Vector3::new(4.0, 0.0, 1.0), Vector3::zeros()),
            look_at(Vector3::new(0.0, 4.0, 1.5), Vector3::zeros()),
        ];
        let k = CameraIntrinsics::from_pixel_focal(110.0, 110.0, 64.0, 64.0);
        let r = mapping_report(&mesh, &pose, &mesh, &pose, &views, &k, 128, 128, 48).unwrap();
        for iou in &r.per_view_mask_iou {
            assert_eq!(*iou, 1.0);
        }
        assert_eq!(r.voxel_iou, Some(1.0));
    }

    #[test]
    fn open_mesh_omits_voxel_iou_with_warning() {
        let mesh = make_icosphere(1, 0.7);
        let mut open = mesh.clone();
        open.faces.pop();
        let views = vec![look_at(Vector3::new(4.0, 0.0, 1.0), Vector3::zeros())];
        let k = CameraIntrinsics::from_pixel_focal(110.0, 110.0, 64.0, 64.0);
        let r = mapping_report(
            &mesh,
            &Pose::identity(),
            &open,
            &Pose::identity(),
            &views,
            &k,
            96,
            96,
            32,
        )
        .unwrap();
        assert!(r.voxel_iou.is_none());
        assert!(!r.warnings.is_empty());
    }

    #[test]
    fn sphere_vs_ellipsoid_voxel_iou_matches_monte_carlo() {
        let sphere = make_icosphere(3, 0.62);
        let ellipsoid = make_icosphere(3, 1.0).scaled(Vector3::new(1.0, 0.6, 0.4));
        let views: Vec<Pose> = vec![look_at(Vector3::new(4.0, 0.0, 1.0), Vector3::zeros())];
        let k = CameraIntrinsics::from_pixel_focal(110.0, 110.0, 64.0, 64.0);
        let r = mapping_report(
            &ellipsoid,
            &Pose::identity(),
            &sphere,
            &Pose::identity(),
            &views,
            &k,
            96,
            96,
            64,
        )
        .unwrap();
        let voxel = r.voxel_iou.unwrap();

        // Fine Monte-Carlo oracle on the analytic solids.
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        let (mut inter, mut union) = (0usize, 0usize);
        for _ in 0..2_000_000 {
            let p = Vector3::new(
                rng.gen_range(-1.05..1.05),
                rng.gen_range(-1.05..1.05),
                rng.gen_range(-1.05..1.05),
            );
            let in_sphere = p.norm_squared() <= 0.62 * 0.62;
            let e = (p.x / 1.0) * (p.x / 1.0)
                + (p.y / 0.6) * (p.y / 0.6)
                + (p.z / 0.4) * (p.z / 0.4);
            let in_ellipsoid = e <= 1.0;
            if in_sphere && in_ellipsoid {
                inter += 1;
            }
            if in_sphere || in_ellipsoid {
                union += 1;
            }
        }
        let analytic = inter as f64 / union as f64;
        assert!(
            (voxel - analytic).abs() < 0.03,
            "voxel IoU {voxel:.4} vs Monte-Carlo {analytic:.4}"
        );
    }
}
