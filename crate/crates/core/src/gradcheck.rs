//! Finite-difference verification suites over every analytic gradient in
//! the crate: the five keypoint-projection Jacobian blocks, the mask and
//! keypoint loss gradients, and the curvature-energy gradient.
//!
//! Each suite reports the max relative error over its samples together with
//! the tolerance it must meet. A fault-injection hook flips the sign of one
//! named block so the failure path itself is verifiable end to end.

use crate::camera::{
    keypoint_jacobians, perspective, point_to_camera, CameraIntrinsics,
};
use crate::liegroup::{AxisAngle, Pose};
use crate::losses::{kps_loss, kps_loss_grad, mask_loss, mask_loss_grad, Visibility};
use crate::mesh::{curvature_energy, make_icosphere};
use crate::raster::MaskImage;
use nalgebra::{Matrix2x3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Verification outcome of one gradient block.
#[derive(Debug, Clone)]
pub struct BlockReport {
    pub name: &'static str,
    pub samples: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl BlockReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub blocks: Vec<BlockReport>,
}

impl GradcheckReport {
    pub fn all_passed(&self) -> bool {
        self.blocks.iter().all(BlockReport::passed)
    }

    pub fn failing(&self) -> Vec<&BlockReport> {
        self.blocks.iter().filter(|b| !b.passed()).collect()
    }
}

/// Sign-flip fault injection for exercising the failure path.
#[derive(Debug, Clone, Default)]
pub enum FaultInjection {
    #[default]
    None,
    /// Negates the named analytic block before comparison.
    FlipBlock(String),
}

impl FaultInjection {
    fn applies_to(&self, name: &str) -> bool {
        matches!(self, FaultInjection::FlipBlock(n) if n == name)
    }
}

pub const JACOBIAN_BLOCK_NAMES: [&str; 5] = [
    "camera_rotation",
    "camera_translation",
    "object_rotation",
    "object_translation",
    "vertex",
];

/// Runs every suite. `jacobian_samples` random configurations feed the five
/// Jacobian blocks (tolerance 1e-5 at step 1e-6); 100 random continuous
/// instances feed each loss gradient (tolerance 1e-8); 10 perturbed meshes
/// feed the curvature gradient (tolerance 1e-6).
pub fn run_gradcheck(jacobian_samples: usize, seed: u64, fault: &FaultInjection) -> GradcheckReport {
    let mut blocks = jacobian_blocks(jacobian_samples, seed, fault);
    blocks.push(mask_loss_block(100, seed ^ 0x6d61736b, fault));
    blocks.push(kps_loss_block(100, seed ^ 0x6b707321, fault));
    blocks.push(curvature_block(10, seed ^ 0x63757276, fault));
    GradcheckReport { blocks }
}

fn random_scene(rng: &mut impl Rng) -> (Pose, Pose, Vector3<f64>) {
    let rand_axis = |rng: &mut dyn rand::RngCore| {
        Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
        .normalize()
    };
    let camera = Pose::new(
        AxisAngle(rand_axis(rng) * rng.gen_range(0.0..2.5)),
        Vector3::new(
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
        ),
    );
    let forward = camera.rotation_matrix().matrix() * Vector3::z();
    let lateral = camera.rotation_matrix().matrix()
        * Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0);
    let object = Pose::new(
        AxisAngle(rand_axis(rng) * rng.gen_range(0.0..2.5)),
        camera.translation + forward * rng.gen_range(4.0..8.0) + lateral,
    );
    let vertex = Vector3::new(
        rng.gen_range(-0.5..0.5),
        rng.gen_range(-0.5..0.5),
        rng.gen_range(-0.5..0.5),
    );
    (camera, object, vertex)
}

fn jacobian_blocks(samples: usize, seed: u64, fault: &FaultInjection) -> Vec<BlockReport> {
    let k = CameraIntrinsics::from_pixel_focal(500.0, 500.0, 320.0, 240.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_err = [0.0f64; 5];
    let mut counted = [0usize; 5];
    let h = 1e-6;

    let project = |camera: &Pose, object: &Pose, vertex: &Vector3<f64>| -> Option<Vector2<f64>> {
        let gamma = point_to_camera(camera, object, vertex);
        perspective(&gamma).ok().map(|n| k.k_matrix() * n)
    };

    let mut produced = 0usize;
    while produced < samples {
        let (camera, object, vertex) = random_scene(&mut rng);
        let Ok(jac) = keypoint_jacobians(&camera, &object, &vertex, &k) else {
            continue;
        };
        produced += 1;
        let analytic = [
            jac.wrt_camera_rotation,
            jac.wrt_camera_translation,
            jac.wrt_object_rotation,
            jac.wrt_object_translation,
            jac.wrt_vertex,
        ];
        for (which, name) in JACOBIAN_BLOCK_NAMES.iter().enumerate() {
            let mut fd = Matrix2x3::zeros();
            let mut ok = true;
            for axis in 0..3 {
                let mut delta = Vector3::zeros();
                delta[axis] = h;
                let pair = match which {
                    0 => (
                        project(
                            &Pose::new(AxisAngle(camera.rotation.0 + delta), camera.translation),
                            &object,
                            &vertex,
                        ),
                        project(
                            &Pose::new(AxisAngle(camera.rotation.0 - delta), camera.translation),
                            &object,
                            &vertex,
                        ),
                    ),
                    1 => (
                        project(
                            &Pose::new(camera.rotation, camera.translation + delta),
                            &object,
                            &vertex,
                        ),
                        project(
                            &Pose::new(camera.rotation, camera.translation - delta),
                            &object,
                            &vertex,
                        ),
                    ),
                    2 => (
                        project(
                            &camera,
                            &Pose::new(AxisAngle(object.rotation.0 + delta), object.translation),
                            &vertex,
                        ),
                        project(
                            &camera,
                            &Pose::new(AxisAngle(object.rotation.0 - delta), object.translation),
                            &vertex,
                        ),
                    ),
                    3 => (
                        project(
                            &camera,
                            &Pose::new(object.rotation, object.translation + delta),
                            &vertex,
                        ),
                        project(
                            &camera,
                            &Pose::new(object.rotation, object.translation - delta),
                            &vertex,
                        ),
                    ),
                    _ => (
                        project(&camera, &object, &(vertex + delta)),
                        project(&camera, &object, &(vertex - delta)),
                    ),
                };
                match pair {
                    (Some(pp), Some(pm)) => fd.set_column(axis, &((pp - pm) / (2.0 * h))),
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                continue;
            }
            let mut a = analytic[which];
            if fault.applies_to(name) {
                a = -a;
            }
            let rel = (a - fd).norm() / fd.norm().max(1e-9);
            max_err[which] = max_err[which].max(rel);
            counted[which] += 1;
        }
    }

    JACOBIAN_BLOCK_NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| BlockReport {
            name,
            samples: counted[i],
            max_rel_err: max_err[i],
            tolerance: 1e-5,
        })
        .collect()
}

fn mask_loss_block(samples: usize, seed: u64, fault: &FaultInjection) -> BlockReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel: f64 = 0.0;
    let (w, h) = (9usize, 7usize);
    for _ in 0..samples {
        let mut s = MaskImage::zeros(w, h);
        let mut s_hat = MaskImage::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                if rng.gen_bool(0.5) {
                    s.set(x, y, 1.0);
                }
                s_hat.set(x, y, rng.gen_range(0.05..0.95));
            }
        }
        let grad = mask_loss_grad(&s, &s_hat).expect("same dims");
        let step = 1e-4;
        for _ in 0..4 {
            let x = rng.gen_range(0..w);
            let y = rng.gen_range(0..h);
            let mut plus = s_hat.clone();
            plus.set(x, y, plus.get(x, y) + step);
            let mut minus = s_hat.clone();
            minus.set(x, y, minus.get(x, y) - step);
            let fd = (mask_loss(&s, &plus).unwrap() - mask_loss(&s, &minus).unwrap())
                / (2.0 * step);
            let mut an = grad.get(x, y);
            if fault.applies_to("mask_loss") {
                an = -an;
            }
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-12);
            max_rel = max_rel.max(rel);
        }
    }
    BlockReport { name: "mask_loss", samples, max_rel_err: max_rel, tolerance: 1e-8 }
}

fn kps_loss_block(samples: usize, seed: u64, fault: &FaultInjection) -> BlockReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel: f64 = 0.0;
    for _ in 0..samples {
        let n = rng.gen_range(3..9);
        let y: Vec<Vector2<f64>> = (0..n)
            .map(|_| Vector2::new(rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0)))
            .collect();
        let y_hat: Vec<Vector2<f64>> = (0..n)
            .map(|_| Vector2::new(rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0)))
            .collect();
        let detected: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.85)).collect();
        let visible: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.85)).collect();
        let vis = Visibility::index_aligned(&detected, &visible).unwrap();
        let grad = kps_loss_grad(&y, &y_hat, &vis).unwrap();
        // The loss is quadratic: the central difference is exact at any
        // step, so a large step leaves only rounding noise.
        let step = 0.5;
        for k in 0..n {
            for axis in 0..2 {
                let mut plus = y_hat.clone();
                plus[k][axis] += step;
                let mut minus = y_hat.clone();
                minus[k][axis] -= step;
                let fd = (kps_loss(&y, &plus, &vis).unwrap()
                    - kps_loss(&y, &minus, &vis).unwrap())
                    / (2.0 * step);
                let mut an = grad[k][axis];
                if fault.applies_to("kps_loss") {
                    an = -an;
                }
                // Zero-zero entries (unmatched keypoints) are exact.
                if fd == 0.0 && an == 0.0 {
                    continue;
                }
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-12);
                max_rel = max_rel.max(rel);
            }
        }
    }
    BlockReport { name: "kps_loss", samples, max_rel_err: max_rel, tolerance: 1e-8 }
}

fn curvature_block(samples: usize, seed: u64, fault: &FaultInjection) -> BlockReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel: f64 = 0.0;
    for _ in 0..samples {
        let mut mesh = make_icosphere(1, 1.0);
        for v in &mut mesh.vertices {
            *v += Vector3::new(
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.2..0.2),
            );
        }
        let (_, grad) = curvature_energy(&mesh).unwrap();
        let h = 1e-6;
        for _ in 0..6 {
            let vi = rng.gen_range(0..mesh.vertex_count());
            let axis = rng.gen_range(0..3);
            let mut plus = mesh.clone();
            plus.vertices[vi][axis] += h;
            let mut minus = mesh.clone();
            minus.vertices[vi][axis] -= h;
            let fd = (curvature_energy(&plus).unwrap().0 - curvature_energy(&minus).unwrap().0)
                / (2.0 * h);
            let mut an = grad[vi][axis];
            if fault.applies_to("curvature") {
                an = -an;
            }
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-9);
            max_rel = max_rel.max(rel);
        }
    }
    BlockReport { name: "curvature", samples, max_rel_err: max_rel, tolerance: 1e-6 }
}
