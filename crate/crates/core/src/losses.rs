//! Mask and keypoint loss functions, their analytic gradients, and the
//! weighted joint objective over frames and objects.
//!
//! The mask loss is the negative soft IoU
//! `-|s . s_hat| / |s + s_hat - s . s_hat|` (elementwise product, L1 sums);
//! the keypoint loss is the squared Frobenius norm of matched keypoint
//! residuals. Both gradients are exact; only the rasterizer backward pass
//! used to push mask gradients onto vertices is approximate.

use crate::camera::{keypoint_jacobians, transform_to_camera, CameraIntrinsics, EPS_DEPTH};
use crate::liegroup::Pose;
use crate::mesh::{KeypointAssociation, TriMesh};
use crate::raster::{
    rasterize_backward, rasterize_silhouette, vertex_visibility, MaskImage, PixelField,
    RasterError,
};
use nalgebra::{Vector2, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("mask dimensions {a_w}x{a_h} vs {b_w}x{b_h} do not match")]
    DimensionMismatch { a_w: usize, a_h: usize, b_w: usize, b_h: usize },
    #[error("{what} count mismatch: {left} vs {right}")]
    CountMismatch { what: &'static str, left: usize, right: usize },
    #[error("visibility maps model keypoint {model} twice")]
    DuplicateMatch { model: usize },
    #[error("term {term} references missing {what} {index} (have {len})")]
    MissingAssociation { term: usize, what: &'static str, index: usize, len: usize },
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// Binary selection matching detected keypoint columns to model keypoints;
/// at most one match per detected keypoint and per model keypoint. Detected
/// keypoints with no match are dropped from the residual.
#[derive(Debug, Clone)]
pub struct Visibility {
    model_count: usize,
    matches: Vec<Option<usize>>,
}

impl Visibility {
    pub fn new(model_count: usize, matches: Vec<Option<usize>>) -> Result<Self, LossError> {
        let mut seen = vec![false; model_count];
        for m in matches.iter().flatten() {
            if *m >= model_count {
                return Err(LossError::CountMismatch {
                    what: "model keypoint",
                    left: *m,
                    right: model_count,
                });
            }
            if seen[*m] {
                return Err(LossError::DuplicateMatch { model: *m });
            }
            seen[*m] = true;
        }
        Ok(Visibility { model_count, matches })
    }

    /// Index-aligned construction: detected keypoint k corresponds to model
    /// keypoint k and is matched iff both sides are usable.
    pub fn index_aligned(
        detected_valid: &[bool],
        model_visible: &[bool],
    ) -> Result<Self, LossError> {
        if detected_valid.len() != model_visible.len() {
            return Err(LossError::CountMismatch {
                what: "keypoint",
                left: detected_valid.len(),
                right: model_visible.len(),
            });
        }
        let matches = detected_valid
            .iter()
            .zip(model_visible)
            .enumerate()
            .map(|(k, (&d, &m))| (d && m).then_some(k))
            .collect();
        Ok(Visibility { model_count: model_visible.len(), matches })
    }

    pub fn detected_count(&self) -> usize {
        self.matches.len()
    }

    pub fn model_count(&self) -> usize {
        self.model_count
    }

    /// Iterates (detected index, model index) pairs.
    pub fn matched(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.matches.iter().enumerate().filter_map(|(j, m)| m.map(|k| (j, k)))
    }
}

/// Relative weights of the mask and keypoint terms.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub w_mask: f64,
    pub w_kps: f64,
}

impl Default for LossWeights {
    /// Keypoint residuals are in squared pixels, the mask loss an IoU in
    /// [-1, 0]. The keypoint weight rebalances those scales while staying
    /// large enough that exact keypoint gradients win over the noise floor
    /// of the approximate silhouette gradients near convergence.
    fn default() -> Self {
        LossWeights { w_mask: 1.0, w_kps: 0.05 }
    }
}

fn check_dims(a: &MaskImage, b: &MaskImage) -> Result<(), LossError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(LossError::DimensionMismatch {
            a_w: a.width(),
            a_h: a.height(),
            b_w: b.width(),
            b_h: b.height(),
        });
    }
    Ok(())
}

fn intersection_union(s: &MaskImage, s_hat: &MaskImage) -> (f64, f64) {
    let mut i = 0.0;
    let mut u = 0.0;
    for (&a, &b) in s.data().iter().zip(s_hat.data()) {
        let prod = a * b;
        i += prod;
        u += a + b - prod;
    }
    (i, u)
}

/// Negative soft IoU of two masks; 0 when the union is empty.
pub fn mask_loss(s: &MaskImage, s_hat: &MaskImage) -> Result<f64, LossError> {
    check_dims(s, s_hat)?;
    let (i, u) = intersection_union(s, s_hat);
    if u <= 0.0 {
        return Ok(0.0);
    }
    Ok(-i / u)
}

/// Exact gradient of [`mask_loss`] with respect to the predicted mask:
/// `-s / U + (I / U^2) (1 - s)` per pixel; zero on an empty union.
pub fn mask_loss_grad(s: &MaskImage, s_hat: &MaskImage) -> Result<PixelField, LossError> {
    check_dims(s, s_hat)?;
    let (i, u) = intersection_union(s, s_hat);
    let mut out = PixelField::zeros(s.width(), s.height());
    if u <= 0.0 {
        return Ok(out);
    }
    let i_u2 = i / (u * u);
    for y in 0..s.height() {
        for x in 0..s.width() {
            let sv = s.get(x, y);
            out.set(x, y, -sv / u + i_u2 * (1.0 - sv));
        }
    }
    Ok(out)
}

/// Squared Frobenius norm of matched keypoint residuals, optionally with
/// per-detection confidence weights.
pub fn kps_loss(
    detected: &[Vector2<f64>],
    predicted: &[Vector2<f64>],
    vis: &Visibility,
) -> Result<f64, LossError> {
    kps_loss_weighted(detected, predicted, vis, None)
}

pub fn kps_loss_weighted(
    detected: &[Vector2<f64>],
    predicted: &[Vector2<f64>],
    vis: &Visibility,
    confidence: Option<&[f64]>,
) -> Result<f64, LossError> {
    check_kps(detected, predicted, vis, confidence)?;
    let mut total = 0.0;
    for (j, k) in vis.matched() {
        let w = confidence.map_or(1.0, |q| q[j]);
        total += w * (detected[j] - predicted[k]).norm_squared();
    }
    Ok(total)
}

/// Gradient of [`kps_loss`] with respect to the predicted keypoints:
/// `2 (y_hat vis - y) vis^T`, zero on unmatched model keypoints.
pub fn kps_loss_grad(
    detected: &[Vector2<f64>],
    predicted: &[Vector2<f64>],
    vis: &Visibility,
) -> Result<Vec<Vector2<f64>>, LossError> {
    kps_loss_grad_weighted(detected, predicted, vis, None)
}

pub fn kps_loss_grad_weighted(
    detected: &[Vector2<f64>],
    predicted: &[Vector2<f64>],
    vis: &Visibility,
    confidence: Option<&[f64]>,
) -> Result<Vec<Vector2<f64>>, LossError> {
    check_kps(detected, predicted, vis, confidence)?;
    let mut grad = vec![Vector2::zeros(); predicted.len()];
    for (j, k) in vis.matched() {
        let w = confidence.map_or(1.0, |q| q[j]);
        grad[k] += 2.0 * w * (predicted[k] - detected[j]);
    }
    Ok(grad)
}

fn check_kps(
    detected: &[Vector2<f64>],
    predicted: &[Vector2<f64>],
    vis: &Visibility,
    confidence: Option<&[f64]>,
) -> Result<(), LossError> {
    if detected.len() != vis.detected_count() {
        return Err(LossError::CountMismatch {
            what: "detected keypoint",
            left: detected.len(),
            right: vis.detected_count(),
        });
    }
    if predicted.len() != vis.model_count() {
        return Err(LossError::CountMismatch {
            what: "predicted keypoint",
            left: predicted.len(),
            right: vis.model_count(),
        });
    }
    if let Some(q) = confidence {
        if q.len() != detected.len() {
            return Err(LossError::CountMismatch {
                what: "confidence",
                left: q.len(),
                right: detected.len(),
            });
        }
    }
    Ok(())
}

/// One object hypothesis entering the joint objective.
#[derive(Debug, Clone)]
pub struct ObjectModel<'a> {
    pub pose: Pose,
    pub mesh: &'a TriMesh,
    pub assoc: &'a KeypointAssociation,
}

/// One observation term: detected mask and keypoints of object `object`
/// seen from camera `camera`. Detected keypoints are index-aligned with the
/// object's model keypoints; `keypoint_valid` marks usable detections.
#[derive(Debug, Clone)]
pub struct ObservationTerm<'a> {
    pub camera: usize,
    pub object: usize,
    pub mask: &'a MaskImage,
    pub keypoints: &'a [Vector2<f64>],
    pub keypoint_valid: &'a [bool],
}

/// Which gradients [`total_objective`] should assemble.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradientRequest {
    pub camera_poses: bool,
    pub object_poses: bool,
    pub object_vertices: bool,
}

/// Gradient of a pose objective split into rotation/translation parts.
#[derive(Debug, Clone, Copy, Default)]
pub struct PoseGradient {
    pub rotation: Vector3<f64>,
    pub translation: Vector3<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ObjectiveGradients {
    pub cameras: Vec<PoseGradient>,
    pub object_poses: Vec<PoseGradient>,
    /// Per object, per vertex; empty unless requested.
    pub object_vertices: Vec<Vec<Vector3<f64>>>,
}

#[derive(Debug, Clone)]
pub struct ObjectiveValue {
    pub total: f64,
    pub mask_part: f64,
    pub kps_part: f64,
    pub gradients: ObjectiveGradients,
}

/// Computes the per-term keypoint visibility at the current state: a model
/// keypoint is matched when its detection is valid, it projects in front of
/// the camera, and it passes the z-buffer visibility test.
pub fn compute_visibilities(
    cameras: &[Pose],
    objects: &[ObjectModel],
    terms: &[ObservationTerm],
    intrinsics: &CameraIntrinsics,
) -> Result<Vec<Visibility>, LossError> {
    terms
        .iter()
        .enumerate()
        .map(|(ti, term)| {
            check_term(ti, term, cameras, objects)?;
            let object = &objects[term.object];
            let vertices_cam =
                transform_to_camera(&cameras[term.camera], &object.pose, &object.mesh.vertices);
            let (w, h) = (term.mask.width(), term.mask.height());
            let (_, state) =
                rasterize_silhouette(&vertices_cam, &object.mesh.faces, intrinsics, w, h)?;
            let kp_indices = object.assoc.vertex_indices();
            let raster_vis = vertex_visibility(&state, kp_indices);
            let model_visible: Vec<bool> = kp_indices
                .iter()
                .zip(&raster_vis)
                .map(|(&vi, &vis)| vis && vertices_cam[vi].z > EPS_DEPTH)
                .collect();
            Visibility::index_aligned(term.keypoint_valid, &model_visible)
        })
        .collect()
}

fn check_term(
    ti: usize,
    term: &ObservationTerm,
    cameras: &[Pose],
    objects: &[ObjectModel],
) -> Result<(), LossError> {
    if term.camera >= cameras.len() {
        return Err(LossError::MissingAssociation {
            term: ti,
            what: "camera",
            index: term.camera,
            len: cameras.len(),
        });
    }
    if term.object >= objects.len() {
        return Err(LossError::MissingAssociation {
            term: ti,
            what: "object",
            index: term.object,
            len: objects.len(),
        });
    }
    let kp = objects[term.object].assoc.keypoint_count();
    if term.keypoints.len() != kp || term.keypoint_valid.len() != kp {
        return Err(LossError::CountMismatch {
            what: "keypoint",
            left: term.keypoints.len(),
            right: kp,
        });
    }
    Ok(())
}

/// Evaluates the weighted sum of mask and keypoint losses over all
/// observation terms and assembles the requested gradients through the
/// analytic keypoint Jacobians and the rasterizer backward pass.
///
/// With `fixed_visibility = None`, keypoint visibility is recomputed from
/// the current state (see [`compute_visibilities`]). Optimization line
/// searches instead pass the visibility computed at the iteration state, so
/// trial steps cannot shed residuals by hiding keypoints; a fixed-matched
/// keypoint that falls behind the camera makes the objective infinite.
pub fn total_objective(
    cameras: &[Pose],
    objects: &[ObjectModel],
    terms: &[ObservationTerm],
    intrinsics: &CameraIntrinsics,
    weights: &LossWeights,
    request: &GradientRequest,
    fixed_visibility: Option<&[Visibility]>,
) -> Result<ObjectiveValue, LossError> {
    if let Some(vis) = fixed_visibility {
        if vis.len() != terms.len() {
            return Err(LossError::CountMismatch {
                what: "visibility",
                left: vis.len(),
                right: terms.len(),
            });
        }
    }
    let mut gradients = ObjectiveGradients {
        cameras: vec![PoseGradient::default(); if request.camera_poses { cameras.len() } else { 0 }],
        object_poses: vec![
            PoseGradient::default();
            if request.object_poses { objects.len() } else { 0 }
        ],
        object_vertices: if request.object_vertices {
            objects.iter().map(|o| vec![Vector3::zeros(); o.mesh.vertex_count()]).collect()
        } else {
            Vec::new()
        },
    };
    let mut mask_part = 0.0;
    let mut kps_part = 0.0;

    for (ti, term) in terms.iter().enumerate() {
        check_term(ti, term, cameras, objects)?;
        let camera = &cameras[term.camera];
        let object = &objects[term.object];
        let (w, h) = (term.mask.width(), term.mask.height());

        let vertices_cam = transform_to_camera(camera, &object.pose, &object.mesh.vertices);
        let (pred_mask, state) =
            rasterize_silhouette(&vertices_cam, &object.mesh.faces, intrinsics, w, h)?;

        // Keypoint term.
        let kp_indices = object.assoc.vertex_indices();
        let mut predicted = Vec::with_capacity(kp_indices.len());
        let mut in_front = Vec::with_capacity(kp_indices.len());
        for &vi in kp_indices.iter() {
            let p = vertices_cam[vi];
            if p.z > EPS_DEPTH {
                predicted.push(Vector2::new(
                    intrinsics.fu() * p.x / p.z + intrinsics.skew() * p.y / p.z + intrinsics.c_u,
                    intrinsics.fv() * p.y / p.z + intrinsics.c_v,
                ));
                in_front.push(true);
            } else {
                predicted.push(Vector2::zeros());
                in_front.push(false);
            }
        }
        let vis = match fixed_visibility {
            Some(all) => all[ti].clone(),
            None => {
                let raster_vis = vertex_visibility(&state, kp_indices);
                let model_visible: Vec<bool> = raster_vis
                    .iter()
                    .zip(&in_front)
                    .map(|(&v, &f)| v && f)
                    .collect();
                Visibility::index_aligned(term.keypoint_valid, &model_visible)?
            }
        };
        // Under fixed visibility a matched keypoint behind the camera voids
        // the candidate entirely.
        if fixed_visibility.is_some() && vis.matched().any(|(_, k)| !in_front[k]) {
            return Ok(ObjectiveValue {
                total: f64::INFINITY,
                mask_part: f64::INFINITY,
                kps_part: f64::INFINITY,
                gradients,
            });
        }
        kps_part += kps_loss(term.keypoints, &predicted, &vis)?;

        let want_pose_grads = request.camera_poses || request.object_poses;
        let want_any = want_pose_grads || request.object_vertices;

        if want_any && weights.w_kps != 0.0 {
            let kp_grad = kps_loss_grad(term.keypoints, &predicted, &vis)?;
            for (_, k) in vis.matched() {
                let g = kp_grad[k];
                if g == Vector2::zeros() {
                    continue;
                }
                let vertex = &object.mesh.vertices[kp_indices[k]];
                let jac = match keypoint_jacobians(camera, &object.pose, vertex, intrinsics) {
                    Ok(j) => j,
                    Err(_) => continue,
                };
                let w_g = weights.w_kps * g;
                if request.camera_poses {
                    let slot = &mut gradients.cameras[term.camera];
                    slot.rotation += jac.wrt_camera_rotation.transpose() * w_g;
                    slot.translation += jac.wrt_camera_translation.transpose() * w_g;
                }
                if request.object_poses {
                    let slot = &mut gradients.object_poses[term.object];
                    slot.rotation += jac.wrt_object_rotation.transpose() * w_g;
                    slot.translation += jac.wrt_object_translation.transpose() * w_g;
                }
                if request.object_vertices {
                    gradients.object_vertices[term.object][kp_indices[k]] +=
                        jac.wrt_vertex.transpose() * w_g;
                }
            }
        }

        // Mask term.
        mask_part += mask_loss(term.mask, &pred_mask)?;
        if want_any && weights.w_mask != 0.0 {
            let dl = mask_loss_grad(term.mask, &pred_mask)?;
            let img_grad = rasterize_backward(&dl, &state)?;
            for (vi, g2) in img_grad.iter().enumerate() {
                if g2.x == 0.0 && g2.y == 0.0 {
                    continue;
                }
                let vertex = &object.mesh.vertices[vi];
                let jac = match keypoint_jacobians(camera, &object.pose, vertex, intrinsics) {
                    Ok(j) => j,
                    Err(_) => continue,
                };
                let w_g = weights.w_mask * g2;
                if request.camera_poses {
                    let slot = &mut gradients.cameras[term.camera];
                    slot.rotation += jac.wrt_camera_rotation.transpose() * w_g;
                    slot.translation += jac.wrt_camera_translation.transpose() * w_g;
                }
                if request.object_poses {
                    let slot = &mut gradients.object_poses[term.object];
                    slot.rotation += jac.wrt_object_rotation.transpose() * w_g;
                    slot.translation += jac.wrt_object_translation.transpose() * w_g;
                }
                if request.object_vertices {
                    gradients.object_vertices[term.object][vi] += jac.wrt_vertex.transpose() * w_g;
                }
            }
        }
    }

    Ok(ObjectiveValue {
        total: weights.w_mask * mask_part + weights.w_kps * kps_part,
        mask_part,
        kps_part,
        gradients,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liegroup::AxisAngle;
    use crate::mesh::{farthest_point_keypoints, make_icosphere};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask_from(width: usize, height: usize, ones: &[(usize, usize)]) -> MaskImage {
        let mut m = MaskImage::zeros(width, height);
        for &(x, y) in ones {
            m.set(x, y, 1.0);
        }
        m
    }

    #[test]
    fn identical_masks_have_loss_minus_one() {
        let m = mask_from(8, 8, &[(1, 1), (2, 2), (3, 3)]);
        assert_eq!(mask_loss(&m, &m).unwrap(), -1.0);
    }

    #[test]
    fn disjoint_masks_have_loss_zero() {
        let a = mask_from(8, 8, &[(0, 0)]);
        let b = mask_from(8, 8, &[(5, 5)]);
        assert_eq!(mask_loss(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn empty_union_gives_zero_loss_and_gradient() {
        let a = MaskImage::zeros(4, 4);
        let b = MaskImage::zeros(4, 4);
        assert_eq!(mask_loss(&a, &b).unwrap(), 0.0);
        let g = mask_loss_grad(&a, &b).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn four_four_two_overlap_case() {
        // |s| = 4, |s_hat| = 4, overlap 2: loss -2/6, gradient -1/6 on s=1
        // pixels and +2/36 elsewhere.
        let s = mask_from(4, 4, &[(0, 0), (1, 0), (2, 0), (3, 0)]);
        let s_hat = mask_from(4, 4, &[(2, 0), (3, 0), (0, 1), (1, 1)]);
        let loss = mask_loss(&s, &s_hat).unwrap();
        assert!((loss - (-1.0 / 3.0)).abs() < 1e-15);
        let g = mask_loss_grad(&s, &s_hat).unwrap();
        assert!((g.get(0, 0) - (-1.0 / 6.0)).abs() < 1e-15);
        assert!((g.get(2, 0) - (-1.0 / 6.0)).abs() < 1e-15);
        assert!((g.get(0, 1) - (1.0 / 18.0)).abs() < 1e-15);
        assert!((g.get(3, 3) - (1.0 / 18.0)).abs() < 1e-15);
    }

    #[test]
    fn all_zero_observed_mask_gradient() {
        let s = MaskImage::zeros(4, 4);
        let mut s_hat = MaskImage::zeros(4, 4);
        s_hat.set(1, 1, 0.7);
        s_hat.set(2, 2, 0.4);
        // I = 0 kills the second term and s = 0 kills the first.
        let g = mask_loss_grad(&s, &s_hat).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
        assert_eq!(mask_loss(&s, &s_hat).unwrap(), 0.0);
    }

    #[test]
    fn mask_loss_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..20 {
            let mut a = MaskImage::zeros(6, 5);
            let mut b = MaskImage::zeros(6, 5);
            for y in 0..5 {
                for x in 0..6 {
                    if rng.gen_bool(0.4) {
                        a.set(x, y, 1.0);
                    }
                    if rng.gen_bool(0.4) {
                        b.set(x, y, 1.0);
                    }
                }
            }
            assert_eq!(mask_loss(&a, &b).unwrap(), mask_loss(&b, &a).unwrap());
            let l = mask_loss(&a, &b).unwrap();
            assert!((-1.0..=0.0).contains(&l));
        }
    }

    #[test]
    fn mask_gradient_matches_finite_differences_on_continuous_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let (w, h) = (9, 7);
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
            let g = mask_loss_grad(&s, &s_hat).unwrap();
            let hstep = 1e-4;
            for _ in 0..5 {
                let x = rng.gen_range(0..w);
                let y = rng.gen_range(0..h);
                let mut plus = s_hat.clone();
                plus.set(x, y, plus.get(x, y) + hstep);
                let mut minus = s_hat.clone();
                minus.set(x, y, minus.get(x, y) - hstep);
                let fd =
                    (mask_loss(&s, &plus).unwrap() - mask_loss(&s, &minus).unwrap()) / (2.0 * hstep);
                let an = g.get(x, y);
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-12);
                assert!(rel < 1e-8, "pixel ({x},{y}): fd {fd:.12e} vs analytic {an:.12e}");
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = MaskImage::zeros(4, 4);
        let b = MaskImage::zeros(5, 4);
        assert!(mask_loss(&a, &b).is_err());
    }

    #[test]
    fn matched_projections_give_zero_kps_loss() {
        let y = vec![Vector2::new(10.0, 20.0), Vector2::new(30.0, 40.0)];
        let vis = Visibility::index_aligned(&[true, true], &[true, true]).unwrap();
        assert_eq!(kps_loss(&y, &y, &vis).unwrap(), 0.0);
        let g = kps_loss_grad(&y, &y, &vis).unwrap();
        assert!(g.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn single_offset_keypoint_penalized() {
        let y = vec![Vector2::new(10.0, 20.0)];
        let y_hat = vec![Vector2::new(13.0, 24.0)];
        let vis = Visibility::index_aligned(&[true], &[true]).unwrap();
        assert_eq!(kps_loss(&y, &y_hat, &vis).unwrap(), 25.0);
        let g = kps_loss_grad(&y, &y_hat, &vis).unwrap();
        assert_eq!(g[0], Vector2::new(6.0, 8.0));
    }

    #[test]
    fn unmatched_columns_are_dropped() {
        let y = vec![Vector2::new(999.0, 999.0), Vector2::new(1.0, 1.0)];
        let y_hat = vec![Vector2::new(0.0, 0.0), Vector2::new(1.0, 1.0)];
        let vis = Visibility::index_aligned(&[false, true], &[true, true]).unwrap();
        assert_eq!(kps_loss(&y, &y_hat, &vis).unwrap(), 0.0);
        let all_invisible = Visibility::index_aligned(&[true, true], &[false, false]).unwrap();
        assert_eq!(kps_loss(&y, &y_hat, &all_invisible).unwrap(), 0.0);
    }

    #[test]
    fn kps_gradient_is_linear_in_residual() {
        let y = vec![Vector2::new(0.0, 0.0)];
        let vis = Visibility::index_aligned(&[true], &[true]).unwrap();
        let g1 = kps_loss_grad(&y, &[Vector2::new(1.0, 2.0)], &vis).unwrap();
        let g2 = kps_loss_grad(&y, &[Vector2::new(2.0, 4.0)], &vis).unwrap();
        assert!((g2[0] - 2.0 * g1[0]).norm() < 1e-15);
    }

    #[test]
    fn kps_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..100 {
            let n = rng.gen_range(2..8);
            let y: Vec<Vector2<f64>> = (0..n)
                .map(|_| Vector2::new(rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0)))
                .collect();
            let y_hat: Vec<Vector2<f64>> = (0..n)
                .map(|_| Vector2::new(rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0)))
                .collect();
            let detected: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.8)).collect();
            let visible: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.8)).collect();
            let vis = Visibility::index_aligned(&detected, &visible).unwrap();
            let g = kps_loss_grad(&y, &y_hat, &vis).unwrap();
            // The loss is exactly quadratic, so the central difference is
            // exact for any step; a large step drowns rounding noise.
            let h = 0.5;
            for k in 0..n {
                for axis in 0..2 {
                    let mut plus = y_hat.clone();
                    plus[k][axis] += h;
                    let mut minus = y_hat.clone();
                    minus[k][axis] -= h;
                    let fd = (kps_loss(&y, &plus, &vis).unwrap()
                        - kps_loss(&y, &minus, &vis).unwrap())
                        / (2.0 * h);
                    let an = g[k][axis];
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-9);
                    assert!(rel < 1e-8, "kp {k} axis {axis}: fd {fd:.9} vs {an:.9}");
                }
            }
        }
    }

    #[test]
    fn confidence_weighting_scales_residual_columns() {
        let y = vec![Vector2::new(0.0, 0.0), Vector2::new(10.0, 10.0)];
        let y_hat = vec![Vector2::new(3.0, 4.0), Vector2::new(10.0, 10.0)];
        let vis = Visibility::index_aligned(&[true, true], &[true, true]).unwrap();
        let q = [0.5, 1.0];
        let weighted = kps_loss_weighted(&y, &y_hat, &vis, Some(&q)).unwrap();
        assert!((weighted - 12.5).abs() < 1e-12);
        let g = kps_loss_grad_weighted(&y, &y_hat, &vis, Some(&q)).unwrap();
        assert!((g[0] - Vector2::new(3.0, 4.0)).norm() < 1e-12);
        assert_eq!(g[1], Vector2::zeros());
    }

    #[test]
    fn duplicate_model_match_rejected() {
        assert!(Visibility::new(2, vec![Some(0), Some(0)]).is_err());
        assert!(Visibility::new(2, vec![Some(0), Some(1)]).is_ok());
    }

    /// A small scene: camera at origin looking +z, sphere object ahead.
    fn small_scene() -> (Vec<Pose>, TriMesh, KeypointAssociation, CameraIntrinsics) {
        let cameras = vec![
            Pose::identity(),
            Pose::new(AxisAngle::new(0.0, -0.3, 0.0), Vector3::new(1.5, 0.0, 0.0)),
        ];
        let mesh = make_icosphere(1, 0.8);
        let assoc = farthest_point_keypoints(&mesh, 8);
        let k = CameraIntrinsics::from_pixel_focal(80.0, 80.0, 32.0, 32.0);
        (cameras, mesh, assoc, k)
    }

    fn synthesize_term(
        camera: &Pose,
        object: &ObjectModel,
        k: &CameraIntrinsics,
        w: usize,
        h: usize,
    ) -> (MaskImage, Vec<Vector2<f64>>, Vec<bool>) {
        let vertices_cam = transform_to_camera(camera, &object.pose, &object.mesh.vertices);
        let (mask, state) =
            rasterize_silhouette(&vertices_cam, &object.mesh.faces, k, w, h).unwrap();
        let vis = vertex_visibility(&state, object.assoc.vertex_indices());
        let mut kps = Vec::new();
        let mut valid = Vec::new();
        for (i, &vi) in object.assoc.vertex_indices().iter().enumerate() {
            let p = vertices_cam[vi];
            if p.z > EPS_DEPTH {
                kps.push(Vector2::new(
                    k.fu() * p.x / p.z + k.c_u,
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

    #[test]
    fn perfect_alignment_gives_minus_wmask_per_detection() {
        let (cameras, mesh, assoc, k) = small_scene();
        let object = ObjectModel {
            pose: Pose::new(AxisAngle::zero(), Vector3::new(0.0, 0.0, 4.0)),
            mesh: &mesh,
            assoc: &assoc,
        };
        let mut synth = Vec::new();
        for cam in &cameras {
            synth.push(synthesize_term(cam, &object, &k, 64, 64));
        }
        let terms: Vec<ObservationTerm> = synth
            .iter()
            .enumerate()
            .map(|(i, (mask, kps, valid))| ObservationTerm {
                camera: i,
                object: 0,
                mask,
                keypoints: kps,
                keypoint_valid: valid,
            })
            .collect();
        let weights = LossWeights { w_mask: 1.0, w_kps: 1.0 };
        let value = total_objective(
            &cameras,
            std::slice::from_ref(&object),
            &terms,
            &k,
            &weights,
            &GradientRequest::default(),
            None,
        )
        .unwrap();
        assert!((value.total - (-(terms.len() as f64))).abs() < 1e-12);
        assert_eq!(value.kps_part, 0.0);
    }

    #[test]
    fn zero_kps_weight_reduces_to_mask_sum() {
        let (cameras, mesh, assoc, k) = small_scene();
        let object = ObjectModel {
            pose: Pose::new(AxisAngle::zero(), Vector3::new(0.2, -0.1, 4.0)),
            mesh: &mesh,
            assoc: &assoc,
        };
        let (mask, kps, valid) = synthesize_term(&cameras[0], &object, &k, 64, 64);
        // Perturb the object so residuals are nonzero.
        let shifted = ObjectModel {
            pose: Pose::new(AxisAngle::zero(), Vector3::new(0.4, -0.1, 4.0)),
            mesh: &mesh,
            assoc: &assoc,
        };
        let terms = [ObservationTerm {
            camera: 0,
            object: 0,
            mask: &mask,
            keypoints: &kps,
            keypoint_valid: &valid,
        }];
        let weights = LossWeights { w_mask: 1.0, w_kps: 0.0 };
        let value = total_objective(
            &cameras[..1],
            std::slice::from_ref(&shifted),
            &terms,
            &k,
            &weights,
            &GradientRequest::default(),
            None,
        )
        .unwrap();
        assert!((value.total - value.mask_part).abs() < 1e-15);
        assert!(value.kps_part > 0.0, "perturbed pose must leave keypoint residual");
    }

    #[test]
    fn keypoint_gradient_block_matches_objective_finite_difference() {
        let (cameras, mesh, assoc, k) = small_scene();
        let gt = ObjectModel {
            pose: Pose::new(AxisAngle::new(0.1, -0.2, 0.05), Vector3::new(0.1, 0.05, 4.0)),
            mesh: &mesh,
            assoc: &assoc,
        };
        let mut synth = Vec::new();
        for cam in &cameras {
            synth.push(synthesize_term(cam, &gt, &k, 64, 64));
        }
        let terms: Vec<ObservationTerm> = synth
            .iter()
            .enumerate()
            .map(|(i, (mask, kps, valid))| ObservationTerm {
                camera: i,
                object: 0,
                mask,
                keypoints: kps,
                keypoint_valid: valid,
            })
            .collect();
        // Perturb translation by +5 cm and compare the keypoint gradient
        // block against finite differences of the keypoint objective.
        let perturbed = ObjectModel {
            pose: Pose::new(gt.pose.rotation, gt.pose.translation + Vector3::new(0.05, 0.0, 0.0)),
            mesh: &mesh,
            assoc: &assoc,
        };
        let weights = LossWeights { w_mask: 0.0, w_kps: 1.0 };
        let request = GradientRequest { object_poses: true, ..Default::default() };
        let value = total_objective(
            &cameras,
            std::slice::from_ref(&perturbed),
            &terms,
            &k,
            &weights,
            &request,
            None,
        )
        .unwrap();
        let analytic = value.gradients.object_poses[0].translation;

        let h = 1e-6;
        let mut fd = Vector3::zeros();
        for axis in 0..3 {
            let mut dp = Vector3::zeros();
            dp[axis] = h;
            let eval = |t: Vector3<f64>| -> f64 {
                let m = ObjectModel {
                    pose: Pose::new(perturbed.pose.rotation, t),
                    mesh: &mesh,
                    assoc: &assoc,
                };
                total_objective(
                    &cameras,
                    std::slice::from_ref(&m),
                    &terms,
                    &k,
                    &weights,
                    &GradientRequest::default(),
                    None,
                )
                .unwrap()
                .total
            };
            fd[axis] = (eval(perturbed.pose.translation + dp)
                - eval(perturbed.pose.translation - dp))
                / (2.0 * h);
        }
        let rel = (analytic - fd).norm() / fd.norm().max(1e-12);
        assert!(rel < 1e-4, "analytic {analytic:?} vs fd {fd:?} (rel {rel:.2e})");
    }

    #[test]
    fn missing_association_is_an_error() {
        let (cameras, mesh, assoc, k) = small_scene();
        let object = ObjectModel {
            pose: Pose::new(AxisAngle::zero(), Vector3::new(0.0, 0.0, 4.0)),
            mesh: &mesh,
            assoc: &assoc,
        };
        let mask = MaskImage::zeros(16, 16);
        let kps: Vec<Vector2<f64>> = vec![Vector2::zeros(); assoc.keypoint_count()];
        let valid = vec![false; assoc.keypoint_count()];
        let terms = [ObservationTerm {
            camera: 0,
            object: 3,
            mask: &mask,
            keypoints: &kps,
            keypoint_valid: &valid,
        }];
        let err = total_objective(
            &cameras,
            std::slice::from_ref(&object),
            &terms,
            &k,
            &LossWeights::default(),
            &GradientRequest::default(),
            None,
        );
        assert!(matches!(err, Err(LossError::MissingAssociation { .. })));
    }
}
