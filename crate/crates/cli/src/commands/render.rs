//! Single forward evaluation of the projection models: silhouette masks and
//! keypoint observations of every scene object from one camera frame.

use crate::manifest::RunManifest;
use crate::obsio;
use anyhow::{bail, Result};
use objmap_core::assoc::{Bbox, SemanticObservation};
use objmap_core::camera::{transform_to_camera, EPS_DEPTH};
use objmap_core::raster::{rasterize_silhouette, vertex_visibility};
use objmap_core::sim::default_mapping_config;
use nalgebra::Vector2;
use std::path::PathBuf;

pub fn run(
    config_path: Option<PathBuf>,
    seed: Option<u64>,
    frame: usize,
    out: PathBuf,
) -> Result<u8> {
    let config = super::load_config(config_path.as_deref(), default_mapping_config, seed, None)?;
    let scene = config.build_scene()?;
    if frame >= scene.frame_count() {
        bail!("frame {frame} out of range: trajectory has {} frames", scene.frame_count());
    }
    let dir = crate::outdir::prepare(&out)?;
    let mut manifest = RunManifest::new("render", config_path.as_deref(), config.seed, &dir);

    let camera = scene.camera(frame);
    let mut rendered = Vec::new();
    for (oi, obj) in scene.objects.iter().enumerate() {
        let verts_cam = transform_to_camera(camera, &obj.pose, &obj.mesh.vertices);
        let (mask, state) = rasterize_silhouette(
            &verts_cam,
            &obj.mesh.faces,
            &scene.intrinsics,
            scene.width,
            scene.height,
        )?;
        if mask.area() == 0 {
            manifest.warnings.push(format!("object {oi}: not visible, mask is empty"));
        }
        let visibility = vertex_visibility(&state, obj.assoc.vertex_indices());
        let mut keypoints = Vec::new();
        let mut valid = Vec::new();
        for (k, &vi) in obj.assoc.vertex_indices().iter().enumerate() {
            let p = verts_cam[vi];
            if p.z > EPS_DEPTH {
                keypoints.push(Vector2::new(
                    scene.intrinsics.fu() * p.x / p.z
                        + scene.intrinsics.skew() * p.y / p.z
                        + scene.intrinsics.c_u,
                    scene.intrinsics.fv() * p.y / p.z + scene.intrinsics.c_v,
                ));
                valid.push(visibility[k]);
            } else {
                keypoints.push(Vector2::zeros());
                valid.push(false);
            }
        }
        let bbox = mask
            .bounding_box()
            .map(|(x, y, w, h)| Bbox { x: x as f64, y: y as f64, w: w as f64, h: h as f64 })
            .unwrap_or(Bbox { x: 0.0, y: 0.0, w: 0.0, h: 0.0 });
        let q: Vec<f64> = valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        rendered.push(SemanticObservation {
            class: obj.class,
            mask,
            keypoints,
            keypoint_valid: valid,
            bbox,
            confidence: 1.0,
            keypoint_confidence: q,
        });
    }

    let refs: Vec<&SemanticObservation> = rendered.iter().collect();
    obsio::write_frame(&dir, &refs)?;
    manifest.output("keypoints.csv");
    for det in 0..refs.len() {
        manifest.output(&obsio::mask_file_name(det));
    }
    manifest.metric("frame", frame);
    manifest.metric("objects", refs.len());
    manifest.write_once(&dir)?;
    println!("render: frame {frame}, {} object(s), results in {}", refs.len(), dir.display());
    Ok(0)
}
