//! Observation dump format: one directory per frame holding a binary PGM
//! mask per detection plus a `keypoints.csv` with one row per
//! (detection, keypoint):
//! `det_id,class,kp_id,u_pix,v_pix,q,bbox_x,bbox_y,bbox_w,bbox_h,u_det`.
//! Keypoints with zero confidence are invalid detections.

use crate::outdir::fmt_f64;
use anyhow::{Context, Result};
use objmap_core::assoc::SemanticObservation;
use std::io::Write;
use std::path::Path;

pub fn mask_file_name(det_id: usize) -> String {
    format!("det_{det_id:03}.pgm")
}

/// Writes one frame's observations into `dir`.
pub fn write_frame(dir: &Path, observations: &[&SemanticObservation]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let csv = dir.join("keypoints.csv");
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(&csv).with_context(|| format!("writing {}", csv.display()))?,
    );
    writeln!(out, "det_id,class,kp_id,u_pix,v_pix,q,bbox_x,bbox_y,bbox_w,bbox_h,u_det")?;
    for (det_id, obs) in observations.iter().enumerate() {
        obs.mask
            .save_pgm(dir.join(mask_file_name(det_id)))
            .with_context(|| format!("writing mask for detection {det_id}"))?;
        for (kp_id, kp) in obs.keypoints.iter().enumerate() {
            let q = if obs.keypoint_valid[kp_id] { obs.keypoint_confidence[kp_id] } else { 0.0 };
            writeln!(
                out,
                "{det_id},{},{kp_id},{},{},{},{},{},{},{},{}",
                obs.class,
                fmt_f64(kp.x),
                fmt_f64(kp.y),
                fmt_f64(q),
                fmt_f64(obs.bbox.x),
                fmt_f64(obs.bbox.y),
                fmt_f64(obs.bbox.w),
                fmt_f64(obs.bbox.h),
                fmt_f64(obs.confidence),
            )?;
        }
    }
    Ok(())
}
