//! Mapping experiment: IoU against ground truth over a sweep of view
//! budgets, plus the reconstructed meshes at the largest budget.

use crate::manifest::RunManifest;
use crate::outdir::fmt_f64;
use anyhow::{Context, Result};
use objmap_core::mesh::save_obj;
use objmap_core::sim::{
    default_mapping_config, quaternion_of, run_mapping, MappingOutcome,
};
use std::io::Write;
use std::path::PathBuf;

const SWEEP: [usize; 5] = [1, 2, 3, 5, 8];

pub fn run(
    config_path: Option<PathBuf>,
    seed: Option<u64>,
    views: usize,
    out: PathBuf,
) -> Result<u8> {
    let config = super::load_config(config_path.as_deref(), default_mapping_config, seed, None)?;
    let dir = crate::outdir::prepare(&out)?;
    let mut manifest = RunManifest::new("map", config_path.as_deref(), config.seed, &dir);

    let mut counts: Vec<usize> = SWEEP.iter().copied().filter(|&v| v <= views).collect();
    if !counts.contains(&views) {
        counts.push(views);
    }
    counts.sort_unstable();

    let mut outcomes: Vec<MappingOutcome> = Vec::new();
    for &v in &counts {
        let outcome = manifest.time(&format!("map_{v}_views"), || run_mapping(&config, v));
        outcomes.push(outcome?);
    }

    // IoU-vs-views table.
    let csv_path = dir.join("iou_vs_views.csv");
    let mut csv = std::io::BufWriter::new(
        std::fs::File::create(&csv_path)
            .with_context(|| format!("writing {}", csv_path.display()))?,
    );
    writeln!(csv, "views,object,track,initial_voxel_iou,voxel_iou,mean_mask_iou")?;
    for outcome in &outcomes {
        for gt in outcome.mapped_gt_objects() {
            let obj = outcome.best_for(gt).expect("listed objects are mapped");
            writeln!(
                csv,
                "{},{},{},{},{},{}",
                outcome.views,
                gt,
                obj.track_id,
                obj.initial.voxel_iou.map_or("nan".into(), fmt_f64),
                obj.optimized.voxel_iou.map_or("nan".into(), fmt_f64),
                fmt_f64(obj.optimized.mean_mask_iou),
            )?;
        }
        for (track, error) in &outcome.failures {
            manifest
                .warnings
                .push(format!("views {}: track {track} init failed: {error}", outcome.views));
        }
    }
    drop(csv);
    manifest.output("iou_vs_views.csv");

    // Meshes and pose lines from the largest budget.
    if let Some(last) = outcomes.last() {
        for gt in last.mapped_gt_objects() {
            let obj = last.best_for(gt).expect("mapped");
            let obj_name = format!("object_{gt:03}.obj");
            save_obj(&obj.state.mesh, dir.join(&obj_name))?;
            manifest.output(&obj_name);
            let pose_name = format!("object_{gt:03}.pose.txt");
            let p = obj.state.pose.translation;
            let q = quaternion_of(&obj.state.pose.rotation);
            std::fs::write(
                dir.join(&pose_name),
                format!(
                    "{} {} {} {} {} {} {} {}\n",
                    fmt_f64(0.0),
                    fmt_f64(p.x),
                    fmt_f64(p.y),
                    fmt_f64(p.z),
                    fmt_f64(q.x),
                    fmt_f64(q.y),
                    fmt_f64(q.z),
                    fmt_f64(q.w)
                ),
            )?;
            manifest.output(&pose_name);

            manifest.metric(
                &format!("voxel_iou_{}_views_object_{gt}", last.views),
                obj.optimized.voxel_iou,
            );
            manifest.metric(
                &format!("initial_voxel_iou_object_{gt}"),
                obj.initial.voxel_iou,
            );
        }
        println!(
            "map: {} views, mean voxel IoU {:?} (initial {:?}), results in {}",
            last.views,
            last.mean_voxel_iou(),
            last.mean_initial_voxel_iou(),
            dir.display()
        );
    }
    manifest.write_once(&dir)?;
    Ok(0)
}
