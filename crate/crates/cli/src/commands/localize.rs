//! Localization experiment: ground-truth, odometry-only, and optimized
//! trajectories plus the ATE-versus-iterations curve.

use crate::manifest::RunManifest;
use crate::outdir::fmt_f64;
use anyhow::{Context, Result};
use objmap_core::sim::{default_localization_config, run_localization, write_trajectory};
use std::io::Write;
use std::path::PathBuf;

pub fn run(
    config_path: Option<PathBuf>,
    seed: Option<u64>,
    frames: Option<usize>,
    out: PathBuf,
) -> Result<u8> {
    let config =
        super::load_config(config_path.as_deref(), default_localization_config, seed, frames)?;
    let dir = crate::outdir::prepare(&out)?;
    let mut manifest = RunManifest::new("localize", config_path.as_deref(), config.seed, &dir);

    let outcome = manifest.time("localize", || run_localization(&config))?;

    write_trajectory(dir.join("groundtruth.txt"), &outcome.ground_truth)?;
    write_trajectory(dir.join("odometry.txt"), &outcome.odometry_only)?;
    write_trajectory(dir.join("optimized.txt"), &outcome.optimized)?;
    for name in ["groundtruth.txt", "odometry.txt", "optimized.txt"] {
        manifest.output(name);
    }

    let csv_path = dir.join("ate_curve.csv");
    let mut csv = std::io::BufWriter::new(
        std::fs::File::create(&csv_path)
            .with_context(|| format!("writing {}", csv_path.display()))?,
    );
    writeln!(csv, "iteration,ate")?;
    for (k, ate) in outcome.ate_per_iteration.iter().enumerate() {
        writeln!(csv, "{k},{}", fmt_f64(*ate))?;
    }
    drop(csv);
    manifest.output("ate_curve.csv");

    manifest.metric("ate_odometry", outcome.ate_odometry);
    manifest.metric("ate_optimized", outcome.ate_optimized);
    manifest.metric("ate_ratio", outcome.ate_optimized / outcome.ate_odometry);
    manifest.metric("odometry_only_frames", &outcome.odometry_only_frames);
    for frame in &outcome.odometry_only_frames {
        manifest.warnings.push(format!("frame {frame}: no visible objects, odometry only"));
    }
    manifest.write_once(&dir)?;

    println!(
        "localize: odometry ATE {:.4} m, optimized ATE {:.4} m (ratio {:.3}), results in {}",
        outcome.ate_odometry,
        outcome.ate_optimized,
        outcome.ate_optimized / outcome.ate_odometry,
        dir.display()
    );
    Ok(0)
}
