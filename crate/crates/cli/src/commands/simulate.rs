//! Dump synthesized semantic observations for every frame of the scene.

use crate::manifest::RunManifest;
use crate::obsio;
use anyhow::Result;
use objmap_core::assoc::SemanticObservation;
use objmap_core::sim::{default_mapping_config, synthesize_observations};
use std::path::PathBuf;

pub fn run(
    config_path: Option<PathBuf>,
    seed: Option<u64>,
    frames: Option<usize>,
    out: PathBuf,
) -> Result<u8> {
    let config =
        super::load_config(config_path.as_deref(), default_mapping_config, seed, frames)?;
    let scene = config.build_scene()?;
    let noise = config.noise_model();
    let dir = crate::outdir::prepare(&out)?;
    let mut manifest = RunManifest::new("simulate", config_path.as_deref(), config.seed, &dir);

    let mut total = 0usize;
    for frame in 0..scene.frame_count() {
        let labeled = synthesize_observations(&scene, frame, &noise)?;
        let refs: Vec<&SemanticObservation> = labeled.iter().map(|l| &l.obs).collect();
        let frame_dir = dir.join(format!("frame_{frame:04}"));
        obsio::write_frame(&frame_dir, &refs)?;
        manifest.output(&format!("frame_{frame:04}/keypoints.csv"));
        total += refs.len();
    }
    manifest.metric("frames", scene.frame_count());
    manifest.metric("observations", total);
    manifest.write_once(&dir)?;
    println!(
        "simulate: {} frames, {total} observations, results in {}",
        scene.frame_count(),
        dir.display()
    );
    Ok(0)
}
