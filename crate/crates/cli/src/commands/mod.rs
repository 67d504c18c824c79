pub mod gradcheck;
pub mod localize;
pub mod map;
pub mod render;
pub mod simulate;

use anyhow::Result;
use objmap_core::sim::{ExperimentConfig, SimError};
use std::path::Path;

/// Loads the experiment config, falling back to a built-in default, and
/// applies command-line overrides.
pub fn load_config(
    path: Option<&Path>,
    default: fn() -> ExperimentConfig,
    seed: Option<u64>,
    frames: Option<usize>,
) -> Result<ExperimentConfig, SimError> {
    let mut config = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => default(),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(frames) = frames {
        config.trajectory.frames = frames;
    }
    Ok(config)
}
