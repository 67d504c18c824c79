//! Output directory management and numeric formatting shared by commands.

use anyhow::{Context, Result};
use std::path::{Path, PathBuf};

/// Creates the run output directory. An existing non-empty directory is
/// never reused: a timestamp (and counter) suffix is appended instead.
pub fn prepare(requested: &Path) -> Result<PathBuf> {
    let mut candidate = requested.to_path_buf();
    if candidate.exists() && std::fs::read_dir(&candidate)?.next().is_some() {
        let secs =
            std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH)?.as_secs();
        let base = requested.to_string_lossy().to_string();
        candidate = PathBuf::from(format!("{base}-{secs}"));
        let mut counter = 1u32;
        while candidate.exists() && std::fs::read_dir(&candidate)?.next().is_some() {
            candidate = PathBuf::from(format!("{base}-{secs}-{counter}"));
            counter += 1;
        }
    }
    std::fs::create_dir_all(&candidate)
        .with_context(|| format!("creating output directory {}", candidate.display()))?;
    Ok(candidate)
}

/// Full-double-precision formatting (17 significant digits) so repeated
/// runs produce byte-identical numeric output.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
