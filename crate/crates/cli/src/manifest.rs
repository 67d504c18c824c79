//! Run manifest: records what a command ran, with which inputs, how long
//! each stage took, and what it produced. Written exactly once per run.

use anyhow::{bail, Context, Result};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub seed: u64,
    pub output_dir: String,
    pub timings_s: BTreeMap<String, f64>,
    pub metrics: BTreeMap<String, serde_json::Value>,
    pub warnings: Vec<String>,
    /// Paths relative to the output directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config_path: Option<&Path>, seed: u64, out: &Path) -> Self {
        RunManifest {
            command: command.to_string(),
            config_path: config_path.map(|p| p.display().to_string()),
            seed,
            output_dir: out.display().to_string(),
            timings_s: BTreeMap::new(),
            metrics: BTreeMap::new(),
            warnings: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let value = f();
        self.timings_s.insert(stage.to_string(), start.elapsed().as_secs_f64());
        value
    }

    pub fn metric(&mut self, key: &str, value: impl Serialize) {
        self.metrics.insert(
            key.to_string(),
            serde_json::to_value(value).expect("metric serializes"),
        );
    }

    pub fn output(&mut self, relative: &str) {
        self.outputs.push(relative.to_string());
    }

    pub fn write_once(&self, out: &Path) -> Result<()> {
        let path = out.join("manifest.json");
        if path.exists() {
            bail!("manifest already written for this run: {}", path.display());
        }
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, json)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
