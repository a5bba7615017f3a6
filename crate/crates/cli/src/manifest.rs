use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

/// Everything needed to re-run a command, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest<C: Serialize> {
    pub command: String,
    pub argv: Vec<String>,
    pub config: C,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wall_seconds: f64,
    pub threads: usize,
    pub version: String,
}

impl<C: Serialize> RunManifest<C> {
    pub fn new(command: &str, config: C, seed: Option<u64>, started: Instant) -> Self {
        RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_seconds: started.elapsed().as_secs_f64(),
            threads: rayon::current_num_threads(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn inputs(mut self, paths: &[&Path]) -> Self {
        self.inputs = paths.iter().map(|p| p.to_path_buf()).collect();
        self
    }

    pub fn outputs(mut self, paths: &[&Path]) -> Self {
        self.outputs = paths.iter().map(|p| p.to_path_buf()).collect();
        self
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

/// `out.json` -> `out.<suffix>`
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}
