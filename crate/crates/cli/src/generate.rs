use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Args;
use fird::synth::{generate, paper_analysis_preset, write_dataset, GenConfig};
use serde::Serialize;

use crate::manifest::RunManifest;

#[derive(Args, Debug, Serialize)]
pub struct GenerateArgs {
    /// dcr, lambda or runtime; overrides the shape options below.
    #[arg(long)]
    pub preset: Option<String>,
    /// Structured rows.
    #[arg(long, default_value_t = 5000)]
    pub rows: usize,
    #[arg(long, default_value_t = 20)]
    pub features: usize,
    /// Vocabulary size of every feature.
    #[arg(long, default_value_t = 50)]
    pub values: usize,
    /// True clusters.
    #[arg(long, default_value_t = 10)]
    pub clusters: usize,
    /// Support size of each cluster's sparse distributions.
    #[arg(long, default_value_t = 2)]
    pub support: usize,
    /// Uniform rows appended per structured row.
    #[arg(long, default_value_t = 0.0)]
    pub nfr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output_dir: PathBuf,
}

fn write_one(cfg: &GenConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let (data, truth) = generate(cfg)?;
    let files = ["data.csv", "schema.json", "truth.csv", "config.json"].map(|f| dir.join(f));
    write_dataset(&data, &files[0], &files[1])?;
    truth.write_csv(&files[2])?;
    std::fs::write(&files[3], serde_json::to_string_pretty(cfg)?)?;
    Ok(files.to_vec())
}

pub fn run(args: GenerateArgs) -> Result<()> {
    let started = Instant::now();
    let mut outputs = Vec::new();
    if let Some(name) = &args.preset {
        let preset = paper_analysis_preset(name, args.seed)?;
        let root = args.output_dir.join(name);
        for cfg in &preset.configs {
            let cfg = GenConfig {
                nfr: args.nfr,
                ..cfg.clone()
            };
            let dir = root.join(format!("m{:03}", cfg.n_features()));
            outputs.extend(write_one(&cfg, &dir)?);
        }
        let preset_path = root.join("preset.json");
        std::fs::write(&preset_path, serde_json::to_string_pretty(&preset)?)?;
        outputs.push(preset_path);
        eprintln!(
            "generate: preset {name}, {} datasets under {}",
            preset.configs.len(),
            root.display()
        );
    } else {
        let cfg = GenConfig::recovery(
            args.rows,
            args.features,
            args.values,
            args.clusters,
            args.support,
            args.seed,
        )
        .with_nfr(args.nfr);
        outputs.extend(write_one(&cfg, &args.output_dir)?);
        eprintln!(
            "generate: {} rows ({} uniform) in {}",
            cfg.n + cfg.n_random(),
            cfg.n_random(),
            args.output_dir.display()
        );
    }
    let refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    RunManifest::new("generate", &args, Some(args.seed), started)
        .outputs(&refs)
        .write(&args.output_dir.join("manifest.json"))
}
