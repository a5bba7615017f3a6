use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Args;
use fird::harness::interleaved_iteration_seconds;
use fird::synth::{generate, paper_analysis_preset};
use fird::{encode, load_csv, EncodedDataset, FeatureSchema, FitConfig};
use serde::Serialize;

use crate::manifest::{sibling, RunManifest};

#[derive(Args, Debug, Serialize)]
pub struct BenchArgs {
    /// Generate the runtime sweep in memory.
    #[arg(long, conflicts_with = "input_dir")]
    pub generate: bool,
    /// Directory of datasets written by `generate --preset runtime`.
    #[arg(long)]
    pub input_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub groups: usize,
    /// EM iterations timed per run.
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
    /// Timing rows per M. Rounds are interleaved across datasets so drift in
    /// machine speed does not bias one M against another.
    #[arg(long, default_value_t = 1)]
    pub repeat: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Timing CSV with columns `M,seconds`.
    #[arg(long)]
    pub output: PathBuf,
}

fn load_dir(dir: &Path) -> Result<Vec<EncodedDataset>> {
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("data.csv").is_file() && p.join("schema.json").is_file())
        .collect();
    subdirs.sort();
    let mut out = Vec::new();
    for d in subdirs {
        let schema = FeatureSchema::from_json_file(d.join("schema.json"))?;
        out.push(encode(&load_csv(d.join("data.csv"), &schema)?, &schema)?);
    }
    if out.is_empty() {
        bail!(
            "no datasets (data.csv + schema.json) under {}",
            dir.display()
        );
    }
    out.sort_by_key(EncodedDataset::n_features);
    Ok(out)
}

pub fn run(args: BenchArgs) -> Result<()> {
    let started = Instant::now();
    let datasets = match (&args.input_dir, args.generate) {
        (Some(dir), _) => load_dir(dir)?,
        (None, true) => paper_analysis_preset("runtime", args.seed)?
            .configs
            .iter()
            .map(|c| generate(c).map(|(d, _)| d))
            .collect::<fird::Result<_>>()?,
        (None, false) => bail!("pass --generate or --input-dir"),
    };
    let mut cfg = FitConfig::new(args.groups);
    cfg.seed = args.seed;
    let mut w = csv::Writer::from_path(&args.output)?;
    w.write_record(["M", "seconds"])?;
    let refs: Vec<&EncodedDataset> = datasets.iter().collect();
    let rounds = interleaved_iteration_seconds(&refs, &cfg, args.iters, args.repeat)?;
    for (data, times) in datasets.iter().zip(&rounds) {
        for secs in times {
            w.write_record([data.n_features().to_string(), format!("{secs:.6}")])?;
            eprintln!("bench: M={} {:.4}s per iteration", data.n_features(), secs);
        }
    }
    w.flush()?;
    let mut inputs = Vec::new();
    if let Some(d) = &args.input_dir {
        inputs.push(d.as_path());
    }
    RunManifest::new("bench", &args, Some(args.seed), started)
        .inputs(&inputs)
        .outputs(&[&args.output])
        .write(&sibling(&args.output, "manifest.json"))
}
