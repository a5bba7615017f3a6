use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use fird::model::{RegSettings, DEFAULT_ELIMINATION_ITERS, DEFAULT_LAMBDA1_RAMP};
use fird::{encode, fit, load_csv, FeatureSchema, FitConfig, InnerSolver, ModelFile};
use serde::Serialize;

use crate::manifest::{sibling, RunManifest};

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Exact,
    Literal,
}

#[derive(Args, Debug, Serialize)]
pub struct FitArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// Feature schema JSON.
    #[arg(long)]
    pub schema: PathBuf,
    /// Number of latent clusters.
    #[arg(long)]
    pub groups: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 0.5)]
    pub lambda2: f64,
    /// Relative objective improvement at which EM stops.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long = "max-iter", default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long = "max-inner-iter", default_value_t = 100)]
    pub max_inner_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub inner_tol: f64,
    #[arg(long, value_enum, default_value_t = Solver::Exact)]
    pub inner_solver: Solver,
    /// EM iterations per component-elimination trial; 0 disables the search.
    #[arg(long, default_value_t = DEFAULT_ELIMINATION_ITERS)]
    pub elimination_iters: usize,
    /// Outer iterations over which the lambda1 weight ramps up from zero.
    #[arg(long, default_value_t = DEFAULT_LAMBDA1_RAMP)]
    pub lambda1_ramp: usize,
    /// Rows per reduction block; results are reproducible for a fixed value.
    #[arg(long, default_value_t = 1024)]
    pub chunk_rows: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model JSON to write.
    #[arg(long)]
    pub output: PathBuf,
    /// Trace CSV (default: next to the model, `.trace.csv`).
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

impl FitArgs {
    pub fn config(&self) -> FitConfig {
        let mut c = FitConfig::new(self.groups);
        c.lambda1 = self.lambda1;
        c.lambda2 = self.lambda2;
        c.tol = self.tol;
        c.max_outer_iters = self.max_iter;
        c.max_inner_iters = self.max_inner_iter;
        c.inner_tol = self.inner_tol;
        c.inner_solver = match self.inner_solver {
            Solver::Exact => InnerSolver::Exact,
            Solver::Literal => InnerSolver::Literal,
        };
        c.elimination_iters = self.elimination_iters;
        c.lambda1_ramp = self.lambda1_ramp;
        c.chunk_rows = self.chunk_rows;
        c.seed = self.seed;
        c
    }
}

pub fn run(args: FitArgs) -> Result<()> {
    let started = Instant::now();
    let schema = FeatureSchema::from_json_file(&args.schema)
        .with_context(|| format!("reading schema {}", args.schema.display()))?;
    let table = load_csv(&args.input, &schema)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let data = encode(&table, &schema)?;
    let cfg = args.config();
    let result = fit(&data, &cfg)?;

    let model = ModelFile::from_params(
        &result.params,
        data.vocab(),
        data.names(),
        RegSettings {
            lambda1: cfg.lambda1,
            lambda2: cfg.lambda2,
        },
        cfg.seed,
    );
    model.save(&args.output)?;
    let trace_path = args
        .trace
        .clone()
        .unwrap_or_else(|| sibling(&args.output, "trace.csv"));
    result.trace.write_csv(&trace_path)?;
    eprintln!(
        "fit: {} rows, {} iterations, {} of {} clusters active, objective {:.6}{}",
        data.n_rows(),
        result.trace.iterations(),
        result.params.n_active(),
        cfg.groups,
        result
            .trace
            .records
            .last()
            .map_or(f64::NAN, |r| r.objective),
        if result.trace.converged {
            ""
        } else {
            " (not converged)"
        }
    );

    let manifest_path = sibling(&args.output, "manifest.json");
    RunManifest::new("fit", &args, Some(args.seed), started)
        .inputs(&[&args.input, &args.schema])
        .outputs(&[&args.output, &trace_path])
        .write(&manifest_path)
}
