use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Args;
use fird::detect::{
    detect, write_alpha_csv, write_mu_csv, Decision, DecisionDistribution, DetectConfig, FraudMode,
    DEFAULT_EPSILON, DEFAULT_FRAUD_EPSILON,
};
use fird::{encode_with_vocab, load_csv, FeatureSchema, ModelFile};
use serde::Serialize;

use crate::manifest::{sibling, RunManifest};

#[derive(Args, Debug, Serialize)]
pub struct DetectArgs {
    /// Model JSON written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// Outlier tolerance: a row is an outlier if its information exceeds
    /// (1 + epsilon) times every active cluster's entropy.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Fraud-group tolerance: a cluster is flagged if its expected row
    /// information exceeds its entropy by this fraction.
    #[arg(long, default_value_t = DEFAULT_FRAUD_EPSILON)]
    pub fraud_epsilon: f64,
    /// multinomial, binomial or literal.
    #[arg(long, default_value = "multinomial")]
    pub fraud_mode: String,
    /// `auto` (flagged fraud groups) or a JSON file with p(label | group).
    #[arg(long, default_value = "auto")]
    pub decision: String,
    /// Row report CSV.
    #[arg(long)]
    pub output: PathBuf,
    /// Group report CSV (default: next to the row report, `.groups.csv`).
    #[arg(long)]
    pub groups_output: Option<PathBuf>,
    /// Optional export of the mu matrix.
    #[arg(long)]
    pub mu_output: Option<PathBuf>,
    /// Optional long-format export of alpha and beta.
    #[arg(long)]
    pub alpha_output: Option<PathBuf>,
}

pub fn run(args: DetectArgs) -> Result<()> {
    let started = Instant::now();
    let model = ModelFile::load(&args.model)
        .with_context(|| format!("reading model {}", args.model.display()))?;
    let params = model.to_params()?;
    let schema = FeatureSchema::from_json_file(&args.schema)
        .with_context(|| format!("reading schema {}", args.schema.display()))?;
    if let Some(names) = &model.features {
        if *names != schema.names() {
            bail!(
                "schema features {:?} do not match the model's {:?}",
                schema.names(),
                names
            );
        }
    }
    let table = load_csv(&args.input, &schema)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let data = encode_with_vocab(&table, &schema, &model.vocab)?;

    let decision = if args.decision == "auto" {
        Decision::Auto
    } else {
        let text = std::fs::read_to_string(&args.decision)
            .with_context(|| format!("reading decision file {}", args.decision))?;
        Decision::Given(DecisionDistribution::from_json(&text)?)
    };
    let cfg = DetectConfig {
        epsilon: args.epsilon,
        fraud_epsilon: args.fraud_epsilon,
        mode: args.fraud_mode.parse::<FraudMode>()?,
        decision,
    };
    let report = detect(&data, &params, &cfg)?;

    report.write_rows_csv(&args.output)?;
    let groups_path = args
        .groups_output
        .clone()
        .unwrap_or_else(|| sibling(&args.output, "groups.csv"));
    report.write_groups_csv(&groups_path)?;
    let mut outputs = vec![args.output.as_path(), groups_path.as_path()];
    if let Some(p) = &args.mu_output {
        write_mu_csv(&params, data.names(), p)?;
        outputs.push(p);
    }
    if let Some(p) = &args.alpha_output {
        write_alpha_csv(&params, data.names(), data.vocab(), p)?;
        outputs.push(p);
    }
    eprintln!(
        "detect: {} rows, {} outliers, {} flagged groups",
        data.n_rows(),
        report.n_outliers(),
        report.group_flags.iter().filter(|&&f| f).count()
    );
    RunManifest::new("detect", &args, None, started)
        .inputs(&[&args.model, &args.input, &args.schema])
        .outputs(&outputs)
        .write(&sibling(&args.output, "manifest.json"))
}
