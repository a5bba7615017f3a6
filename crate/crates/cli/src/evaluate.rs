use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Args;
use fird::harness::is_positive_label;
use fird::metrics::{
    clustering_scores, pr_curve, roc_curve, write_pr_csv, write_roc_csv, ClusteringScore,
};
use serde::Serialize;

use crate::manifest::{sibling, RunManifest};

#[derive(Args, Debug, Serialize)]
pub struct EvaluateArgs {
    /// Ground truth CSV, e.g. `truth.csv` from `generate` or a labeled dataset.
    #[arg(long)]
    pub truth: PathBuf,
    /// Row report from `detect`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Binary label column in the truth file.
    #[arg(long, default_value = "fraud")]
    pub label_column: String,
    /// Cluster column in the truth file, compared with `assignment`.
    #[arg(long, default_value = "d")]
    pub cluster_column: String,
    /// Score column in the predictions: label_score or anomaly_score.
    #[arg(long, default_value = "label_score")]
    pub score_column: String,
    /// JSON report to write.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub pr_curve: Option<PathBuf>,
    #[arg(long)]
    pub roc_curve: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Report {
    n_rows: usize,
    positives: Option<usize>,
    score_column: String,
    roc_auc: Option<f64>,
    pr_auc: Option<f64>,
    clustering: Option<ClusteringScore>,
}

fn read_columns(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let rows = r.records().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((header, rows))
}

fn column<'a>(
    header: &[String],
    rows: &'a [csv::StringRecord],
    name: &str,
) -> Option<Vec<&'a str>> {
    let i = header.iter().position(|h| h == name)?;
    Some(rows.iter().map(|r| r.get(i).unwrap_or("")).collect())
}

pub fn run(args: EvaluateArgs) -> Result<()> {
    let started = Instant::now();
    let (th, trows) = read_columns(&args.truth)?;
    let (ph, prows) = read_columns(&args.predictions)?;
    if trows.len() != prows.len() {
        bail!(
            "truth has {} rows but predictions have {}",
            trows.len(),
            prows.len()
        );
    }
    let mut report = Report {
        n_rows: trows.len(),
        positives: None,
        score_column: args.score_column.clone(),
        roc_auc: None,
        pr_auc: None,
        clustering: None,
    };
    let mut outputs = vec![args.output.clone()];

    let labels: Option<Vec<bool>> = column(&th, &trows, &args.label_column)
        .map(|c| c.iter().map(|v| is_positive_label(v)).collect());
    let has_cluster_column = th.contains(&args.cluster_column);
    if let Some(labels) = labels {
        let positives = labels.iter().filter(|&&l| l).count();
        report.positives = Some(positives);
        if positives == 0 || positives == labels.len() {
            // Generated data without uniform rows has only positives; the
            // clustering scores are still meaningful.
            if !has_cluster_column {
                bail!(
                    "'{}' holds a single class; ROC and PR are undefined",
                    args.label_column
                );
            }
            eprintln!(
                "evaluate: '{}' holds a single class, skipping ROC/PR",
                args.label_column
            );
        } else {
            let scores = column(&ph, &prows, &args.score_column)
                .with_context(|| format!("predictions have no '{}' column", args.score_column))?
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .context("non-numeric score")?;
            let roc = roc_curve(&labels, &scores)?;
            let pr = pr_curve(&labels, &scores)?;
            report.roc_auc = Some(roc.auc);
            report.pr_auc = Some(pr.auc);
            if let Some(p) = &args.roc_curve {
                write_roc_csv(&roc, p)?;
                outputs.push(p.clone());
            }
            if let Some(p) = &args.pr_curve {
                write_pr_csv(&pr, p)?;
                outputs.push(p.clone());
            }
        }
    }
    if let (Some(truth), Some(pred)) = (
        column(&th, &trows, &args.cluster_column),
        column(&ph, &prows, "assignment"),
    ) {
        report.clustering = Some(clustering_scores(&truth, &pred)?);
    }
    if report.roc_auc.is_none() && report.clustering.is_none() {
        bail!(
            "nothing to evaluate: need a two-class '{}' column, or a '{}' column plus an 'assignment' column in the predictions",
            args.label_column,
            args.cluster_column
        );
    }
    std::fs::write(&args.output, serde_json::to_string_pretty(&report)?)?;
    println!("{}", serde_json::to_string(&report)?);
    let refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    RunManifest::new("evaluate", &args, None, started)
        .inputs(&[&args.truth, &args.predictions])
        .outputs(&refs)
        .write(&sibling(&args.output, "manifest.json"))
}
