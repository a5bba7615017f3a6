//! Evaluation harness: labeled anomaly benchmarks on continuous tables and
//! per-iteration timing.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::data::{encode, load_csv, read_header, EncodedDataset, FeatureSchema};
use crate::detect::anomaly_scores;
use crate::em::fit;
use crate::error::{FirdError, Result};
use crate::metrics::{pr_auc, roc_auc};
use crate::model::{FitConfig, ModelParams};

/// Truthy label cells: any nonzero number, or `true`/`yes`/`anomaly`/`outlier`.
pub fn is_positive_label(cell: &str) -> bool {
    let t = cell.trim();
    match t.parse::<f64>() {
        Ok(v) => v != 0.0,
        Err(_) => matches!(
            t.to_ascii_lowercase().as_str(),
            "true" | "yes" | "anomaly" | "outlier"
        ),
    }
}

/// Loads a numeric table whose non-label columns are quantile-binned into
/// `bins` bins. Returns the encoded features and the binary labels.
pub fn load_labeled_continuous(
    path: impl AsRef<Path>,
    label: &str,
    bins: usize,
) -> Result<(EncodedDataset, Vec<bool>)> {
    let path = path.as_ref();
    let header = read_header(path)?;
    if !header.iter().any(|h| h == label) {
        return Err(FirdError::Schema(format!(
            "label column '{label}' is missing from {}",
            path.display()
        )));
    }
    let schema = FeatureSchema::all_continuous(&header, Some(label), bins)?;
    let table = load_csv(path, &schema)?;
    let labels = table
        .column_strings(label)
        .ok_or_else(|| FirdError::Schema(format!("label column '{label}' not loaded")))?
        .iter()
        .map(|c| is_positive_label(c))
        .collect();
    Ok((encode(&table, &schema)?, labels))
}

#[derive(Debug, Clone, Serialize)]
pub struct AnomalyBenchResult {
    pub bins: usize,
    pub n_rows: usize,
    pub n_anomalies: usize,
    pub active_components: usize,
    pub roc_auc: f64,
    pub pr_auc: f64,
    pub seconds: f64,
}

/// Fit, score every row with [`anomaly_scores`] and compare with the labels.
pub fn anomaly_benchmark(
    data: &EncodedDataset,
    labels: &[bool],
    cfg: &FitConfig,
) -> Result<(f64, f64, usize)> {
    let result = fit(data, cfg)?;
    let scores = anomaly_scores(data, &result.params)?;
    Ok((
        roc_auc(labels, &scores)?,
        pr_auc(labels, &scores)?,
        result.params.n_active(),
    ))
}

/// [`anomaly_benchmark`] on a labeled CSV for each bin count.
pub fn anomaly_benchmark_csv(
    path: impl AsRef<Path>,
    label: &str,
    bin_counts: &[usize],
    cfg: &FitConfig,
) -> Result<Vec<AnomalyBenchResult>> {
    let path = path.as_ref();
    bin_counts
        .iter()
        .map(|&bins| {
            let start = Instant::now();
            let (data, labels) = load_labeled_continuous(path, label, bins)?;
            let (roc, pr, active) = anomaly_benchmark(&data, &labels, cfg)?;
            Ok(AnomalyBenchResult {
                bins,
                n_rows: data.n_rows(),
                n_anomalies: labels.iter().filter(|&&l| l).count(),
                active_components: active,
                roc_auc: roc,
                pr_auc: pr,
                seconds: start.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

/// Per-iteration EM time on several datasets, measured in `rounds`
/// interleaved passes: each round times `iters` iterations on every dataset
/// in turn, so slow drift in machine speed affects all datasets alike.
/// Returns, for each dataset, the median iteration time of every round.
pub fn interleaved_iteration_seconds(
    datasets: &[&EncodedDataset],
    cfg: &FitConfig,
    iters: usize,
    rounds: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![Vec::with_capacity(rounds); datasets.len()];
    for _ in 0..rounds {
        for (data, times) in datasets.iter().zip(&mut out) {
            times.push(median(&iteration_seconds(data, cfg, iters)?));
        }
    }
    Ok(out)
}

/// Wall time of each of `iters` EM iterations (M-step plus E-step) on `data`.
/// Convergence checks and the elimination search are switched off.
pub fn iteration_seconds(data: &EncodedDataset, cfg: &FitConfig, iters: usize) -> Result<Vec<f64>> {
    let mut cfg = cfg.clone();
    cfg.max_outer_iters = iters + 1;
    cfg.tol = f64::MIN_POSITIVE;
    cfg.elimination_iters = 0;
    cfg.prune_threshold = Some(0.0);
    let trace = fit(data, &cfg)?.trace;
    Ok(trace.seconds.windows(2).map(|w| w[1] - w[0]).collect())
}

/// Median of a non-empty slice.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        (v[k - 1] + v[k]) / 2.0
    }
}

/// Least-squares line `y = a + b x`; returns `(a, b, r_squared)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    (a, b, r2)
}

/// Whether cluster `g` keeps the sparse and smooth branches apart on every
/// feature: `alpha` puts at least 0.9 of its mass on `support[m]` and no
/// `beta` entry exceeds `5 / D_m`.
pub fn is_disentangled(params: &ModelParams, g: usize, support: &[Vec<u32>]) -> bool {
    support.iter().enumerate().all(|(m, sup)| {
        let alpha = params.alpha(g, m);
        let on_support: f64 = sup.iter().map(|&v| alpha[v as usize]).sum();
        let cap = 5.0 / params.dims()[m] as f64;
        on_support >= 0.9 && params.beta(g, m).iter().all(|&b| b <= cap)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interleaved_timing_shape() {
        let a = EncodedDataset::from_codes(vec![0, 1, 1, 0, 2, 1], &[3, 2]).unwrap();
        let b = EncodedDataset::from_codes(vec![0, 1, 1, 0], &[2]).unwrap();
        let t = interleaved_iteration_seconds(&[&a, &b], &FitConfig::new(2), 3, 4).unwrap();
        assert_eq!(t.len(), 2);
        assert!(t
            .iter()
            .all(|r| r.len() == 4 && r.iter().all(|&s| s >= 0.0)));
    }

    #[test]
    fn labels() {
        for t in ["1", "1.0", "-1", "true", "Outlier"] {
            assert!(is_positive_label(t), "{t}");
        }
        for f in ["0", "0.0", "false", "normal", ""] {
            assert!(!is_positive_label(f), "{f}");
        }
    }

    #[test]
    fn exact_line() {
        let (a, b, r2) = linear_fit(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]);
        assert!((a - 1.0).abs() < 1e-12 && (b - 2.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
