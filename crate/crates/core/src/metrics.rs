//! Clustering and detection metrics.

use std::collections::HashMap;
use std::hash::Hash;
use std::path::Path;

use serde::Serialize;

use crate::error::{FirdError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClusteringScore {
    pub homogeneity: f64,
    pub completeness: f64,
    pub v_score: f64,
}

fn entropy_of(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Homogeneity, completeness and their harmonic mean (V-score).
///
/// `h = 1 - H(C|K)/H(C)` and `c = 1 - H(K|C)/H(K)`, with `h = 1` when
/// `H(C) = 0` and `c = 1` when `H(K) = 0`.
pub fn clustering_scores<A, B>(truth: &[A], predicted: &[B]) -> Result<ClusteringScore>
where
    A: Hash + Eq,
    B: Hash + Eq,
{
    if truth.len() != predicted.len() {
        return Err(FirdError::Dimension(format!(
            "{} true labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.is_empty() {
        return Err(FirdError::UndefinedMetric(
            "clustering scores need at least one point".into(),
        ));
    }
    let n = truth.len() as f64;
    let mut classes: HashMap<&A, usize> = HashMap::new();
    let mut clusters: HashMap<&B, usize> = HashMap::new();
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    for (a, b) in truth.iter().zip(predicted) {
        let nc = classes.len();
        let c = *classes.entry(a).or_insert(nc);
        let nk = clusters.len();
        let k = *clusters.entry(b).or_insert(nk);
        *joint.entry((c, k)).or_insert(0) += 1;
    }
    let mut class_n = vec![0usize; classes.len()];
    let mut cluster_n = vec![0usize; clusters.len()];
    for (&(c, k), &v) in &joint {
        class_n[c] += v;
        cluster_n[k] += v;
    }
    let h_c = entropy_of(class_n.iter().copied(), n);
    let h_k = entropy_of(cluster_n.iter().copied(), n);
    // Sum in a fixed order so the result does not depend on hash iteration.
    let mut cells: Vec<_> = joint.into_iter().collect();
    cells.sort_unstable();
    let mut h_c_given_k = 0.0;
    let mut h_k_given_c = 0.0;
    for ((c, k), v) in cells {
        let p = v as f64 / n;
        h_c_given_k -= p * (v as f64 / cluster_n[k] as f64).ln();
        h_k_given_c -= p * (v as f64 / class_n[c] as f64).ln();
    }
    let homogeneity = if h_c == 0.0 {
        1.0
    } else {
        (1.0 - h_c_given_k / h_c).clamp(0.0, 1.0)
    };
    let completeness = if h_k == 0.0 {
        1.0
    } else {
        (1.0 - h_k_given_c / h_k).clamp(0.0, 1.0)
    };
    let v_score = if homogeneity + completeness > 0.0 {
        2.0 * homogeneity * completeness / (homogeneity + completeness)
    } else {
        0.0
    };
    Ok(ClusteringScore {
        homogeneity,
        completeness,
        v_score,
    })
}

fn check_binary(labels: &[bool], scores: &[f64]) -> Result<(usize, usize)> {
    if labels.len() != scores.len() {
        return Err(FirdError::Dimension(format!(
            "{} labels but {} scores",
            labels.len(),
            scores.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(FirdError::InvalidArgument("scores contain NaN".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    Ok((pos, labels.len() - pos))
}

/// Area under the ROC curve via the Mann-Whitney statistic; tied scores
/// count one half.
pub fn roc_auc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    let (pos, neg) = check_binary(labels, scores)?;
    if pos == 0 || neg == 0 {
        return Err(FirdError::UndefinedMetric(
            "ROC-AUC needs both classes".into(),
        ));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean.
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if labels[k] {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let (p, q) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

/// Curve samples at every distinct threshold plus the area under the curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoints {
    pub thresholds: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub auc: f64,
}

/// Cumulative (threshold, true positives, false positives) at each distinct
/// score, from the highest score down.
fn sweep(labels: &[bool], scores: &[f64]) -> Vec<(f64, usize, usize)> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (pos, &k) in idx.iter().enumerate() {
        if labels[k] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_tie = idx.get(pos + 1).is_none_or(|&nx| scores[nx] != scores[k]);
        if last_of_tie {
            out.push((scores[k], tp, fp));
        }
    }
    out
}

/// ROC curve with `x = fpr`, `y = tpr`; the area is the trapezoid rule,
/// which equals [`roc_auc`].
pub fn roc_curve(labels: &[bool], scores: &[f64]) -> Result<CurvePoints> {
    let (pos, neg) = check_binary(labels, scores)?;
    if pos == 0 || neg == 0 {
        return Err(FirdError::UndefinedMetric(
            "ROC curve needs both classes".into(),
        ));
    }
    let mut c = CurvePoints {
        thresholds: vec![f64::INFINITY],
        x: vec![0.0],
        y: vec![0.0],
        auc: 0.0,
    };
    for (t, tp, fp) in sweep(labels, scores) {
        let (fx, ty) = (fp as f64 / neg as f64, tp as f64 / pos as f64);
        let (px, py) = (*c.x.last().unwrap(), *c.y.last().unwrap());
        c.auc += (fx - px) * (ty + py) / 2.0;
        c.thresholds.push(t);
        c.x.push(fx);
        c.y.push(ty);
    }
    Ok(c)
}

/// Precision-recall curve with `x = recall`, `y = precision`, starting at
/// `(0, 1)`. The area is average precision: `sum_k (R_k - R_{k-1}) P_k`.
pub fn pr_curve(labels: &[bool], scores: &[f64]) -> Result<CurvePoints> {
    let (pos, _) = check_binary(labels, scores)?;
    if pos == 0 {
        return Err(FirdError::UndefinedMetric(
            "PR curve needs at least one positive".into(),
        ));
    }
    let mut c = CurvePoints {
        thresholds: vec![f64::INFINITY],
        x: vec![0.0],
        y: vec![1.0],
        auc: 0.0,
    };
    for (t, tp, fp) in sweep(labels, scores) {
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        c.auc += (recall - c.x.last().unwrap()) * precision;
        c.thresholds.push(t);
        c.x.push(recall);
        c.y.push(precision);
    }
    Ok(c)
}

/// Average precision; see [`pr_curve`].
pub fn pr_auc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    Ok(pr_curve(labels, scores)?.auc)
}

fn write_curve(c: &CurvePoints, header: [&str; 3], swap: bool, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for i in 0..c.x.len() {
        let (a, b) = if swap {
            (c.y[i], c.x[i])
        } else {
            (c.x[i], c.y[i])
        };
        w.write_record([c.thresholds[i].to_string(), a.to_string(), b.to_string()])?;
    }
    w.flush().map_err(|e| FirdError::io(path, e))
}

/// `threshold,precision,recall`
pub fn write_pr_csv(c: &CurvePoints, path: impl AsRef<Path>) -> Result<()> {
    write_curve(c, ["threshold", "precision", "recall"], true, path.as_ref())
}

/// `threshold,tpr,fpr`
pub fn write_roc_csv(c: &CurvePoints, path: impl AsRef<Path>) -> Result<()> {
    write_curve(c, ["threshold", "tpr", "fpr"], true, path.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_clustering_up_to_renaming() {
        let s = clustering_scores(&[0, 0, 1, 1, 2], &["b", "b", "a", "a", "c"]).unwrap();
        assert_eq!((s.homogeneity, s.completeness, s.v_score), (1.0, 1.0, 1.0));
    }

    #[test]
    fn single_cluster_is_complete_not_homogeneous() {
        let s = clustering_scores(&[0, 1, 0, 1], &[7, 7, 7, 7]).unwrap();
        assert_eq!(s.homogeneity, 0.0);
        assert_eq!(s.completeness, 1.0);
        assert_eq!(s.v_score, 0.0);
    }

    #[test]
    fn split_pure_cluster() {
        // Two classes, each split into two pure clusters: h = 1, c = 1/2.
        let s = clustering_scores(&[0, 0, 1, 1], &[0, 1, 2, 3]).unwrap();
        assert!((s.homogeneity - 1.0).abs() < 1e-12);
        assert!((s.completeness - 0.5).abs() < 1e-12);
        assert!((s.v_score - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_and_empty() {
        assert!(clustering_scores(&[0, 1], &[0]).is_err());
        assert!(clustering_scores::<u8, u8>(&[], &[]).is_err());
    }

    #[test]
    fn roc_basic_cases() {
        let l = [false, false, true, true];
        assert_eq!(roc_auc(&l, &[0.1, 0.2, 0.8, 0.9]).unwrap(), 1.0);
        assert_eq!(roc_auc(&l, &[0.9, 0.8, 0.2, 0.1]).unwrap(), 0.0);
        assert_eq!(roc_auc(&l, &[0.5; 4]).unwrap(), 0.5);
        assert!(roc_auc(&[true, true], &[0.1, 0.2]).is_err());
        assert!(roc_auc(&l, &[0.1, f64::NAN, 0.2, 0.3]).is_err());
    }

    #[test]
    fn roc_curve_area_matches_rank_statistic() {
        let l = [true, false, true, false, false, true, false];
        let s = [0.9, 0.9, 0.3, 0.1, 0.5, 0.5, 0.2];
        let c = roc_curve(&l, &s).unwrap();
        assert!((c.auc - roc_auc(&l, &s).unwrap()).abs() < 1e-15);
        assert!(c.x.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn pr_basic_cases() {
        assert_eq!(pr_auc(&[true, true, false], &[0.9, 0.8, 0.1]).unwrap(), 1.0);
        // One positive ranked last of five.
        let l = [false, false, false, false, true];
        let s = [0.9, 0.8, 0.7, 0.6, 0.1];
        assert!((pr_auc(&l, &s).unwrap() - 0.2).abs() < 1e-15);
        assert!(pr_auc(&[false, false], &[0.1, 0.2]).is_err());
        let c = pr_curve(&l, &s).unwrap();
        assert_eq!((c.x[0], c.y[0]), (0.0, 1.0));
        assert_eq!(*c.x.last().unwrap(), 1.0);
    }
}
