//! Decision layer on top of a fitted model: entropy-threshold outlier
//! filtering, label inference from a per-cluster decision distribution,
//! random-model fraud-group scoring and continuous anomaly scores.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::EncodedDataset;
use crate::em::{e_step, Responsibilities, SufficientStats};
use crate::error::{FirdError, Result};
use crate::model::{check_compatible, log_feature_terms, KernelTables, ModelParams};
use crate::numeric::{ln_choose, ln_gamma, log_add_exp, xlogx};

pub const DEFAULT_EPSILON: f64 = 0.05;

/// Default tolerance for flagging fraud groups. Clusters built from uniform
/// rows pick up a spurious excess of a few tenths of their entropy once the
/// random background is split across several components, so the group test
/// needs a much wider margin than the row test.
pub const DEFAULT_FRAUD_EPSILON: f64 = 0.5;

/// Entropy of cluster `g`'s row distribution,
/// `-sum_m sum_i h(mu alpha_i + (1-mu) beta_i)` with `h(y) = y ln y`.
pub fn cluster_entropy(params: &ModelParams, g: usize) -> f64 {
    let mut h = 0.0;
    for m in 0..params.n_features() {
        let mu = params.mu(g, m);
        for (a, b) in params.alpha(g, m).iter().zip(params.beta(g, m)) {
            h -= xlogx(mu * a + (1.0 - mu) * b);
        }
    }
    h
}

/// `-log p(row | d = g)`.
pub fn row_information(row: &[u32], g: usize, params: &ModelParams) -> f64 {
    -log_feature_terms(row, g, params)
        .into_iter()
        .map(|(s, t)| log_add_exp(s, t))
        .sum::<f64>()
}

fn entropies(params: &ModelParams) -> Vec<f64> {
    (0..params.n_groups())
        .map(|g| cluster_entropy(params, g))
        .collect()
}

/// Flags rows whose information exceeds `(1 + epsilon)` times the entropy of
/// every active cluster.
pub fn filter_outliers(
    data: &EncodedDataset,
    params: &ModelParams,
    epsilon: f64,
) -> Result<Vec<bool>> {
    check_compatible(data, params)?;
    if !(epsilon >= 0.0) {
        return Err(FirdError::InvalidArgument("epsilon must be >= 0".into()));
    }
    let tables = KernelTables::new(params);
    let h = entropies(params);
    let active: Vec<usize> = params.active_groups().collect();
    Ok((0..data.n_rows())
        .into_par_iter()
        .map(|n| {
            let row = data.row(n);
            active
                .iter()
                .all(|&g| -tables.row_log_lik(row, g) > (1.0 + epsilon) * h[g])
        })
        .collect())
}

/// Per-cluster probability that a member carries the label of interest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionDistribution {
    pub p_label_given_group: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DecisionJson {
    Plain(Vec<f64>),
    Wrapped { p_label_given_group: Vec<f64> },
}

impl DecisionDistribution {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(FirdError::InvalidArgument(
                "decision probabilities must lie in [0, 1]".into(),
            ));
        }
        Ok(DecisionDistribution {
            p_label_given_group: p,
        })
    }

    pub fn one_hot(groups: usize, g: usize) -> Self {
        let mut p = vec![0.0; groups];
        p[g] = 1.0;
        DecisionDistribution {
            p_label_given_group: p,
        }
    }

    /// 1 for flagged groups, 0 otherwise.
    pub fn from_flags(flags: &[bool]) -> Self {
        DecisionDistribution {
            p_label_given_group: flags.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// Accepts either a bare array or `{"p_label_given_group": [...]}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let p = match serde_json::from_str::<DecisionJson>(text)? {
            DecisionJson::Plain(p) => p,
            DecisionJson::Wrapped {
                p_label_given_group,
            } => p_label_given_group,
        };
        Self::new(p)
    }

    pub fn len(&self) -> usize {
        self.p_label_given_group.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_label_given_group.is_empty()
    }
}

/// `l_n = sum_g p(label | g) phi[n][g]`; rows in `outliers` score 0.
pub fn infer_labels(
    resp: &Responsibilities,
    decision: &DecisionDistribution,
    outliers: Option<&[bool]>,
) -> Result<Vec<f64>> {
    if decision.len() != resp.n_groups() {
        return Err(FirdError::Dimension(format!(
            "decision has {} entries but the model has {} clusters",
            decision.len(),
            resp.n_groups()
        )));
    }
    if let Some(o) = outliers {
        if o.len() != resp.n_rows() {
            return Err(FirdError::Dimension(
                "outlier mask length differs from row count".into(),
            ));
        }
    }
    let p = &decision.p_label_given_group;
    Ok((0..resp.n_rows())
        .map(|n| {
            if outliers.is_some_and(|o| o[n]) {
                return 0.0;
            }
            resp.phi_row(n).iter().zip(p).map(|(f, q)| f * q).sum()
        })
        .collect())
}

/// How a group's information and its random-model threshold are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FraudMode {
    /// `-log` of the multinomial probability of the group's counts under
    /// uniform sampling; the threshold is its exact expectation.
    #[default]
    Multinomial,
    /// `-sum [ln C(N_g, k) - k ln D]`, threshold at expected counts.
    Binomial,
    /// As `Binomial` with `C(D, k)`; terms with `k > D` contribute 0.
    Literal,
}

impl FromStr for FraudMode {
    type Err = FirdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multinomial" => Ok(FraudMode::Multinomial),
            "binomial" => Ok(FraudMode::Binomial),
            "literal" => Ok(FraudMode::Literal),
            other => Err(FirdError::InvalidArgument(format!(
                "unknown fraud mode {other:?}"
            ))),
        }
    }
}

impl fmt::Display for FraudMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FraudMode::Multinomial => "multinomial",
            FraudMode::Binomial => "binomial",
            FraudMode::Literal => "literal",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupStats {
    pub group: usize,
    pub pi: f64,
    /// `N_g = sum_n phi[n][g]`.
    pub n_soft: f64,
    /// Information `I_g` of the observed soft counts.
    pub information: f64,
    /// Threshold `H_g` under the random model.
    pub threshold: f64,
}

/// `E[ln k!]` for `k ~ Binomial(n, p)`, summed over the bulk of the mass.
fn expected_ln_factorial(n: u64, p: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    if p >= 1.0 {
        return ln_gamma(n as f64 + 1.0);
    }
    let nf = n as f64;
    let mean = nf * p;
    let sd = (nf * p * (1.0 - p)).sqrt();
    let lo = (mean - 40.0 * sd - 1.0).floor().max(0.0) as u64;
    let hi = ((mean + 40.0 * sd + 1.0).ceil() as u64).min(n);
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let mut acc = 0.0;
    for k in lo..=hi {
        let kf = k as f64;
        let lpmf = ln_choose(nf, kf) + kf * lp + (nf - kf) * lq;
        acc += lpmf.exp() * ln_gamma(kf + 1.0);
    }
    acc
}

/// Information of one feature's soft counts, and its random-model threshold.
fn feature_information(
    counts: &[f64],
    n_g: f64,
    mode: FraudMode,
    cache: &mut HashMap<(u64, usize), f64>,
) -> (f64, f64) {
    let d = counts.len();
    let df = d as f64;
    let ln_d = df.ln();
    let expected = n_g / df;
    match mode {
        FraudMode::Multinomial => {
            let base = n_g * ln_d - ln_gamma(n_g + 1.0);
            let i = base
                + counts
                    .iter()
                    .map(|&k| ln_gamma(k.max(0.0) + 1.0))
                    .sum::<f64>();
            let n_int = n_g.round().max(0.0) as u64;
            let e = *cache
                .entry((n_int, d))
                .or_insert_with(|| df * expected_ln_factorial(n_int, 1.0 / df));
            (i, base + e)
        }
        FraudMode::Binomial => {
            let term = |k: f64| ln_choose(n_g, k) - k * ln_d;
            let i = -counts.iter().map(|&k| term(k)).sum::<f64>();
            (i, -df * term(expected))
        }
        FraudMode::Literal => {
            let term = |k: f64| {
                if k > df {
                    0.0
                } else {
                    ln_choose(df, k) - k * ln_d
                }
            };
            let i = -counts.iter().map(|&k| term(k)).sum::<f64>();
            (i, -df * term(expected))
        }
    }
}

/// `I_g - H_g > epsilon |H_g|`.
///
/// Taking the magnitude keeps the rule meaningful when the threshold is
/// negative, which the binomial forms produce for groups much larger than the
/// vocabulary.
pub fn exceeds_threshold(information: f64, threshold: f64, epsilon: f64) -> bool {
    information - threshold > epsilon * threshold.abs()
}

/// Scores every cluster against the uniform random model and flags the ones
/// whose soft counts are too unlikely to be random. Frozen and empty clusters
/// are never flagged and report zeroed statistics.
pub fn fraud_group_scores(
    data: &EncodedDataset,
    resp: &Responsibilities,
    params: &ModelParams,
    epsilon: f64,
    mode: FraudMode,
) -> Result<(Vec<bool>, Vec<GroupStats>)> {
    check_compatible(data, params)?;
    if resp.n_rows() != data.n_rows() || resp.n_groups() != params.n_groups() {
        return Err(FirdError::Dimension(
            "responsibilities do not match data and model".into(),
        ));
    }
    let stats = SufficientStats::from_responsibilities(data, resp);
    let mut cache = HashMap::new();
    let mut flags = vec![false; params.n_groups()];
    let mut out = Vec::with_capacity(params.n_groups());
    for g in 0..params.n_groups() {
        let n_g = stats.mass()[g];
        let mut s = GroupStats {
            group: g,
            pi: params.pi()[g],
            n_soft: n_g,
            information: 0.0,
            threshold: 0.0,
        };
        if params.is_active(g) && n_g > 0.0 {
            for m in 0..params.n_features() {
                let (i, h) = feature_information(stats.counts(g, m), n_g, mode, &mut cache);
                s.information += i;
                s.threshold += h;
            }
            flags[g] = exceeds_threshold(s.information, s.threshold, epsilon);
        }
        out.push(s);
    }
    Ok((flags, out))
}

fn ratio(info: f64, entropy: f64) -> f64 {
    if entropy > 0.0 {
        info / entropy
    } else if info <= 0.0 {
        1.0
    } else {
        f64::INFINITY
    }
}

/// `s_n = min_g I(x_n | g) / H_g` over active clusters; larger is more anomalous.
pub fn anomaly_scores(data: &EncodedDataset, params: &ModelParams) -> Result<Vec<f64>> {
    check_compatible(data, params)?;
    let tables = KernelTables::new(params);
    let h = entropies(params);
    let active: Vec<usize> = params.active_groups().collect();
    Ok((0..data.n_rows())
        .into_par_iter()
        .map(|n| {
            let row = data.row(n);
            active
                .iter()
                .map(|&g| ratio(-tables.row_log_lik(row, g), h[g]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect())
}

/// Where the per-cluster decision distribution comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    /// Flagged fraud groups get probability 1, all others 0.
    Auto,
    Given(DecisionDistribution),
}

#[derive(Debug, Clone)]
pub struct DetectConfig {
    pub epsilon: f64,
    pub fraud_epsilon: f64,
    pub mode: FraudMode,
    pub decision: Decision,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            epsilon: DEFAULT_EPSILON,
            fraud_epsilon: DEFAULT_FRAUD_EPSILON,
            mode: FraudMode::default(),
            decision: Decision::Auto,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DetectionReport {
    pub outlier_mask: Vec<bool>,
    pub hard_assignment: Vec<usize>,
    pub label_scores: Vec<f64>,
    pub anomaly_scores: Vec<f64>,
    pub group_flags: Vec<bool>,
    pub group_stats: Vec<GroupStats>,
}

impl DetectionReport {
    pub fn n_outliers(&self) -> usize {
        self.outlier_mask.iter().filter(|&&o| o).count()
    }

    /// `row,assignment,outlier,label_score,anomaly_score`
    pub fn write_rows_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "row",
            "assignment",
            "outlier",
            "label_score",
            "anomaly_score",
        ])?;
        for n in 0..self.outlier_mask.len() {
            w.write_record([
                n.to_string(),
                self.hard_assignment[n].to_string(),
                (self.outlier_mask[n] as u8).to_string(),
                self.label_scores[n].to_string(),
                self.anomaly_scores[n].to_string(),
            ])?;
        }
        w.flush().map_err(|e| FirdError::io(path, e))
    }

    /// `group,pi,n_soft,I,H,flagged`
    pub fn write_groups_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["group", "pi", "n_soft", "I", "H", "flagged"])?;
        for (s, f) in self.group_stats.iter().zip(&self.group_flags) {
            w.write_record([
                s.group.to_string(),
                s.pi.to_string(),
                s.n_soft.to_string(),
                s.information.to_string(),
                s.threshold.to_string(),
                (*f as u8).to_string(),
            ])?;
        }
        w.flush().map_err(|e| FirdError::io(path, e))
    }
}

/// Runs the full decision pipeline for `data` under a fitted model.
pub fn detect(
    data: &EncodedDataset,
    params: &ModelParams,
    cfg: &DetectConfig,
) -> Result<DetectionReport> {
    let resp = e_step(data, params)?;
    let outlier_mask = filter_outliers(data, params, cfg.epsilon)?;
    let (group_flags, group_stats) =
        fraud_group_scores(data, &resp, params, cfg.fraud_epsilon, cfg.mode)?;
    let decision = match &cfg.decision {
        Decision::Auto => DecisionDistribution::from_flags(&group_flags),
        Decision::Given(d) => d.clone(),
    };
    let label_scores = infer_labels(&resp, &decision, Some(&outlier_mask))?;
    let anomaly_scores = anomaly_scores(data, params)?;
    Ok(DetectionReport {
        outlier_mask,
        hard_assignment: resp.hard_assignment(),
        label_scores,
        anomaly_scores,
        group_flags,
        group_stats,
    })
}

/// `group,<feature names...>` with one row of `mu` per cluster.
pub fn write_mu_csv(params: &ModelParams, names: &[String], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["group".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for g in 0..params.n_groups() {
        let mut rec = vec![g.to_string()];
        rec.extend(params.mu_row(g).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| FirdError::io(path, e))
}

/// Long format `group,feature,value,alpha,beta`.
pub fn write_alpha_csv(
    params: &ModelParams,
    names: &[String],
    vocab: &[Vec<String>],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["group", "feature", "value", "alpha", "beta"])?;
    for g in 0..params.n_groups() {
        for m in 0..params.n_features() {
            for (i, (a, b)) in params.alpha(g, m).iter().zip(params.beta(g, m)).enumerate() {
                w.write_record([
                    g.to_string(),
                    names[m].clone(),
                    vocab[m][i].clone(),
                    a.to_string(),
                    b.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| FirdError::io(path, e))
}
