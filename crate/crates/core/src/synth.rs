//! Seeded synthetic data following the model's generative process, plus the
//! presets used for recovery, regularization and runtime studies.

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{EncodedDataset, FeatureSchema, FeatureSpec};
use crate::error::{FirdError, Result};

/// Synchronization weight on the "active" half of each cluster's features in
/// the default pattern, and on the remaining half.
pub const DEFAULT_MU_HIGH: f64 = 0.8;
pub const DEFAULT_MU_LOW: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Structured rows, before the appended uniform rows.
    pub n: usize,
    pub dims: Vec<usize>,
    pub groups: usize,
    /// `G x M` probability of drawing from the sparse distribution.
    pub mu: Vec<Vec<f64>>,
    /// Support size of each cluster's sparse distributions.
    pub support: Vec<usize>,
    pub pi: Vec<f64>,
    /// Appended uniform rows per structured row.
    pub nfr: f64,
    pub seed: u64,
}

impl GenConfig {
    /// Equal cluster weights, `D` values for every feature, and the default
    /// pattern: each cluster synchronizes strongly on its own random half of
    /// the features and weakly on the rest.
    pub fn recovery(
        n: usize,
        m: usize,
        d: usize,
        groups: usize,
        support: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let mu = (0..groups)
            .map(|_| {
                let mut row = vec![DEFAULT_MU_LOW; m];
                for j in sample(&mut rng, m, m / 2) {
                    row[j] = DEFAULT_MU_HIGH;
                }
                row
            })
            .collect();
        GenConfig {
            n,
            dims: vec![d; m],
            groups,
            mu,
            support: vec![support; groups],
            pi: vec![1.0 / groups as f64; groups],
            nfr: 0.0,
            seed,
        }
    }

    /// Same `mu` for every cluster and feature.
    pub fn constant_mu(
        n: usize,
        dims: Vec<usize>,
        groups: usize,
        mu: f64,
        support: usize,
        seed: u64,
    ) -> Self {
        let m = dims.len();
        GenConfig {
            n,
            dims,
            groups,
            mu: vec![vec![mu; m]; groups],
            support: vec![support; groups],
            pi: vec![1.0 / groups as f64; groups],
            nfr: 0.0,
            seed,
        }
    }

    /// `n_fraud` structured rows in `groups` fraud groups, with `nfr` uniform
    /// "normal" rows appended per fraud row.
    pub fn fraud_mix(n_fraud: usize, nfr: f64, seed: u64) -> Self {
        GenConfig {
            nfr,
            ..GenConfig::recovery(n_fraud, 20, 100, 5, 2, seed)
        }
    }

    pub fn with_nfr(mut self, nfr: f64) -> Self {
        self.nfr = nfr;
        self
    }

    pub fn n_features(&self) -> usize {
        self.dims.len()
    }

    /// Number of appended uniform rows, `floor(n * nfr)`.
    pub fn n_random(&self) -> usize {
        (self.n as f64 * self.nfr).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(FirdError::InvalidArgument(msg.into()));
        if self.groups == 0 {
            return bad("at least one cluster is required");
        }
        if self.dims.is_empty() || self.dims.contains(&0) {
            return bad("every feature needs at least one value");
        }
        if self.pi.len() != self.groups
            || self.mu.len() != self.groups
            || self.support.len() != self.groups
        {
            return bad("pi, mu and support need one entry per cluster");
        }
        if self.pi.iter().any(|p| !(*p >= 0.0)) || (self.pi.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad("pi must be a probability vector");
        }
        if self
            .mu
            .iter()
            .any(|r| r.len() != self.dims.len() || r.iter().any(|v| !(0.0..=1.0).contains(v)))
        {
            return bad("mu must be G x M with entries in [0, 1]");
        }
        if self
            .support
            .iter()
            .any(|&s| s == 0 || self.dims.iter().any(|&d| s > d))
        {
            return bad("support sizes must lie in [1, D_m]");
        }
        if !(self.nfr >= 0.0) {
            return bad("nfr must be >= 0");
        }
        Ok(())
    }
}

/// Latent draws behind a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Cluster of each row; -1 for appended uniform rows.
    pub d: Vec<i64>,
    /// Row-major `N x M` synchronization indicators.
    pub f: Vec<bool>,
    /// Structured rows are the positives of a fraud mix.
    pub fraud: Vec<bool>,
    /// `supports[g][m]`: values carrying the sparse mass.
    pub supports: Vec<Vec<Vec<u32>>>,
    n_features: usize,
}

impl GroundTruth {
    pub fn n_rows(&self) -> usize {
        self.d.len()
    }

    pub fn f_row(&self, n: usize) -> &[bool] {
        &self.f[n * self.n_features..(n + 1) * self.n_features]
    }

    /// `row,d,fraud`
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["row", "d", "fraud"])?;
        for (n, (d, f)) in self.d.iter().zip(&self.fraud).enumerate() {
            w.write_record([n.to_string(), d.to_string(), (*f as u8).to_string()])?;
        }
        w.flush().map_err(|e| FirdError::io(path, e))
    }

    /// Reads the `d` and `fraud` columns back.
    pub fn read_labels(path: impl AsRef<Path>) -> Result<(Vec<i64>, Vec<bool>)> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)?;
        let mut d = Vec::new();
        let mut fraud = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse_err = |what: &str| FirdError::Parse {
                line: i as u64 + 2,
                message: format!("bad {what} value"),
            };
            d.push(
                rec.get(1)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| parse_err("d"))?,
            );
            fraud.push(match rec.get(2) {
                Some("1") | Some("true") => true,
                Some("0") | Some("false") => false,
                _ => return Err(parse_err("fraud")),
            });
        }
        Ok((d, fraud))
    }
}

/// Draws a dataset: for each structured row a cluster from `pi`, then per
/// feature a synchronization indicator from `mu` and a value from the sparse
/// support (uniformly) or the whole vocabulary (uniformly). Uniform rows are
/// appended afterwards.
pub fn generate(cfg: &GenConfig) -> Result<(EncodedDataset, GroundTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let m = cfg.n_features();
    let supports: Vec<Vec<Vec<u32>>> = (0..cfg.groups)
        .map(|g| {
            cfg.dims
                .iter()
                .map(|&d| {
                    sample(&mut rng, d, cfg.support[g])
                        .into_iter()
                        .map(|i| i as u32)
                        .collect()
                })
                .collect()
        })
        .collect();
    let cluster =
        WeightedIndex::new(&cfg.pi).map_err(|e| FirdError::InvalidArgument(format!("pi: {e}")))?;

    let total = cfg.n + cfg.n_random();
    let mut codes = Vec::with_capacity(total * m);
    let mut d = Vec::with_capacity(total);
    let mut f = Vec::with_capacity(total * m);
    for _ in 0..cfg.n {
        let g = cluster.sample(&mut rng);
        d.push(g as i64);
        for (j, &dim) in cfg.dims.iter().enumerate() {
            let sync = rng.random::<f64>() < cfg.mu[g][j];
            f.push(sync);
            let s = &supports[g][j];
            codes.push(if sync {
                s[rng.random_range(0..s.len())]
            } else {
                rng.random_range(0..dim as u32)
            });
        }
    }
    for _ in 0..cfg.n_random() {
        d.push(-1);
        for &dim in &cfg.dims {
            f.push(false);
            codes.push(rng.random_range(0..dim as u32));
        }
    }
    let fraud = d.iter().map(|&g| g >= 0).collect();
    let data = EncodedDataset::from_codes(codes, &cfg.dims)?;
    Ok((
        data,
        GroundTruth {
            d,
            f,
            fraud,
            supports,
            n_features: m,
        },
    ))
}

/// Writes `data` as a CSV (one column per feature, values from the
/// vocabulary) and a matching all-categorical schema.
pub fn write_dataset(
    data: &EncodedDataset,
    csv_path: impl AsRef<Path>,
    schema_path: impl AsRef<Path>,
) -> Result<()> {
    let path = csv_path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(data.names())?;
    for n in 0..data.n_rows() {
        w.write_record((0..data.n_features()).map(|m| data.decode(n, m).unwrap_or("")))?;
    }
    w.flush().map_err(|e| FirdError::io(path, e))?;
    let schema = FeatureSchema::new(
        data.names().iter().map(FeatureSpec::categorical).collect(),
        None,
    )?;
    schema.to_json_file(schema_path)
}

/// A named study setup: datasets to generate and the cluster counts and
/// regularization weights to fit them with.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Preset {
    pub name: String,
    pub configs: Vec<GenConfig>,
    pub fit_groups: Vec<usize>,
    pub lambdas: Vec<f64>,
}

impl Preset {
    /// `M` of each dataset, in order.
    pub fn m_sweep(&self) -> Vec<usize> {
        self.configs.iter().map(GenConfig::n_features).collect()
    }
}

pub const PRESET_NAMES: [&str; 3] = ["dcr", "lambda", "runtime"];

/// `dcr`: N=20000, M=20, D=200, ten true clusters, fitted at
/// G = 5, 10, 20, ..., 100. `lambda`: same data, fitted at G=20 over a grid
/// of regularization weights. `runtime`: N=20000, ten clusters, D=30 and
/// M = 10, 20, ..., 100.
pub fn paper_analysis_preset(name: &str, seed: u64) -> Result<Preset> {
    let base = || GenConfig::recovery(20_000, 20, 200, 10, 2, seed);
    let preset = match name {
        "dcr" => Preset {
            name: name.into(),
            configs: vec![base()],
            fit_groups: std::iter::once(5).chain((1..=10).map(|k| 10 * k)).collect(),
            lambdas: vec![0.5],
        },
        "lambda" => Preset {
            name: name.into(),
            configs: vec![base()],
            fit_groups: vec![20],
            lambdas: vec![0.1, 0.5, 1.0],
        },
        "runtime" => Preset {
            name: name.into(),
            configs: (1..=10)
                .map(|k| GenConfig::recovery(20_000, 10 * k, 30, 10, 2, seed))
                .collect(),
            fit_groups: vec![10],
            lambdas: vec![0.5],
        },
        other => {
            return Err(FirdError::InvalidArgument(format!(
                "unknown preset {other:?}; expected one of {PRESET_NAMES:?}"
            )))
        }
    };
    Ok(preset)
}
