//! Model parameters, initialization, regularizer weights and the per-feature
//! likelihood kernels shared by fitting and detection.
//!
//! Each cluster `g` owns, for every feature `m`, a sparse "synchronization"
//! multinomial `alpha[g][m]` and a smooth "randomness" multinomial
//! `beta[g][m]`, mixed with weight `mu[g][m]` on the synchronization side.
//! Multinomial parameters are stored flat, one block of `sum(D_m)` entries per
//! cluster.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{EncodedDataset, UNK};
use crate::error::{FirdError, Result};
use crate::numeric::{clamp_renormalize, log_add_exp};

pub const DEFAULT_PROB_FLOOR: f64 = 1e-12;

/// Offsets of each feature's block inside a flattened `G x sum(D_m)` array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    total: usize,
}

impl Layout {
    pub fn new(dims: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(dims.len());
        let mut total = 0;
        for &d in dims {
            offsets.push(total);
            total += d;
        }
        Layout {
            dims: dims.to_vec(),
            offsets,
            total,
        }
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    #[inline]
    pub fn offset(&self, m: usize) -> usize {
        self.offsets[m]
    }

    /// `sum(D_m)`.
    #[inline]
    pub fn total(&self) -> usize {
        self.total
    }

    #[inline]
    pub fn n_features(&self) -> usize {
        self.dims.len()
    }

    #[inline]
    pub(crate) fn range(&self, g: usize, m: usize) -> std::ops::Range<usize> {
        let start = g * self.total + self.offsets[m];
        start..start + self.dims[m]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layout: Layout,
    pub(crate) pi: Vec<f64>,
    pub(crate) mu: Vec<f64>,
    pub(crate) alpha: Vec<f64>,
    pub(crate) beta: Vec<f64>,
    pub(crate) active: Vec<bool>,
}

impl ModelParams {
    /// Builds parameters from nested arrays (`mu[g][m]`, `alpha[g][m][i]`).
    pub fn from_nested(
        pi: Vec<f64>,
        mu: Vec<Vec<f64>>,
        alpha: Vec<Vec<Vec<f64>>>,
        beta: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let g = pi.len();
        if g == 0 {
            return Err(FirdError::Dimension(
                "model needs at least one cluster".into(),
            ));
        }
        if mu.len() != g || alpha.len() != g || beta.len() != g {
            return Err(FirdError::Dimension(
                "per-cluster arrays disagree on G".into(),
            ));
        }
        let dims: Vec<usize> = alpha[0].iter().map(Vec::len).collect();
        let layout = Layout::new(&dims);
        let mut flat_mu = Vec::with_capacity(g * dims.len());
        let mut flat_a = Vec::with_capacity(g * layout.total());
        let mut flat_b = Vec::with_capacity(g * layout.total());
        for k in 0..g {
            if mu[k].len() != dims.len()
                || alpha[k].len() != dims.len()
                || beta[k].len() != dims.len()
            {
                return Err(FirdError::Dimension(format!(
                    "cluster {k} has the wrong feature count"
                )));
            }
            flat_mu.extend_from_slice(&mu[k]);
            for m in 0..dims.len() {
                if alpha[k][m].len() != dims[m] || beta[k][m].len() != dims[m] {
                    return Err(FirdError::Dimension(format!(
                        "cluster {k} feature {m}: expected {} values",
                        dims[m]
                    )));
                }
                flat_a.extend_from_slice(&alpha[k][m]);
                flat_b.extend_from_slice(&beta[k][m]);
            }
        }
        Ok(ModelParams {
            layout,
            pi,
            mu: flat_mu,
            alpha: flat_a,
            beta: flat_b,
            active: vec![true; g],
        })
    }

    /// Every cluster with the same `mu`, `alpha` and `beta`.
    pub fn uniform(groups: usize, dims: &[usize], mu: f64) -> Self {
        let layout = Layout::new(dims);
        let mut alpha = Vec::with_capacity(groups * layout.total());
        for _ in 0..groups {
            for &d in dims {
                alpha.extend(std::iter::repeat_n(1.0 / d as f64, d));
            }
        }
        ModelParams {
            pi: vec![1.0 / groups as f64; groups],
            mu: vec![mu; groups * dims.len()],
            beta: alpha.clone(),
            alpha,
            active: vec![true; groups],
            layout,
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn n_groups(&self) -> usize {
        self.pi.len()
    }

    pub fn n_features(&self) -> usize {
        self.layout.n_features()
    }

    pub fn dims(&self) -> &[usize] {
        self.layout.dims()
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    #[inline]
    pub fn mu(&self, g: usize, m: usize) -> f64 {
        self.mu[g * self.n_features() + m]
    }

    pub fn mu_row(&self, g: usize) -> &[f64] {
        let m = self.n_features();
        &self.mu[g * m..(g + 1) * m]
    }

    #[inline]
    pub fn alpha(&self, g: usize, m: usize) -> &[f64] {
        &self.alpha[self.layout.range(g, m)]
    }

    #[inline]
    pub fn beta(&self, g: usize, m: usize) -> &[f64] {
        &self.beta[self.layout.range(g, m)]
    }

    pub fn set_mu(&mut self, g: usize, m: usize, v: f64) {
        let nf = self.n_features();
        self.mu[g * nf + m] = v;
    }

    pub fn alpha_mut(&mut self, g: usize, m: usize) -> &mut [f64] {
        let r = self.layout.range(g, m);
        &mut self.alpha[r]
    }

    pub fn beta_mut(&mut self, g: usize, m: usize) -> &mut [f64] {
        let r = self.layout.range(g, m);
        &mut self.beta[r]
    }

    pub fn set_pi(&mut self, pi: Vec<f64>) -> Result<()> {
        if pi.len() != self.n_groups() {
            return Err(FirdError::Dimension("pi has the wrong length".into()));
        }
        self.pi = pi;
        Ok(())
    }

    /// Clusters that take part in responsibility computation.
    pub fn active(&self) -> &[bool] {
        &self.active
    }

    pub fn is_active(&self, g: usize) -> bool {
        self.active[g]
    }

    pub fn active_groups(&self) -> impl Iterator<Item = usize> + '_ {
        self.active
            .iter()
            .enumerate()
            .filter(|(_, &a)| a)
            .map(|(g, _)| g)
    }

    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub(crate) fn freeze(&mut self, g: usize) {
        self.active[g] = false;
    }

    pub fn set_active(&mut self, active: Vec<bool>) -> Result<()> {
        if active.len() != self.n_groups() || !active.iter().any(|&a| a) {
            return Err(FirdError::Dimension(
                "active mask must have G entries with at least one set".into(),
            ));
        }
        self.active = active;
        Ok(())
    }

    /// Checks the simplex and range invariants.
    pub fn validate(&self, prob_floor: f64) -> Result<()> {
        let tol = 1e-9;
        let sum_pi: f64 = self.pi.iter().sum();
        if (sum_pi - 1.0).abs() > tol || self.pi.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(FirdError::InvalidArgument(format!(
                "pi is not on the simplex (sum {sum_pi})"
            )));
        }
        if self.mu.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(FirdError::InvalidArgument("mu outside [0, 1]".into()));
        }
        for g in 0..self.n_groups() {
            for m in 0..self.n_features() {
                for (name, row) in [("alpha", self.alpha(g, m)), ("beta", self.beta(g, m))] {
                    let s: f64 = row.iter().sum();
                    if (s - 1.0).abs() > tol {
                        return Err(FirdError::InvalidArgument(format!(
                            "{name}[{g}][{m}] sums to {s}"
                        )));
                    }
                    if row.iter().any(|&x| !(x >= prob_floor * (1.0 - 1e-9))) {
                        return Err(FirdError::InvalidArgument(format!(
                            "{name}[{g}][{m}] has an entry below the probability floor"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Probability of `x[m] = i` given cluster `g`: `mu*alpha + (1-mu)*beta`.
    pub fn feature_probs(&self, g: usize, m: usize) -> Vec<f64> {
        let mu = self.mu(g, m);
        self.alpha(g, m)
            .iter()
            .zip(self.beta(g, m))
            .map(|(a, b)| mu * a + (1.0 - mu) * b)
            .collect()
    }

    /// Copy with clusters relabeled so that new cluster `k` is old cluster `perm[k]`.
    pub fn permute_groups(&self, perm: &[usize]) -> ModelParams {
        let g = self.n_groups();
        assert_eq!(perm.len(), g);
        let nf = self.n_features();
        let t = self.layout.total();
        let mut out = self.clone();
        for (new, &old) in perm.iter().enumerate() {
            out.pi[new] = self.pi[old];
            out.active[new] = self.active[old];
            out.mu[new * nf..(new + 1) * nf].copy_from_slice(&self.mu[old * nf..(old + 1) * nf]);
            out.alpha[new * t..(new + 1) * t].copy_from_slice(&self.alpha[old * t..(old + 1) * t]);
            out.beta[new * t..(new + 1) * t].copy_from_slice(&self.beta[old * t..(old + 1) * t]);
        }
        out
    }
}

/// Fair-start initialization: `pi = 1/G`, `mu = 0.5`, and each `alpha`/`beta`
/// row drawn as i.i.d. uniform(0,1) entries normalized onto the simplex.
pub fn init_params(groups: usize, dims: &[usize], seed: u64) -> ModelParams {
    init_params_with_floor(groups, dims, seed, DEFAULT_PROB_FLOOR)
}

pub fn init_params_with_floor(groups: usize, dims: &[usize], seed: u64, floor: f64) -> ModelParams {
    assert!(groups >= 1, "at least one cluster is required");
    assert!(
        dims.iter().all(|&d| d >= 1),
        "every feature needs a non-empty vocabulary"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::uniform(groups, dims, 0.5);
    for g in 0..groups {
        for m in 0..dims.len() {
            for which in 0..2 {
                let row = if which == 0 {
                    params.alpha_mut(g, m)
                } else {
                    params.beta_mut(g, m)
                };
                for x in row.iter_mut() {
                    *x = rng.random::<f64>();
                }
                clamp_renormalize(row, floor, 1.0);
            }
        }
    }
    params
}

/// Denormalized regularizer weights.
#[derive(Debug, Clone, PartialEq)]
pub struct RegWeights {
    pub lam1: Vec<f64>,
    /// Flat `G x sum(D_m)`, same layout as `alpha`.
    pub lam2: Vec<f64>,
    layout: Layout,
}

impl RegWeights {
    pub fn new(lam1: Vec<f64>, lam2: Vec<f64>, dims: &[usize]) -> Result<Self> {
        let layout = Layout::new(dims);
        if lam2.len() != lam1.len() * layout.total() {
            return Err(FirdError::Dimension(
                "lam2 does not match G x sum(D_m)".into(),
            ));
        }
        if lam1.iter().chain(&lam2).any(|&l| !(l >= 0.0)) {
            return Err(FirdError::InvalidArgument(
                "regularizer weights must be >= 0".into(),
            ));
        }
        Ok(RegWeights { lam1, lam2, layout })
    }

    pub fn zero(groups: usize, dims: &[usize]) -> Self {
        let layout = Layout::new(dims);
        RegWeights {
            lam1: vec![0.0; groups],
            lam2: vec![0.0; groups * layout.total()],
            layout,
        }
    }

    pub fn lam2(&self, g: usize, m: usize) -> &[f64] {
        &self.lam2[self.layout.range(g, m)]
    }
}

/// Scales the normalized weights so the prior's pseudo-observations are
/// comparable to the data: `lam1[g] = lambda1 * N / G` and
/// `lam2[g][m][i] = lambda2 * N / (2 G D_m)`.
pub fn normalize_lambda(
    lambda1: f64,
    lambda2: f64,
    n: usize,
    groups: usize,
    dims: &[usize],
) -> RegWeights {
    let layout = Layout::new(dims);
    let n = n as f64;
    let gf = groups as f64;
    let lam1 = vec![lambda1 * n / gf; groups];
    let mut lam2 = Vec::with_capacity(groups * layout.total());
    for _ in 0..groups {
        for &d in dims {
            lam2.extend(std::iter::repeat_n(lambda2 * n / (2.0 * gf * d as f64), d));
        }
    }
    RegWeights { lam1, lam2, layout }
}

/// How the sparsity-promoting updates of `pi` and `alpha` are solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerSolver {
    /// Exact maximizer of the regularized update on the floored simplex.
    #[default]
    Exact,
    /// The multiplicative fixed-point map, renormalized after every sweep and
    /// accepted only if it does not lower the expected objective.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub groups: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Relative objective improvement below which EM stops.
    pub tol: f64,
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    pub inner_tol: f64,
    pub prob_floor: f64,
    pub seed: u64,
    /// Clusters whose weight falls below this are frozen; `None` means `1/(10N)`.
    pub prune_threshold: Option<f64>,
    pub inner_solver: InnerSolver,
    /// Rows per reduction block. Results are bit-identical for a fixed value,
    /// regardless of the thread count.
    pub chunk_rows: usize,
    /// EM iterations granted to each trial of the component-elimination
    /// search run after convergence; 0 disables the search.
    #[serde(default = "default_elimination_iters")]
    pub elimination_iters: usize,
    /// Outer iterations over which the weight on `pi`'s sparse prior grows
    /// linearly from zero to its target. Keeps clusters alive long enough to
    /// specialise before the prior starts removing them; 0 applies the full
    /// weight from the first step.
    #[serde(default = "default_lambda1_ramp")]
    pub lambda1_ramp: usize,
}

fn default_elimination_iters() -> usize {
    DEFAULT_ELIMINATION_ITERS
}

fn default_lambda1_ramp() -> usize {
    DEFAULT_LAMBDA1_RAMP
}

pub const DEFAULT_ELIMINATION_ITERS: usize = 50;
pub const DEFAULT_LAMBDA1_RAMP: usize = 10;

impl FitConfig {
    pub fn new(groups: usize) -> Self {
        FitConfig {
            groups,
            lambda1: 0.5,
            lambda2: 0.5,
            tol: 1e-6,
            max_outer_iters: 500,
            max_inner_iters: 100,
            inner_tol: 1e-8,
            prob_floor: DEFAULT_PROB_FLOOR,
            seed: 0,
            prune_threshold: None,
            inner_solver: InnerSolver::Exact,
            chunk_rows: 1024,
            elimination_iters: DEFAULT_ELIMINATION_ITERS,
            lambda1_ramp: DEFAULT_LAMBDA1_RAMP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(FirdError::InvalidArgument(m.to_string()));
        if self.groups == 0 {
            return bad("groups must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.lambda1) || !(0.0..=1.0).contains(&self.lambda2) {
            return bad("lambda1 and lambda2 must lie in [0, 1]");
        }
        if !(self.tol > 0.0) || !(self.inner_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.max_outer_iters == 0 || self.max_inner_iters == 0 {
            return bad("iteration limits must be positive");
        }
        if !(self.prob_floor > 0.0 && self.prob_floor < 1e-3) {
            return bad("prob_floor must lie in (0, 1e-3)");
        }
        if self.chunk_rows == 0 {
            return bad("chunk_rows must be positive");
        }
        Ok(())
    }
}

/// Per-feature log terms for one row and cluster:
/// `(log mu + log alpha[x], log(1-mu) + log beta[x])`.
///
/// An [`UNK`] code uses `log(1/D_m)` in place of both `log alpha` and `log beta`.
pub fn log_feature_terms(row: &[u32], g: usize, params: &ModelParams) -> Vec<(f64, f64)> {
    row.iter()
        .enumerate()
        .map(|(m, &x)| {
            let mu = params.mu(g, m);
            let (la, lb) = if x == UNK {
                let u = -(params.dims()[m] as f64).ln();
                (u, u)
            } else {
                (
                    params.alpha(g, m)[x as usize].ln(),
                    params.beta(g, m)[x as usize].ln(),
                )
            };
            (mu.ln() + la, (1.0 - mu).ln() + lb)
        })
        .collect()
}

/// Lookup tables for the likelihood kernel, rebuilt once per EM iteration.
///
/// `log_mix[g][m][i] = log(mu alpha_i + (1-mu) beta_i)` and
/// `sync_post[g][m][i]` is the posterior probability of the synchronization
/// branch for an observed value `i`. Both depend only on `(g, m, i)`.
#[derive(Debug, Clone)]
pub struct KernelTables {
    layout: Layout,
    groups: usize,
    log_mix: Vec<f64>,
    sync_post: Vec<f64>,
    mu: Vec<f64>,
    unk_log: Vec<f64>,
}

impl KernelTables {
    pub fn new(params: &ModelParams) -> Self {
        let layout = params.layout().clone();
        let g = params.n_groups();
        let mut log_mix = vec![0.0; g * layout.total()];
        let mut sync_post = vec![0.0; g * layout.total()];
        for k in 0..g {
            for m in 0..layout.n_features() {
                let mu = params.mu(k, m);
                let (lmu, l1mu) = (mu.ln(), (1.0 - mu).ln());
                let r = layout.range(k, m);
                for idx in r {
                    let s = lmu + params.alpha[idx].ln();
                    let t = l1mu + params.beta[idx].ln();
                    let mix = log_add_exp(s, t);
                    log_mix[idx] = mix;
                    sync_post[idx] = if mix == f64::NEG_INFINITY {
                        0.5
                    } else {
                        (s - mix).exp()
                    };
                }
            }
        }
        let unk_log = layout.dims().iter().map(|&d| -(d as f64).ln()).collect();
        KernelTables {
            layout,
            groups: g,
            log_mix,
            sync_post,
            mu: params.mu.clone(),
            unk_log,
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// `log p(x_n | d_n = g)`.
    #[inline]
    pub fn row_log_lik(&self, row: &[u32], g: usize) -> f64 {
        let base = g * self.layout.total();
        let mut acc = 0.0;
        for (m, &x) in row.iter().enumerate() {
            acc += if x == UNK {
                self.unk_log[m]
            } else {
                self.log_mix[base + self.layout.offset(m) + x as usize]
            };
        }
        acc
    }

    #[inline]
    pub fn log_mix(&self, g: usize, m: usize, x: u32) -> f64 {
        if x == UNK {
            self.unk_log[m]
        } else {
            self.log_mix[g * self.layout.total() + self.layout.offset(m) + x as usize]
        }
    }

    /// Posterior probability that feature `m` of a row with value `x` came
    /// from the synchronization branch of cluster `g`.
    #[inline]
    pub fn sync_posterior(&self, g: usize, m: usize, x: u32) -> f64 {
        if x == UNK {
            self.mu[g * self.layout.n_features() + m]
        } else {
            self.sync_post[g * self.layout.total() + self.layout.offset(m) + x as usize]
        }
    }

    pub fn n_groups(&self) -> usize {
        self.groups
    }
}

/// Checks that a dataset can be scored by a model.
pub fn check_compatible(data: &EncodedDataset, params: &ModelParams) -> Result<()> {
    if data.dims() != params.dims() {
        return Err(FirdError::Dimension(format!(
            "dataset dims {:?} do not match model dims {:?}",
            data.dims(),
            params.dims()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegSettings {
    pub lambda1: f64,
    pub lambda2: f64,
}

/// On-disk JSON form of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    #[serde(rename = "G")]
    pub groups: usize,
    pub dims: Vec<usize>,
    pub vocab: Vec<Vec<String>>,
    pub pi: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<Vec<f64>>>,
    pub beta: Vec<Vec<Vec<f64>>>,
    pub reg: RegSettings,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<String>>,
}

impl ModelFile {
    pub const VERSION: u32 = 1;

    pub fn from_params(
        params: &ModelParams,
        vocab: &[Vec<String>],
        names: &[String],
        reg: RegSettings,
        seed: u64,
    ) -> Self {
        let g = params.n_groups();
        let m = params.n_features();
        let nested = |flat: &dyn Fn(usize, usize) -> Vec<f64>| -> Vec<Vec<Vec<f64>>> {
            (0..g)
                .map(|k| (0..m).map(|j| flat(k, j)).collect())
                .collect()
        };
        ModelFile {
            version: Self::VERSION,
            groups: g,
            dims: params.dims().to_vec(),
            vocab: vocab.to_vec(),
            pi: params.pi().to_vec(),
            mu: (0..g).map(|k| params.mu_row(k).to_vec()).collect(),
            alpha: nested(&|k, j| params.alpha(k, j).to_vec()),
            beta: nested(&|k, j| params.beta(k, j).to_vec()),
            reg,
            seed,
            active: Some(params.active().to_vec()),
            features: Some(names.to_vec()),
        }
    }

    pub fn to_params(&self) -> Result<ModelParams> {
        if self.version != Self::VERSION {
            return Err(FirdError::Schema(format!(
                "unsupported model version {}",
                self.version
            )));
        }
        let mut p = ModelParams::from_nested(
            self.pi.clone(),
            self.mu.clone(),
            self.alpha.clone(),
            self.beta.clone(),
        )?;
        if p.n_groups() != self.groups || p.dims() != self.dims.as_slice() {
            return Err(FirdError::Dimension(
                "model header disagrees with its arrays".into(),
            ));
        }
        if self.vocab.len() != self.dims.len()
            || self
                .vocab
                .iter()
                .zip(&self.dims)
                .any(|(v, &d)| v.len() != d)
        {
            return Err(FirdError::Dimension(
                "vocabulary does not match dims".into(),
            ));
        }
        if let Some(a) = &self.active {
            p.set_active(a.clone())?;
        }
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| FirdError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| FirdError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
