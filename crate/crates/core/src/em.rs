//! Regularized EM: E-step, closed-form and sparsity-promoting M-steps, the
//! penalized objective and the fitting driver.
//!
//! Reductions over rows run in fixed blocks of `chunk_rows` rows. Block
//! partials are merged in block order, so results do not depend on how many
//! threads process the blocks.

use std::borrow::Cow;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::data::{EncodedDataset, UNK};
use crate::error::{FirdError, Result};
use crate::model::{
    check_compatible, init_params_with_floor, normalize_lambda, FitConfig, InnerSolver,
    KernelTables, Layout, ModelParams, RegWeights,
};
use crate::numeric::{clamp_renormalize, CompensatedSum};
use crate::simplex::{argmax, weighted_log, weighted_log_argmax};

const DEFAULT_CHUNK_ROWS: usize = 1024;
const CHUNKS_PER_BATCH: usize = 64;

/// Posterior cluster weights for every row plus the tables that give the
/// per-feature synchronization posteriors.
///
/// The synchronization posterior of row `n`, cluster `g`, feature `m` depends
/// only on `(g, m, x_nm)`, so it is served from a `G x sum(D_m)` table instead
/// of an `N x G x M` tensor.
#[derive(Debug, Clone)]
pub struct Responsibilities {
    n_rows: usize,
    groups: usize,
    phi: Vec<f64>,
    log_evidence: Vec<f64>,
    tables: KernelTables,
}

impl Responsibilities {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_groups(&self) -> usize {
        self.groups
    }

    #[inline]
    pub fn phi(&self, n: usize, g: usize) -> f64 {
        self.phi[n * self.groups + g]
    }

    pub fn phi_row(&self, n: usize) -> &[f64] {
        &self.phi[n * self.groups..(n + 1) * self.groups]
    }

    /// Synchronization posterior for feature `m` of `row` under cluster `g`.
    #[inline]
    pub fn gamma(&self, row: &[u32], g: usize, m: usize) -> f64 {
        self.tables.sync_posterior(g, m, row[m])
    }

    /// `log p(x_n)` under the model the responsibilities were computed from.
    pub fn log_evidence(&self) -> &[f64] {
        &self.log_evidence
    }

    pub fn tables(&self) -> &KernelTables {
        &self.tables
    }

    /// `argmax_g phi[n][g]`; ties go to the lowest index.
    pub fn hard_assignment(&self) -> Vec<usize> {
        (0..self.n_rows).map(|n| argmax(self.phi_row(n))).collect()
    }
}

/// Responsibility-weighted counts gathered in one pass over the data.
#[derive(Debug, Clone)]
pub struct SufficientStats {
    layout: Layout,
    /// `sum_n phi[n][g]`.
    mass: Vec<f64>,
    /// `N_gmi = sum_n 1(x_nm = i) phi[n][g]`, flat `G x sum(D_m)`.
    counts: Vec<f64>,
    /// Synchronization mass contributed by unknown codes, `G x M`.
    unk_sync: Vec<f64>,
    log_lik: f64,
}

impl SufficientStats {
    fn zeros(layout: &Layout, groups: usize) -> Self {
        SufficientStats {
            layout: layout.clone(),
            mass: vec![0.0; groups],
            counts: vec![0.0; groups * layout.total()],
            unk_sync: vec![0.0; groups * layout.n_features()],
            log_lik: 0.0,
        }
    }

    /// Recomputes the statistics from stored responsibilities.
    pub fn from_responsibilities(data: &EncodedDataset, resp: &Responsibilities) -> Self {
        let layout = resp.tables.layout().clone();
        let g = resp.groups;
        let mut s = SufficientStats::zeros(&layout, g);
        let nf = layout.n_features();
        for n in 0..data.n_rows() {
            let row = data.row(n);
            for k in 0..g {
                let p = resp.phi(n, k);
                if p == 0.0 {
                    continue;
                }
                s.mass[k] += p;
                for (m, &x) in row.iter().enumerate() {
                    if x == UNK {
                        s.unk_sync[k * nf + m] += p * resp.tables.sync_posterior(k, m, UNK);
                    } else {
                        s.counts[k * layout.total() + layout.offset(m) + x as usize] += p;
                    }
                }
            }
        }
        s.log_lik = resp.log_evidence.iter().sum();
        s
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Soft counts `N_gmi` for one cluster and feature.
    pub fn counts(&self, g: usize, m: usize) -> &[f64] {
        &self.counts[self.layout.range(g, m)]
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_lik
    }

    fn merge(&mut self, other: &ChunkAcc) {
        for (a, b) in self.mass.iter_mut().zip(&other.mass) {
            *a += b;
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.unk_sync.iter_mut().zip(&other.unk_sync) {
            *a += b;
        }
    }
}

struct ChunkAcc {
    mass: Vec<f64>,
    counts: Vec<f64>,
    unk_sync: Vec<f64>,
    log_lik: CompensatedSum,
    failed_row: Option<usize>,
}

struct ScanOutput {
    phi: Vec<f64>,
    log_evidence: Vec<f64>,
    stats: SufficientStats,
}

fn scan(
    data: &EncodedDataset,
    params: &ModelParams,
    tables: &KernelTables,
    chunk_rows: usize,
) -> Result<ScanOutput> {
    let n = data.n_rows();
    let m = data.n_features();
    let g = params.n_groups();
    let layout = params.layout().clone();
    let total = layout.total();
    let active: Vec<usize> = params.active_groups().collect();
    let log_pi: Vec<f64> = params.pi().iter().map(|p| p.ln()).collect();

    let mut phi = vec![0.0; n * g];
    let mut log_ev = vec![0.0; n];
    let mut stats = SufficientStats::zeros(&layout, g);
    let mut log_lik = CompensatedSum::default();

    let process = |chunk_idx: usize, codes: &[u32], phi: &mut [f64], ev: &mut [f64]| -> ChunkAcc {
        let mut acc = ChunkAcc {
            mass: vec![0.0; g],
            counts: vec![0.0; g * total],
            unk_sync: vec![0.0; g * m],
            log_lik: CompensatedSum::default(),
            failed_row: None,
        };
        let mut buf = vec![f64::NEG_INFINITY; g];
        for (r, row) in codes.chunks_exact(m).enumerate() {
            let mut max = f64::NEG_INFINITY;
            for &k in &active {
                let v = log_pi[k] + tables.row_log_lik(row, k);
                buf[k] = v;
                if v > max {
                    max = v;
                }
            }
            if !max.is_finite() {
                acc.failed_row.get_or_insert(chunk_idx * chunk_rows + r);
                continue;
            }
            let mut sum = 0.0;
            for &k in &active {
                buf[k] = (buf[k] - max).exp();
                sum += buf[k];
            }
            let lse = max + sum.ln();
            ev[r] = lse;
            acc.log_lik.add(lse);
            let inv = 1.0 / sum;
            let phi_row = &mut phi[r * g..(r + 1) * g];
            for &k in &active {
                let p = buf[k] * inv;
                phi_row[k] = p;
                if p == 0.0 {
                    continue;
                }
                acc.mass[k] += p;
                let base = k * total;
                for (j, &x) in row.iter().enumerate() {
                    if x == UNK {
                        acc.unk_sync[k * m + j] += p * tables.sync_posterior(k, j, UNK);
                    } else {
                        acc.counts[base + layout.offset(j) + x as usize] += p;
                    }
                }
            }
        }
        acc
    };

    let n_chunks = n.div_ceil(chunk_rows);
    let batch_rows = chunk_rows * CHUNKS_PER_BATCH;
    for batch in 0..n_chunks.div_ceil(CHUNKS_PER_BATCH) {
        let lo = batch * batch_rows;
        let hi = (lo + batch_rows).min(n);
        let first_chunk = batch * CHUNKS_PER_BATCH;
        let partials: Vec<ChunkAcc> = data.codes()[lo * m..hi * m]
            .par_chunks(chunk_rows * m)
            .zip(phi[lo * g..hi * g].par_chunks_mut(chunk_rows * g))
            .zip(log_ev[lo..hi].par_chunks_mut(chunk_rows))
            .enumerate()
            .map(|(i, ((codes, phi), ev))| process(first_chunk + i, codes, phi, ev))
            .collect();
        for p in &partials {
            if let Some(row) = p.failed_row {
                return Err(FirdError::Numeric {
                    iteration: 0,
                    message: format!("row {row} has zero likelihood under every active cluster"),
                });
            }
            stats.merge(p);
            log_lik.merge(&p.log_lik);
        }
    }
    stats.log_lik = log_lik.value();
    Ok(ScanOutput {
        phi,
        log_evidence: log_ev,
        stats,
    })
}

/// Posterior cluster and branch responsibilities under `params`.
pub fn e_step(data: &EncodedDataset, params: &ModelParams) -> Result<Responsibilities> {
    check_compatible(data, params)?;
    let tables = KernelTables::new(params);
    let out = scan(data, params, &tables, DEFAULT_CHUNK_ROWS)?;
    Ok(Responsibilities {
        n_rows: data.n_rows(),
        groups: params.n_groups(),
        phi: out.phi,
        log_evidence: out.log_evidence,
        tables,
    })
}

/// Penalty part of the objective:
/// `-sum_g lam1_g ln pi_g - sum_gmi lam2_gmi (ln alpha_gmi - ln beta_gmi)`.
pub fn regularizer(params: &ModelParams, reg: &RegWeights) -> f64 {
    let mut acc = CompensatedSum::default();
    for (l, p) in reg.lam1.iter().zip(params.pi()) {
        if *l != 0.0 {
            acc.add(-l * p.ln());
        }
    }
    for ((l, a), b) in reg.lam2.iter().zip(&params.alpha).zip(&params.beta) {
        if *l != 0.0 {
            acc.add(-l * (a.ln() - b.ln()));
        }
    }
    acc.value()
}

/// Regularized log-likelihood
/// `sum_n log sum_g pi_g prod_m (gamma_ngm + gammabar_ngm)` plus [`regularizer`].
///
/// Frozen clusters are left out of the likelihood sum but keep their
/// (constant) penalty terms.
pub fn objective(data: &EncodedDataset, params: &ModelParams, reg: &RegWeights) -> Result<f64> {
    check_compatible(data, params)?;
    let tables = KernelTables::new(params);
    let out = scan(data, params, &tables, DEFAULT_CHUNK_ROWS)?;
    Ok(out.stats.log_lik + regularizer(params, reg))
}

/// Expected complete-data objective of `params` under fixed responsibilities
/// (the quantity each M-step maximizes), including the penalty.
pub fn expected_complete_objective(
    data: &EncodedDataset,
    resp: &Responsibilities,
    params: &ModelParams,
    reg: &RegWeights,
) -> f64 {
    let mut acc = CompensatedSum::default();
    for n in 0..data.n_rows() {
        let row = data.row(n);
        for g in 0..params.n_groups() {
            let p = resp.phi(n, g);
            if p == 0.0 {
                continue;
            }
            let mut v = params.pi()[g].ln();
            for (m, &x) in row.iter().enumerate() {
                let gam = resp.gamma(row, g, m);
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
                if gam > 0.0 {
                    v += gam * (mu.ln() + la);
                }
                if gam < 1.0 {
                    v += (1.0 - gam) * ((1.0 - mu).ln() + lb);
                }
            }
            acc.add(p * v);
        }
    }
    acc.value() + regularizer(params, reg)
}

/// Closed-form updates of `mu` and `beta` from the statistics. Returns the
/// clusters that received no responsibility mass; their `mu` is reset to 0.5.
fn update_closed(
    stats: &SufficientStats,
    tables: &KernelTables,
    reg: &RegWeights,
    params: &mut ModelParams,
    floor: f64,
) -> Vec<bool> {
    let g_count = params.n_groups();
    let nf = params.n_features();
    let layout = params.layout().clone();
    let mut empty = vec![false; g_count];
    let mut weights = Vec::new();
    for g in 0..g_count {
        if !params.is_active(g) {
            continue;
        }
        let s = stats.mass[g];
        if !(s > 0.0) {
            empty[g] = true;
            for m in 0..nf {
                params.set_mu(g, m, 0.5);
            }
            continue;
        }
        for m in 0..nf {
            let counts = stats.counts(g, m);
            let lam = reg.lam2(g, m);
            let d = layout.dims()[m];
            let mut sync = stats.unk_sync[g * nf + m];
            weights.clear();
            for i in 0..d {
                let gam = tables.sync_posterior(g, m, i as u32);
                sync += gam * counts[i];
                weights.push(lam[i] + (1.0 - gam) * counts[i]);
            }
            params.set_mu(g, m, (sync / s).clamp(0.0, 1.0));
            weighted_log_argmax(&weights, floor, 1.0, params.beta_mut(g, m));
        }
    }
    empty
}

/// Inner-solver settings for the sparsity-promoting updates.
#[derive(Debug, Clone, Copy)]
pub struct InnerConfig {
    pub solver: InnerSolver,
    pub max_iters: usize,
    pub tol: f64,
    pub floor: f64,
}

impl From<&FitConfig> for InnerConfig {
    fn from(c: &FitConfig) -> Self {
        InnerConfig {
            solver: c.inner_solver,
            max_iters: c.max_inner_iters,
            tol: c.inner_tol,
            floor: c.prob_floor,
        }
    }
}

/// Iterates `x_i <- (c_i + lam_i x_i) / (sum(c) + lam_i / x_i)` with a
/// renormalization onto the floored simplex after every sweep.
fn literal_fixed_point(
    counts: &[f64],
    lam: &[f64],
    start: &[f64],
    total: f64,
    cfg: &InnerConfig,
) -> Result<Vec<f64>> {
    let denom: f64 = counts.iter().sum();
    let mut x = start.to_vec();
    let mut next = vec![0.0; x.len()];
    for it in 0..cfg.max_iters {
        for i in 0..x.len() {
            next[i] = (counts[i] + lam[i] * x[i]) / (denom + lam[i] / x[i]);
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(FirdError::Numeric {
                iteration: it,
                message: "fixed-point sweep produced a non-finite value".into(),
            });
        }
        clamp_renormalize(&mut next, cfg.floor, total);
        let change = x
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut x, &mut next);
        if change < cfg.tol {
            break;
        }
    }
    Ok(x)
}

/// Maximizes `sum_i (c_i - lam_i) ln x_i` over the floored simplex of mass
/// `total`, starting from `current`.
fn sparse_update(
    counts: &[f64],
    lam: &[f64],
    current: &[f64],
    total: f64,
    cfg: &InnerConfig,
) -> Result<Vec<f64>> {
    let w: Vec<f64> = counts.iter().zip(lam).map(|(c, l)| c - l).collect();
    let out = match cfg.solver {
        InnerSolver::Exact => {
            let mut out = vec![0.0; w.len()];
            weighted_log_argmax(&w, cfg.floor, total, &mut out);
            out
        }
        InnerSolver::Literal => {
            let candidate = literal_fixed_point(counts, lam, current, total, cfg)?;
            // Only accept the sweep result if it does not lower the objective.
            if weighted_log(&w, &candidate) >= weighted_log(&w, current) {
                candidate
            } else {
                current.to_vec()
            }
        }
    };
    if out.iter().any(|v| !v.is_finite()) {
        return Err(FirdError::Numeric {
            iteration: 0,
            message: "sparse update produced a non-finite value".into(),
        });
    }
    Ok(out)
}

fn update_sparse(
    stats: &SufficientStats,
    tables: &KernelTables,
    reg: &RegWeights,
    params: &mut ModelParams,
    cfg: &InnerConfig,
) -> Result<()> {
    let active: Vec<usize> = params.active_groups().collect();
    let frozen_mass: f64 = (0..params.n_groups())
        .filter(|&g| !params.is_active(g))
        .map(|g| params.pi()[g])
        .sum();

    let masses: Vec<f64> = active.iter().map(|&g| stats.mass[g]).collect();
    let lam1: Vec<f64> = active.iter().map(|&g| reg.lam1[g]).collect();
    let current: Vec<f64> = active.iter().map(|&g| params.pi()[g]).collect();
    let new_pi = sparse_update(&masses, &lam1, &current, 1.0 - frozen_mass, cfg)?;
    let mut pi = params.pi().to_vec();
    for (&g, v) in active.iter().zip(new_pi) {
        pi[g] = v;
    }
    params.pi = pi;

    let nf = params.n_features();
    let mut sync_counts = Vec::new();
    for &g in &active {
        for m in 0..nf {
            let counts = stats.counts(g, m);
            sync_counts.clear();
            sync_counts.extend(
                counts
                    .iter()
                    .enumerate()
                    .map(|(i, c)| tables.sync_posterior(g, m, i as u32) * c),
            );
            let lam = reg.lam2(g, m);
            let new_alpha = sparse_update(&sync_counts, lam, params.alpha(g, m), 1.0, cfg)?;
            params.alpha_mut(g, m).copy_from_slice(&new_alpha);
        }
    }
    Ok(())
}

/// Closed-form M-step for `mu` and `beta`, applied to `params` in place.
/// Returns the clusters that carried no responsibility mass.
pub fn m_step_closed(
    data: &EncodedDataset,
    resp: &Responsibilities,
    reg: &RegWeights,
    params: &mut ModelParams,
    prob_floor: f64,
) -> Vec<bool> {
    let stats = SufficientStats::from_responsibilities(data, resp);
    update_closed(&stats, resp.tables(), reg, params, prob_floor)
}

/// Sparsity-promoting M-step for `pi` and `alpha`, applied to `params` in place.
pub fn m_step_fixed_point(
    data: &EncodedDataset,
    resp: &Responsibilities,
    reg: &RegWeights,
    params: &mut ModelParams,
    cfg: &InnerConfig,
) -> Result<()> {
    let stats = SufficientStats::from_responsibilities(data, resp);
    update_sparse(&stats, resp.tables(), reg, params, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub objective: f64,
    pub active_components: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneEvent {
    /// Outer iteration whose M-step froze the cluster.
    pub iter: usize,
    pub group: usize,
    pub pi: f64,
}

/// Per-iteration history of a fit. Equality ignores the wall-clock column.
#[derive(Debug, Clone, Default)]
pub struct FitTrace {
    pub records: Vec<TraceRecord>,
    pub seconds: Vec<f64>,
    pub converged: bool,
    pub pruned: Vec<PruneEvent>,
}

impl PartialEq for FitTrace {
    fn eq(&self, other: &Self) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.iter == b.iter
                    && a.objective.to_bits() == b.objective.to_bits()
                    && a.active_components == b.active_components
            })
            && self.converged == other.converged
            && self.pruned == other.pruned
    }
}

impl FitTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    /// Largest decrease between consecutive objective values (0 if none).
    pub fn max_decrease(&self) -> f64 {
        self.records
            .windows(2)
            .map(|w| w[0].objective - w[1].objective)
            .fold(0.0, f64::max)
    }

    /// Mean wall time per outer iteration.
    pub fn seconds_per_iteration(&self) -> f64 {
        match self.seconds.last() {
            Some(&s) if !self.seconds.is_empty() => s / self.seconds.len() as f64,
            _ => 0.0,
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| FirdError::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["iter", "objective", "active_components", "seconds"])?;
        for (r, s) in self.records.iter().zip(&self.seconds) {
            w.write_record([
                r.iter.to_string(),
                r.objective.to_string(),
                r.active_components.to_string(),
                format!("{s:.6}"),
            ])?;
        }
        w.flush().map_err(|e| FirdError::io(path, e))?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParams,
    pub resp: Responsibilities,
    pub trace: FitTrace,
    pub reg: RegWeights,
}

/// Fits the mixture with regularized EM.
///
/// Each outer iteration applies the closed-form and sparse M-steps, then
/// evaluates the objective and responsibilities at the new parameters; EM
/// stops once the relative improvement falls below `cfg.tol`. Clusters whose
/// weight drops below the prune threshold are frozen.
///
/// EM only finds a local optimum, and once every cluster holds more than its
/// `lam1` pseudo-count of rows the sparse prior on `pi` no longer removes
/// redundant ones. Unless `cfg.elimination_iters` is 0, the converged fit is
/// therefore followed by an elimination search: each active cluster, smallest
/// first, is frozen on a trial copy that gets `elimination_iters` more EM
/// iterations, and the trial is kept only if it raises the objective.
pub fn fit(data: &EncodedDataset, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    let n = data.n_rows();
    if n == 0 {
        return Err(FirdError::InvalidArgument(
            "cannot fit an empty dataset".into(),
        ));
    }
    if data.has_unk() {
        return Err(FirdError::InvalidArgument(
            "training data must not contain unknown codes".into(),
        ));
    }
    let dims = data.dims();
    let reg = normalize_lambda(cfg.lambda1, cfg.lambda2, n, cfg.groups, &dims);
    let driver = Driver {
        data,
        cfg,
        reg: &reg,
        inner: InnerConfig::from(cfg),
        prune_below: cfg.prune_threshold.unwrap_or(1.0 / (10.0 * n as f64)),
        start: Instant::now(),
    };

    let mut trace = FitTrace::default();
    let init = init_params_with_floor(cfg.groups, &dims, cfg.seed, cfg.prob_floor);
    let first = driver.evaluate(init, &mut trace)?;
    let mut state = driver.run(first, cfg.max_outer_iters - 1, &mut trace)?;
    if cfg.elimination_iters > 0 && driver.eliminate(&mut state, &mut trace)? {
        let budget = cfg.max_outer_iters.saturating_sub(trace.records.len());
        state.converged = false;
        state = driver.run(state, budget, &mut trace)?;
    }
    trace.converged = state.converged;

    let resp = Responsibilities {
        n_rows: n,
        groups: state.params.n_groups(),
        phi: state.out.phi,
        log_evidence: state.out.log_evidence,
        tables: state.tables,
    };
    Ok(FitResult {
        params: state.params,
        resp,
        trace,
        reg,
    })
}

/// Parameters together with their E-step and objective.
struct State {
    params: ModelParams,
    tables: KernelTables,
    out: ScanOutput,
    objective: f64,
    converged: bool,
}

struct Driver<'a> {
    data: &'a EncodedDataset,
    cfg: &'a FitConfig,
    reg: &'a RegWeights,
    inner: InnerConfig,
    prune_below: f64,
    start: Instant,
}

impl Driver<'_> {
    /// Weights in force at outer iteration `iter`. Raising `lam1` can only
    /// raise the objective at fixed parameters (`-ln pi >= 0`), so the ramp
    /// keeps the recorded objective nondecreasing.
    fn reg_at(&self, iter: usize) -> Cow<'_, RegWeights> {
        let ramp = self.cfg.lambda1_ramp;
        if iter >= ramp {
            return Cow::Borrowed(self.reg);
        }
        let scale = iter as f64 / ramp as f64;
        let mut reg = self.reg.clone();
        reg.lam1.iter_mut().for_each(|l| *l *= scale);
        Cow::Owned(reg)
    }

    /// E-step and objective at `params`, appended to `trace`.
    fn evaluate(&self, params: ModelParams, trace: &mut FitTrace) -> Result<State> {
        let iter = trace.records.len();
        let tables = KernelTables::new(&params);
        let out = scan(self.data, &params, &tables, self.cfg.chunk_rows).map_err(|e| match e {
            FirdError::Numeric { message, .. } => FirdError::Numeric {
                iteration: iter,
                message,
            },
            other => other,
        })?;
        let objective = out.stats.log_lik + regularizer(&params, &self.reg_at(iter));
        trace.records.push(TraceRecord {
            iter,
            objective,
            active_components: params.n_active(),
        });
        trace.seconds.push(self.start.elapsed().as_secs_f64());
        Ok(State {
            params,
            tables,
            out,
            objective,
            converged: false,
        })
    }

    /// At most `max_steps` EM iterations starting from an evaluated state.
    fn run(&self, mut st: State, max_steps: usize, trace: &mut FitTrace) -> Result<State> {
        for _ in 0..max_steps {
            let iter = trace.records.len();
            let mut params = st.params.clone();
            let reg = self.reg_at(iter);
            let empty = update_closed(
                &st.out.stats,
                &st.tables,
                &reg,
                &mut params,
                self.cfg.prob_floor,
            );
            update_sparse(&st.out.stats, &st.tables, &reg, &mut params, &self.inner).map_err(
                |e| match e {
                    FirdError::Numeric { iteration, message } => FirdError::Numeric {
                        iteration,
                        message: format!("outer iteration {iter}: {message}"),
                    },
                    other => other,
                },
            )?;
            prune(&mut params, &empty, self.prune_below, iter, trace);
            let prev = st.objective;
            st = self.evaluate(params, trace)?;
            if iter >= self.cfg.lambda1_ramp
                && st.objective - prev < self.cfg.tol * prev.abs().max(1.0)
            {
                st.converged = true;
                break;
            }
        }
        Ok(st)
    }

    /// Greedy elimination passes over the active clusters until a full pass
    /// accepts nothing. Returns whether any trial was accepted.
    fn eliminate(&self, st: &mut State, trace: &mut FitTrace) -> Result<bool> {
        let mut any = false;
        loop {
            let mut order: Vec<usize> = st.params.active_groups().collect();
            order.sort_by(|&a, &b| {
                st.params.pi()[a]
                    .total_cmp(&st.params.pi()[b])
                    .then(a.cmp(&b))
            });
            let mut accepted = false;
            for g in order {
                if st.params.n_active() <= 1 {
                    break;
                }
                if !st.params.is_active(g) {
                    continue;
                }
                // Continue the iteration count so trials see the full weights.
                let mut scratch = FitTrace {
                    records: trace.records.clone(),
                    ..FitTrace::default()
                };
                let trial = without_group(&st.params, g, self.cfg.prob_floor);
                let result = self
                    .evaluate(trial, &mut scratch)
                    .and_then(|t| self.run(t, self.cfg.elimination_iters, &mut scratch));
                let t = match result {
                    Ok(t) => t,
                    Err(e) if e.is_numeric() => continue,
                    Err(e) => return Err(e),
                };
                let margin = self.cfg.tol * st.objective.abs().max(1.0);
                if t.objective - st.objective > margin {
                    let iter = trace.records.len();
                    trace.pruned.push(PruneEvent {
                        iter,
                        group: g,
                        pi: st.params.pi()[g],
                    });
                    trace
                        .pruned
                        .extend(scratch.pruned.iter().map(|e| PruneEvent { iter, ..*e }));
                    trace.records.push(TraceRecord {
                        iter,
                        objective: t.objective,
                        active_components: t.params.n_active(),
                    });
                    trace.seconds.push(self.start.elapsed().as_secs_f64());
                    *st = t;
                    accepted = true;
                    any = true;
                }
            }
            if !accepted {
                return Ok(any);
            }
        }
    }
}

/// Copy of `params` with cluster `g` frozen at the floor weight and the other
/// active weights rescaled to keep the total.
fn without_group(params: &ModelParams, g: usize, floor: f64) -> ModelParams {
    let mut p = params.clone();
    let freed = p.pi[g] - floor;
    let active_mass: f64 = p.active_groups().filter(|&k| k != g).map(|k| p.pi[k]).sum();
    let scale = (active_mass + freed) / active_mass;
    for k in 0..p.n_groups() {
        if k != g && p.active[k] {
            p.pi[k] *= scale;
        }
    }
    p.pi[g] = floor;
    p.freeze(g);
    p
}

fn prune(
    params: &mut ModelParams,
    empty: &[bool],
    threshold: f64,
    iter: usize,
    trace: &mut FitTrace,
) {
    let candidates: Vec<usize> = params
        .active_groups()
        .filter(|&g| empty[g] || params.pi()[g] < threshold)
        .collect();
    if candidates.len() == params.n_active() {
        // Keep the heaviest cluster alive.
        let keep = candidates
            .iter()
            .copied()
            .max_by(|&a, &b| params.pi()[a].total_cmp(&params.pi()[b]).then(b.cmp(&a)))
            .expect("at least one active cluster");
        for &g in candidates.iter().filter(|&&g| g != keep) {
            freeze(params, g, iter, trace);
        }
        return;
    }
    for g in candidates {
        freeze(params, g, iter, trace);
    }
}

fn freeze(params: &mut ModelParams, g: usize, iter: usize, trace: &mut FitTrace) {
    params.freeze(g);
    trace.pruned.push(PruneEvent {
        iter,
        group: g,
        pi: params.pi()[g],
    });
}
