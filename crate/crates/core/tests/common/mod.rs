//! Reference implementations used by the integration tests. Everything here
//! works in linear space with plain loops, independent of the library's
//! log-space kernels and water-filling solvers.
#![allow(dead_code)]

use fird::{EncodedDataset, ModelParams, RegWeights};
use rand::Rng;

pub struct Instance {
    pub data: EncodedDataset,
    pub params: ModelParams,
    pub reg: RegWeights,
}

fn random_simplex<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

/// N <= 5, M <= 3, G <= 3, D_m <= 3 with random parameters and weights.
pub fn tiny_instance<R: Rng>(rng: &mut R) -> Instance {
    let n = rng.random_range(1..=5);
    let m = rng.random_range(1..=3);
    let g = rng.random_range(1..=3);
    let dims: Vec<usize> = (0..m).map(|_| rng.random_range(1..=3)).collect();
    let codes = (0..n)
        .flat_map(|_| {
            dims.iter()
                .map(|&d| rng.random_range(0..d as u32))
                .collect::<Vec<_>>()
        })
        .collect();
    let data = EncodedDataset::from_codes(codes, &dims).unwrap();
    let pi = random_simplex(rng, g);
    let mu = (0..g)
        .map(|_| (0..m).map(|_| rng.random_range(0.02..0.98)).collect())
        .collect();
    let alpha = (0..g)
        .map(|_| dims.iter().map(|&d| random_simplex(rng, d)).collect())
        .collect();
    let beta = (0..g)
        .map(|_| dims.iter().map(|&d| random_simplex(rng, d)).collect())
        .collect();
    let params = ModelParams::from_nested(pi, mu, alpha, beta).unwrap();
    let total: usize = dims.iter().sum();
    let lam1 = (0..g).map(|_| rng.random_range(0.0..2.0)).collect();
    let lam2 = (0..g * total).map(|_| rng.random_range(0.0..1.0)).collect();
    let reg = RegWeights::new(lam1, lam2, &dims).unwrap();
    Instance { data, params, reg }
}

/// `(phi[n][g], gamma[n][g][m])` by Bayes' rule over every latent choice.
pub fn enumerate_posteriors(
    data: &EncodedDataset,
    p: &ModelParams,
) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let mut phi = Vec::new();
    let mut gamma = Vec::new();
    for n in 0..data.n_rows() {
        let row = data.row(n);
        let joint: Vec<f64> = (0..p.n_groups())
            .map(|g| {
                let mut v = p.pi()[g];
                for (m, &x) in row.iter().enumerate() {
                    let x = x as usize;
                    v *= p.mu(g, m) * p.alpha(g, m)[x] + (1.0 - p.mu(g, m)) * p.beta(g, m)[x];
                }
                v
            })
            .collect();
        let z: f64 = joint.iter().sum();
        phi.push(joint.iter().map(|j| j / z).collect());
        gamma.push(
            (0..p.n_groups())
                .map(|g| {
                    row.iter()
                        .enumerate()
                        .map(|(m, &x)| {
                            let x = x as usize;
                            let s = p.mu(g, m) * p.alpha(g, m)[x];
                            s / (s + (1.0 - p.mu(g, m)) * p.beta(g, m)[x])
                        })
                        .collect()
                })
                .collect(),
        );
    }
    (phi, gamma)
}

fn penalty(p: &ModelParams, reg: &RegWeights) -> f64 {
    let mut v = 0.0;
    for g in 0..p.n_groups() {
        v -= reg.lam1[g] * p.pi()[g].ln();
        for m in 0..p.n_features() {
            for (i, l) in reg.lam2(g, m).iter().enumerate() {
                v -= l * (p.alpha(g, m)[i].ln() - p.beta(g, m)[i].ln());
            }
        }
    }
    v
}

/// Regularized log-likelihood by direct products.
pub fn enumerate_objective(data: &EncodedDataset, p: &ModelParams, reg: &RegWeights) -> f64 {
    let mut ll = 0.0;
    for n in 0..data.n_rows() {
        let row = data.row(n);
        let mut z = 0.0;
        for g in 0..p.n_groups() {
            let mut v = p.pi()[g];
            for (m, &x) in row.iter().enumerate() {
                let x = x as usize;
                v *= p.mu(g, m) * p.alpha(g, m)[x] + (1.0 - p.mu(g, m)) * p.beta(g, m)[x];
            }
            z += v;
        }
        ll += z.ln();
    }
    ll + penalty(p, reg)
}

fn xlny(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Coefficients of the separable expected complete-data objective: for each
/// block (`pi`, every `mu`, `alpha` and `beta` row) the weights `c` of
/// `sum_i c_i ln x_i`.
pub struct QBlocks {
    pub pi: Vec<f64>,
    pub mu: Vec<[f64; 2]>,
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
}

pub fn q_blocks(
    data: &EncodedDataset,
    phi: &[Vec<f64>],
    gamma: &[Vec<Vec<f64>>],
    reg: &RegWeights,
    g_count: usize,
) -> QBlocks {
    let dims = data.dims();
    let m_count = dims.len();
    let mut pi: Vec<f64> = reg.lam1.iter().map(|l| -l).collect();
    let mut mu = vec![[0.0; 2]; g_count * m_count];
    let mut alpha = Vec::new();
    let mut beta = Vec::new();
    for g in 0..g_count {
        for m in 0..m_count {
            alpha.push(reg.lam2(g, m).iter().map(|l| -l).collect::<Vec<f64>>());
            beta.push(reg.lam2(g, m).to_vec());
        }
    }
    for n in 0..data.n_rows() {
        for g in 0..g_count {
            let w = phi[n][g];
            pi[g] += w;
            for m in 0..m_count {
                let x = data.code(n, m) as usize;
                let s = w * gamma[n][g][m];
                let r = w * (1.0 - gamma[n][g][m]);
                mu[g * m_count + m][0] += s;
                mu[g * m_count + m][1] += r;
                alpha[g * m_count + m][x] += s;
                beta[g * m_count + m][x] += r;
            }
        }
    }
    QBlocks {
        pi,
        mu,
        alpha,
        beta,
    }
}

/// Value of the expected complete-data objective at `p`.
pub fn q_value(q: &QBlocks, p: &ModelParams) -> f64 {
    let m_count = p.n_features();
    let mut v = 0.0;
    for g in 0..p.n_groups() {
        v += xlny(q.pi[g], p.pi()[g]);
        for m in 0..m_count {
            let k = g * m_count + m;
            v += xlny(q.mu[k][0], p.mu(g, m)) + xlny(q.mu[k][1], 1.0 - p.mu(g, m));
            v += q.alpha[k]
                .iter()
                .zip(p.alpha(g, m))
                .map(|(c, x)| xlny(*c, *x))
                .sum::<f64>();
            v += q.beta[k]
                .iter()
                .zip(p.beta(g, m))
                .map(|(c, x)| xlny(*c, *x))
                .sum::<f64>();
        }
    }
    v
}

/// Euclidean projection onto `{x : sum x = total, x >= 0}`.
fn project_simplex(y: &[f64], total: f64) -> Vec<f64> {
    let mut u = y.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (j, &v) in u.iter().enumerate() {
        css += v;
        let t = (css - total) / (j + 1) as f64;
        if v - t > 0.0 {
            theta = t;
        }
    }
    y.iter().map(|v| (v - theta).max(0.0)).collect()
}

/// Projected gradient ascent with backtracking for `sum c_i ln x_i` over
/// `{x >= floor, sum x = 1}`. Every subset of coordinates pinned at the
/// floor is tried, so blocks with negative weights are handled too.
pub fn max_log_sum(c: &[f64], floor: f64) -> f64 {
    let d = c.len();
    let eval = |x: &[f64]| c.iter().zip(x).map(|(c, x)| xlny(*c, *x)).sum::<f64>();
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1 << d) {
        let pinned = mask.count_ones() as usize;
        if pinned == d {
            continue;
        }
        let free: Vec<usize> = (0..d).filter(|i| mask & (1 << i) == 0).collect();
        let slack = 1.0 - d as f64 * floor;
        let mut y = vec![slack / free.len() as f64; free.len()];
        let build = |y: &[f64]| {
            let mut x = vec![floor; d];
            for (k, &i) in free.iter().enumerate() {
                x[i] += y[k];
            }
            x
        };
        let mut val = eval(&build(&y));
        let mut step = 1e-2;
        for _ in 0..5000 {
            let x = build(&y);
            let grad: Vec<f64> = free
                .iter()
                .map(|&i| if c[i] == 0.0 { 0.0 } else { c[i] / x[i] })
                .collect();
            let mut accepted = false;
            while step > 1e-18 {
                let trial = project_simplex(
                    &y.iter()
                        .zip(&grad)
                        .map(|(v, g)| v + step * g)
                        .collect::<Vec<_>>(),
                    slack,
                );
                let tv = eval(&build(&trial));
                if tv >= val {
                    let gain = tv - val;
                    y = trial;
                    val = tv;
                    step *= 2.0;
                    accepted = gain > 1e-15;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        best = best.max(val);
    }
    best
}

/// Maximum of the expected complete-data objective over all parameters.
pub fn q_oracle_max(q: &QBlocks, floor: f64) -> f64 {
    let mut v = max_log_sum(&q.pi, floor);
    v += q.mu.iter().map(|ab| max_log_sum(ab, 0.0)).sum::<f64>();
    v += q.alpha.iter().map(|c| max_log_sum(c, floor)).sum::<f64>();
    v += q.beta.iter().map(|c| max_log_sum(c, floor)).sum::<f64>();
    v
}
