mod common;

use common::tiny_instance;
use fird::detect::{
    anomaly_scores, cluster_entropy, filter_outliers, fraud_group_scores, infer_labels,
    row_information, DecisionDistribution, FraudMode,
};
use fird::em::regularizer;
use fird::metrics::roc_auc;
use fird::model::log_feature_terms;
use fird::synth::{generate, GenConfig};
use fird::{e_step, fit, init_params, EncodedDataset, FitConfig, ModelParams, RegWeights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mixture(p: &ModelParams, g: usize, m: usize) -> Vec<f64> {
    p.alpha(g, m)
        .iter()
        .zip(p.beta(g, m))
        .map(|(a, b)| p.mu(g, m) * a + (1.0 - p.mu(g, m)) * b)
        .collect()
}

#[test]
fn entropy_and_information_match_direct_sums() {
    for seed in 0..50 {
        let inst = tiny_instance(&mut ChaCha8Rng::seed_from_u64(seed));
        let p = &inst.params;
        for g in 0..p.n_groups() {
            let h: f64 = (0..p.n_features())
                .flat_map(|m| mixture(p, g, m))
                .map(|q| -q * q.ln())
                .sum();
            assert!((cluster_entropy(p, g) - h).abs() <= 1e-12);
            for n in 0..inst.data.n_rows() {
                let row = inst.data.row(n);
                let info: f64 = row
                    .iter()
                    .enumerate()
                    .map(|(m, &x)| -mixture(p, g, m)[x as usize].ln())
                    .sum();
                assert!((row_information(row, g, p) - info).abs() <= 1e-10);
                for (m, (ls, lr)) in log_feature_terms(row, g, p).into_iter().enumerate() {
                    let x = row[m] as usize;
                    assert!((ls.exp() - p.mu(g, m) * p.alpha(g, m)[x]).abs() <= 1e-12);
                    assert!((lr.exp() - (1.0 - p.mu(g, m)) * p.beta(g, m)[x]).abs() <= 1e-12);
                }
            }
        }
    }
}

#[test]
fn sparse_alpha_earns_a_larger_penalty_bonus_than_swapped_roles() {
    let sparse = vec![0.97, 0.01, 0.01, 0.01];
    let flat = vec![0.25; 4];
    let p = ModelParams::from_nested(
        vec![1.0],
        vec![vec![0.5]],
        vec![vec![sparse.clone()]],
        vec![vec![flat.clone()]],
    )
    .unwrap();
    let q = ModelParams::from_nested(
        vec![1.0],
        vec![vec![0.5]],
        vec![vec![flat]],
        vec![vec![sparse]],
    )
    .unwrap();
    let reg = RegWeights::new(vec![0.0], vec![0.3; 4], &[4]).unwrap();
    assert!(regularizer(&p, &reg) > regularizer(&q, &reg));
}

/// Nominal recovery rows followed by `k` rows whose values avoid every
/// cluster's sparse support.
fn with_planted(k: usize) -> (EncodedDataset, Vec<bool>) {
    let cfg = GenConfig::recovery(2000, 10, 20, 4, 2, 21);
    let (data, truth) = generate(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut codes = data.codes().to_vec();
    for _ in 0..k {
        for m in 0..10 {
            loop {
                let v = rng.random_range(0..20u32);
                if truth.supports.iter().all(|s| !s[m].contains(&v)) {
                    codes.push(v);
                    break;
                }
            }
        }
    }
    let labels = (0..data.n_rows() + k).map(|n| n >= data.n_rows()).collect();
    (
        EncodedDataset::from_codes(codes, &cfg.dims).unwrap(),
        labels,
    )
}

#[test]
fn planted_rows_are_outliers_and_rank_as_anomalies() {
    let (data, planted) = with_planted(20);
    let params = fit(&data, &FitConfig::new(8)).unwrap().params;
    let mask = filter_outliers(&data, &params, 0.05).unwrap();
    for (n, _) in planted.iter().enumerate().filter(|(_, p)| **p) {
        assert!(mask[n], "planted row {n} not flagged");
    }
    assert!(filter_outliers(&data, &params, 1e9)
        .unwrap()
        .iter()
        .all(|o| !o));
    let scores = anomaly_scores(&data, &params).unwrap();
    assert!(roc_auc(&planted, &scores).unwrap() >= 0.95);
}

#[test]
fn label_inference_identities() {
    let (data, _) = generate(&GenConfig::recovery(300, 5, 10, 5, 2, 2)).unwrap();
    let resp = e_step(&data, &init_params(5, &data.dims(), 3)).unwrap();
    let ones = infer_labels(
        &resp,
        &DecisionDistribution::new(vec![1.0; 5]).unwrap(),
        None,
    )
    .unwrap();
    assert!(ones.iter().all(|l| (l - 1.0).abs() <= 1e-12));
    let zeros = infer_labels(
        &resp,
        &DecisionDistribution::new(vec![0.0; 5]).unwrap(),
        None,
    )
    .unwrap();
    assert!(zeros.iter().all(|&l| l == 0.0));
    let hot = infer_labels(&resp, &DecisionDistribution::one_hot(5, 3), None).unwrap();
    for (n, l) in hot.iter().enumerate() {
        assert_eq!(*l, resp.phi(n, 3));
    }
    let mut outliers = vec![false; data.n_rows()];
    outliers[7] = true;
    let masked = infer_labels(
        &resp,
        &DecisionDistribution::new(vec![1.0; 5]).unwrap(),
        Some(&outliers),
    )
    .unwrap();
    assert_eq!(masked[7], 0.0);
    assert!((masked[8] - 1.0).abs() <= 1e-12);
}

fn single_group(codes: Vec<u32>, dims: &[usize]) -> (EncodedDataset, ModelParams) {
    let data = EncodedDataset::from_codes(codes, dims).unwrap();
    let params = ModelParams::uniform(1, dims, 0.5);
    (data, params)
}

#[test]
fn evenly_spread_group_is_never_flagged() {
    for mode in [
        FraudMode::Multinomial,
        FraudMode::Binomial,
        FraudMode::Literal,
    ] {
        for d in [2usize, 4, 5] {
            let codes: Vec<u32> = (0..d * 6)
                .flat_map(|n| [(n % d) as u32, ((n + 1) % d) as u32])
                .collect();
            let (data, params) = single_group(codes, &[d, d]);
            let resp = e_step(&data, &params).unwrap();
            for eps in [1e-6, 0.05, 1.0] {
                let (flags, stats) = fraud_group_scores(&data, &resp, &params, eps, mode).unwrap();
                assert!(!flags[0], "{mode} d={d} eps={eps}: {:?}", stats[0]);
            }
        }
    }
}

#[test]
fn concentrated_group_is_flagged() {
    for mode in [FraudMode::Multinomial, FraudMode::Binomial] {
        for (n, d) in [(2usize, 2usize), (5, 3), (50, 10)] {
            let (data, params) = single_group(vec![1; n * 3], &[d, d, d]);
            let resp = e_step(&data, &params).unwrap();
            let (flags, stats) = fraud_group_scores(&data, &resp, &params, 0.05, mode).unwrap();
            assert!(flags[0], "{mode} n={n} d={d}: {:?}", stats[0]);
            assert!(stats[0].information > stats[0].threshold);
        }
    }
}

#[test]
fn frozen_group_is_not_flagged_and_reports_zeros() {
    let mut params = ModelParams::uniform(2, &[3, 3], 0.5);
    params.set_active(vec![true, false]).unwrap();
    let data = EncodedDataset::from_codes(vec![0; 20], &[3, 3]).unwrap();
    let resp = e_step(&data, &params).unwrap();
    let (flags, stats) =
        fraud_group_scores(&data, &resp, &params, 0.05, FraudMode::Multinomial).unwrap();
    assert!(!flags[1]);
    assert_eq!(
        (stats[1].n_soft, stats[1].information, stats[1].threshold),
        (0.0, 0.0, 0.0)
    );
}

#[test]
fn point_mass_row_scores_at_most_one() {
    let params = ModelParams::from_nested(
        vec![1.0],
        vec![vec![1.0, 1.0]],
        vec![vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]],
        vec![vec![vec![1.0 / 3.0; 3], vec![1.0 / 3.0; 3]]],
    )
    .unwrap();
    let data = EncodedDataset::from_codes(vec![0, 1], &[3, 3]).unwrap();
    let s = anomaly_scores(&data, &params).unwrap();
    assert!(s[0] <= 1.0);
}

#[test]
fn binomial_information_equals_threshold_at_expected_counts() {
    for d in [2usize, 3, 6] {
        let codes: Vec<u32> = (0..d * 4).map(|n| (n % d) as u32).collect();
        let (data, params) = single_group(codes, &[d]);
        let resp = e_step(&data, &params).unwrap();
        let (_, stats) =
            fraud_group_scores(&data, &resp, &params, 0.05, FraudMode::Binomial).unwrap();
        assert!(
            (stats[0].information - stats[0].threshold).abs() <= 1e-6,
            "{:?}",
            stats[0]
        );
    }
    for n in 2..12 {
        let (data, params) = single_group(vec![0; n], &[2]);
        let resp = e_step(&data, &params).unwrap();
        let (_, stats) =
            fraud_group_scores(&data, &resp, &params, 0.05, FraudMode::Binomial).unwrap();
        assert!(
            stats[0].information > stats[0].threshold,
            "n={n}: {:?}",
            stats[0]
        );
    }
}

#[test]
fn group_flags_ignore_row_order() {
    let (data, truth) = generate(&GenConfig::fraud_mix(300, 1.0, 6)).unwrap();
    let params = fit(&data, &FitConfig::new(12)).unwrap().params;
    let mut order: Vec<usize> = (0..data.n_rows()).collect();
    order.reverse();
    order.rotate_left(17);
    let shuffled = data.select_rows(&order);
    assert_eq!(truth.d.len(), data.n_rows());
    for mode in [
        FraudMode::Multinomial,
        FraudMode::Binomial,
        FraudMode::Literal,
    ] {
        let flags = |d: &EncodedDataset| {
            let resp = e_step(d, &params).unwrap();
            fraud_group_scores(d, &resp, &params, 0.05, mode).unwrap().0
        };
        assert_eq!(flags(&data), flags(&shuffled), "{mode}");
    }
}
