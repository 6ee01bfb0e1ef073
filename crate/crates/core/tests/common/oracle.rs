//! Independent reference computations: dense linear algebra via nalgebra,
//! brute-force fixpoints, and pair enumeration. Each check panics on the
//! first disagreement and returns how many instances it compared.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use sigtrust::baselines::{badrank, BadRankConfig};
use sigtrust::evaluation::{auc_roc, macro_f1};
use sigtrust::features::{magnitude_adjacency, truncated_svd, SvdConfig};
use sigtrust::graph::{Sign, SignedGraph};
use sigtrust::labeling::{
    pagerank_positive, propagate_labels_with, ConflictPolicy, Label, SeedConfig,
};
use sigtrust::linalg;

fn dense_abs_adjacency(g: &SignedGraph) -> DMatrix<f64> {
    let n = g.num_nodes();
    let mut a = DMatrix::zeros(n, n);
    for e in g.edges() {
        a[(e.source, e.target)] += e.weight().abs();
    }
    a
}

pub fn svd_singular_values_match_dense(instances: u64) -> usize {
    let mut checked = 0;
    for seed in 0..instances {
        let mut rng = super::rng(seed);
        let n = rng.random_range(15..40);
        let g = super::random_graph(&mut rng, n, n * 4, 0.7);
        let k = 6;
        let csr = magnitude_adjacency(&g);
        let ours = linalg::randomized_svd(&csr, k, 10, 24, seed);
        let dense = dense_abs_adjacency(&g);
        let mut oracle: Vec<f64> = dense
            .clone()
            .svd(false, false)
            .singular_values
            .iter()
            .copied()
            .collect();
        oracle.sort_by(|a, b| b.total_cmp(a));
        for i in 0..k {
            let rel = (ours.sigma[i] - oracle[i]).abs() / oracle[i].max(1e-12);
            assert!(
                rel < 1e-6,
                "seed {seed} sigma[{i}]: {} vs {}",
                ours.sigma[i],
                oracle[i]
            );
        }
        // U·Σ columns satisfy |A| Aᵀ u = σ² u
        let scaled = truncated_svd(
            &g,
            &SvdConfig {
                k_svd: k,
                iters: 24,
                seed,
            },
        )
        .unwrap();
        let gram = &dense * dense.transpose();
        for i in 0..k {
            if i + 1 < k && (oracle[i] - oracle[i + 1]).abs() < 1e-3 * oracle[0] {
                continue;
            }
            if i > 0 && (oracle[i - 1] - oracle[i]).abs() < 1e-3 * oracle[0] {
                continue;
            }
            let col = DVector::from_iterator(n, scaled.column(i).iter().copied());
            let lhs = &gram * &col;
            let rhs = &col * oracle[i].powi(2);
            assert!(
                (lhs - &rhs).norm() <= 1e-5 * rhs.norm().max(1e-12),
                "seed {seed} col {i}"
            );
        }
        checked += 1;
    }
    checked
}

fn dense_rank(n: usize, transitions: &[(usize, usize, f64)], teleport: &[f64], d: f64) -> Vec<f64> {
    let mut out_w = vec![0.0; n];
    for &(s, _, w) in transitions {
        out_w[s] += w;
    }
    // x = (1-d)·e + d·(P x + (dangling·x)/n)
    let mut m = DMatrix::<f64>::identity(n, n);
    for &(s, t, w) in transitions {
        m[(t, s)] -= d * w / out_w[s];
    }
    for s in 0..n {
        if out_w[s] == 0.0 {
            for t in 0..n {
                m[(t, s)] -= d / n as f64;
            }
        }
    }
    let rhs = DVector::from_iterator(n, teleport.iter().map(|&e| (1.0 - d) * e));
    let x = m.lu().solve(&rhs).expect("nonsingular");
    let total = x.sum();
    x.iter().map(|v| v / total).collect()
}

pub fn pagerank_matches_dense_solve(instances: u64) -> usize {
    let mut checked = 0;
    for seed in 0..instances {
        let mut rng = super::rng(1000 + seed);
        let n = rng.random_range(5..40);
        let g = super::random_graph(&mut rng, n, n * 3, 0.7);
        if g.count_sign(Sign::Positive) == 0 {
            continue;
        }
        let cfg = SeedConfig::default();
        let ours = pagerank_positive(&g, &cfg).unwrap();
        let transitions: Vec<(usize, usize, f64)> = g
            .edges()
            .iter()
            .filter(|e| e.raw_rating > 0)
            .map(|e| (e.source, e.target, e.weight()))
            .collect();
        let oracle = dense_rank(n, &transitions, &vec![1.0 / n as f64; n], cfg.damping);
        for v in 0..n {
            assert!((ours[v] - oracle[v]).abs() < 1e-8, "seed {seed} node {v}");
        }
        checked += 1;
    }
    checked
}

pub fn badrank_matches_dense_solve(instances: u64) -> usize {
    let mut checked = 0;
    for seed in 0..instances {
        let mut rng = super::rng(2000 + seed);
        let n = rng.random_range(5..40);
        let g = super::random_graph(&mut rng, n, n * 3, 0.5);
        if g.count_sign(Sign::Negative) == 0 {
            continue;
        }
        let cfg = BadRankConfig::default();
        let ours = badrank(&g, &cfg).unwrap().scores;
        let transitions: Vec<(usize, usize, f64)> = g
            .edges()
            .iter()
            .filter(|e| e.raw_rating < 0)
            .map(|e| (e.source, e.target, e.weight().abs()))
            .collect();
        let mut e = vec![0.0; n];
        for &(_, t, _) in &transitions {
            e[t] = 1.0;
        }
        let targets: f64 = e.iter().sum();
        e.iter_mut().for_each(|x| *x /= targets);
        let oracle = dense_rank(n, &transitions, &e, cfg.damping);
        for v in 0..n {
            assert!((ours[v] - oracle[v]).abs() < 1e-8, "seed {seed} node {v}");
        }
        assert!((ours.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        checked += 1;
    }
    checked
}

/// Benign set by naive repeated sweeps until nothing changes.
fn brute_force_labels(g: &SignedGraph, seeds: &[usize], policy: ConflictPolicy) -> Vec<Label> {
    let n = g.num_nodes();
    let mut benign = vec![false; n];
    for &s in seeds {
        benign[s] = true;
    }
    loop {
        let mut changed = false;
        for e in g.edges() {
            if benign[e.source] && e.weight() >= 0.5 && !benign[e.target] {
                benign[e.target] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    (0..n)
        .map(|v| {
            let condemned = g
                .edges()
                .iter()
                .any(|e| e.target == v && benign[e.source] && e.weight() <= -0.5);
            let fraud_allowed = match policy {
                ConflictPolicy::BenignWins => !benign[v],
                ConflictPolicy::FraudWins => !seeds.contains(&v),
            };
            if condemned && fraud_allowed {
                Label::Fraud
            } else if benign[v] {
                Label::Benign
            } else {
                Label::Unlabeled
            }
        })
        .collect()
}

pub fn labeling_matches_brute_force_fixpoint(instances: u64) -> usize {
    let mut checked = 0;
    for seed in 0..instances {
        let mut rng = super::rng(3000 + seed);
        let n = rng.random_range(3..40);
        let g = super::random_graph(&mut rng, n, n * 3, 0.65);
        let k = rng.random_range(1..=n.min(4));
        let seeds: Vec<usize> = rand::seq::index::sample(&mut rng, n, k).into_vec();
        for policy in [ConflictPolicy::BenignWins, ConflictPolicy::FraudWins] {
            let ours = propagate_labels_with(&g, &seeds, policy).unwrap();
            assert_eq!(
                ours.labels(),
                &brute_force_labels(&g, &seeds, policy)[..],
                "seed {seed} {policy:?}"
            );
        }
        checked += 1;
    }
    checked
}

pub fn auc_matches_pair_enumeration(instances: u64) -> usize {
    let mut checked = 0;
    for seed in 0..instances {
        let mut rng = super::rng(4000 + seed);
        let n = rng.random_range(2..60);
        // coarse scores produce many ties
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..8) as f64 / 7.0)
            .collect();
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.3))).collect();
        labels[0] = 0;
        labels[n - 1] = 1;
        let (mut doubled, mut pos, mut neg) = (0u64, 0u64, 0u64);
        for i in 0..n {
            if labels[i] == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
            for j in 0..n {
                if labels[i] == 1 && labels[j] == 0 {
                    if scores[i] > scores[j] {
                        doubled += 2;
                    } else if scores[i] == scores[j] {
                        doubled += 1;
                    }
                }
            }
        }
        let oracle = doubled as f64 / (2 * pos * neg) as f64;
        assert_eq!(auc_roc(&scores, &labels).unwrap(), oracle, "seed {seed}");
        checked += 1;
    }
    checked
}

pub fn macro_f1_matches_confusion_oracle(instances: u64) -> usize {
    let mut checked = 0;
    for seed in 0..instances {
        let mut rng = super::rng(5000 + seed);
        let n = rng.random_range(1..60);
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.3))).collect();
        let preds: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
        let mut m = [[0usize; 2]; 2];
        for i in 0..n {
            m[labels[i] as usize][preds[i] as usize] += 1;
        }
        let f1 = |c: usize| {
            let tp = m[c][c];
            let fp = m[1 - c][c];
            let fn_ = m[c][1 - c];
            if 2 * tp + fp + fn_ == 0 {
                0.0
            } else {
                (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
            }
        };
        assert_eq!(
            macro_f1(&preds, &labels),
            (f1(0) + f1(1)) / 2.0,
            "seed {seed}"
        );
        checked += 1;
    }
    checked
}
