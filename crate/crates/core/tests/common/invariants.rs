//! Property suites over randomized instances, shared by the `properties`
//! and `acceptance` targets.

use std::collections::BTreeSet;

use ndarray::Array2;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::seq::SliceRandom;
use rand::Rng;
use sigtrust::baselines::{badrank, lowest_pct_heuristic, BadRankConfig};
use sigtrust::evaluation::{auc_roc, macro_f1, Confusion};
use sigtrust::features::{
    assemble_features, magnitude_adjacency, rating_moments, signed_degree_stats, SvdConfig,
};
use sigtrust::graph::{parse_edge_list, Direction, EdgeRecord, IngestConfig, Sign, SignedGraph};
use sigtrust::labeling::{propagate_labels, Label, LabelSet};
use sigtrust::linalg;
use sigtrust::model::{self, ChannelMode, MessageGraph, Mode, ModelConfig, Wiring};
use sigtrust::training::{self, compute_loss, LossConfig, Split, TrainConfig};

/// Runs `test` on `cases` generated inputs; the error carries the minimal
/// failing input.
fn run<S>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String>
where
    S: Strategy,
    S::Value: std::fmt::Debug,
{
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn random_seeds(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> Vec<usize> {
    let k = rng.random_range(1..=n.min(4));
    rand::seq::index::sample(rng, n, k).into_vec()
}

fn benign_set(labels: &LabelSet) -> BTreeSet<usize> {
    (0..labels.len())
        .filter(|&v| labels.label(v) == Label::Benign)
        .collect()
}

fn random_model_problem(seed: u64, n: usize) -> (SignedGraph, Array2<f64>, ModelConfig) {
    let mut rng = super::rng(seed);
    let g = super::random_graph(&mut rng, n, n * 3, 0.6);
    let x = Array2::from_shape_simple_fn((n, 4), || rng.random_range(-1.0..1.0));
    let cfg = ModelConfig {
        hidden_dim: 4,
        mlp_hidden: 3,
        seed,
        ..ModelConfig::default()
    };
    (g, x, cfg)
}

pub fn graph_partition_round_trip_and_degrees(cases: u32) -> Result<(), String> {
    run(
        cases,
        (any::<u64>(), 2usize..30, 1usize..5),
        |(seed, n, density)| {
            let mut rng = super::rng(seed);
            let g = super::random_graph(&mut rng, n, n * density, 0.6);
            let pos = g.count_sign(Sign::Positive);
            let neg = g.count_sign(Sign::Negative);
            prop_assert_eq!(pos + neg, g.num_edges());
            let out_pos: usize = (0..n)
                .map(|v| g.degree(v, Sign::Positive, Direction::Out))
                .sum();
            let in_neg: usize = (0..n)
                .map(|v| g.degree(v, Sign::Negative, Direction::In))
                .sum();
            prop_assert_eq!(out_pos, pos);
            prop_assert_eq!(in_neg, neg);
            let (back, _) = parse_edge_list(&g.to_csv(), &IngestConfig::default()).unwrap();
            // isolated nodes never reach the CSV, so compare the edge lists by raw id
            let raw = |h: &SignedGraph| -> Vec<(i64, i64, i32, i64)> {
                h.edges()
                    .iter()
                    .map(|e| {
                        (
                            h.raw_id(e.source),
                            h.raw_id(e.target),
                            e.raw_rating,
                            e.timestamp,
                        )
                    })
                    .collect()
            };
            prop_assert_eq!(raw(&back), raw(&g));
            prop_assert_eq!(back.to_csv(), g.to_csv());
            Ok(())
        },
    )
}

pub fn labeling_invariants(cases: u32) -> Result<(), String> {
    run(cases, (any::<u64>(), 2usize..35), |(seed, n)| {
        let mut rng = super::rng(seed);
        let g = super::random_graph(&mut rng, n, n * 3, 0.65);
        let seeds = random_seeds(&mut rng, n);
        let labels = propagate_labels(&g, &seeds).unwrap();

        // seed order independence
        let mut shuffled = seeds.clone();
        shuffled.shuffle(&mut rng);
        shuffled.extend_from_slice(&seeds[..1]);
        prop_assert_eq!(&propagate_labels(&g, &shuffled).unwrap(), &labels);

        // fixpoint: one more round labels nothing new
        for e in g.edges() {
            if labels.label(e.source) == Label::Benign && e.weight() >= 0.5 {
                prop_assert_eq!(labels.label(e.target), Label::Benign);
            }
        }

        // every Fraud label comes from a Benign rater's strong negative edge
        for v in 0..n {
            if labels.label(v) == Label::Fraud {
                prop_assert!(g.edges().iter().any(|e| e.target == v
                    && e.weight() <= -0.5
                    && labels.label(e.source) == Label::Benign));
            }
        }

        // retaliation immunity: extra negative edges from non-Benign raters change nothing
        let taken: BTreeSet<(usize, usize)> =
            g.edges().iter().map(|e| (e.source, e.target)).collect();
        let mut edges = g.edges().to_vec();
        for s in (0..n).filter(|&s| labels.label(s) != Label::Benign) {
            let t = rng.random_range(0..n);
            if s != t && !taken.contains(&(s, t)) {
                edges.push(EdgeRecord {
                    source: s,
                    target: t,
                    raw_rating: -10,
                    timestamp: 0,
                });
            }
        }
        let g2 = SignedGraph::new(n, edges).unwrap();
        let again = propagate_labels(&g2, &seeds).unwrap();
        prop_assert_eq!(again.labels(), labels.labels());

        // monotonicity: a strong positive edge from a Benign node never shrinks Benign
        let benign: Vec<usize> = benign_set(&labels).into_iter().collect();
        let s = benign[rng.random_range(0..benign.len())];
        let t = rng.random_range(0..n);
        if s != t && !taken.contains(&(s, t)) {
            let mut edges = g.edges().to_vec();
            edges.push(EdgeRecord {
                source: s,
                target: t,
                raw_rating: rng.random_range(5..=10),
                timestamp: 0,
            });
            let grown = propagate_labels(&SignedGraph::new(n, edges).unwrap(), &seeds).unwrap();
            prop_assert!(benign_set(&labels).is_subset(&benign_set(&grown)));
        }
        Ok(())
    })
}

pub fn labeling_permutation_equivariant(cases: u32) -> Result<(), String> {
    run(cases, (any::<u64>(), 2usize..30), |(seed, n)| {
        let mut rng = super::rng(seed);
        let g = super::random_graph(&mut rng, n, n * 3, 0.65);
        let seeds = random_seeds(&mut rng, n);
        let perm = super::permutation(&mut rng, n);
        let labels = propagate_labels(&g, &seeds).unwrap();
        let moved: Vec<usize> = seeds.iter().map(|&s| perm[s]).collect();
        let relabeled = propagate_labels(&g.relabel(&perm).unwrap(), &moved).unwrap();
        for v in 0..n {
            prop_assert_eq!(labels.label(v), relabeled.label(perm[v]));
        }
        Ok(())
    })
}

pub fn structural_features_permutation_equivariant(cases: u32) -> Result<(), String> {
    run(cases, (any::<u64>(), 3usize..30), |(seed, n)| {
        let mut rng = super::rng(seed);
        let g = super::random_graph(&mut rng, n, n * 3, 0.6);
        let perm = super::permutation(&mut rng, n);
        let h = g.relabel(&perm).unwrap();
        let (d1, d2) = (signed_degree_stats(&g), signed_degree_stats(&h));
        let (m1, m2) = (rating_moments(&g), rating_moments(&h));
        for v in 0..n {
            prop_assert_eq!(d1.row(v), d2.row(perm[v]));
            for j in 0..2 {
                prop_assert!((m1[[v, j]] - m2[[perm[v], j]]).abs() < 1e-12);
            }
        }
        // spectral columns agree wherever the singular value is well separated
        let k = (n - 1).min(4);
        let cfg = SvdConfig {
            k_svd: k,
            iters: 40,
            seed: 3,
        };
        let (f1, f2) = (
            assemble_features(&g, &cfg).unwrap(),
            assemble_features(&h, &cfg).unwrap(),
        );
        let probe = (k + 1).min(n);
        let svd = linalg::randomized_svd(&magnitude_adjacency(&g), probe, 10, 40, 3);
        for j in 0..k {
            let s = svd.sigma[j];
            let gap = |o: f64| (s - o).abs() > 1e-2 * (1.0 + s);
            let separated = s > 1e-6
                && (j == 0 || gap(svd.sigma[j - 1]))
                && (j + 1 >= probe || gap(svd.sigma[j + 1]));
            if !separated {
                continue;
            }
            let col = 6 + j;
            let column = f1.data().column(col);
            let mut sorted: Vec<f64> = column.iter().map(|x| x.abs()).collect();
            sorted.sort_by(|a, b| b.total_cmp(a));
            // the sign convention needs a unique largest magnitude
            if sorted.len() > 1 && sorted[0] - sorted[1] < 1e-6 {
                continue;
            }
            for v in 0..n {
                prop_assert!(
                    (f1.data()[[v, col]] - f2.data()[[perm[v], col]]).abs() < 1e-6,
                    "column {} node {}",
                    col,
                    v
                );
            }
        }
        Ok(())
    })
}

pub fn standardized_columns_and_svd_residual(cases: u32) -> Result<(), String> {
    run(cases, (any::<u64>(), 8usize..30), |(seed, n)| {
        let mut rng = super::rng(seed);
        let g = super::random_graph(&mut rng, n, n * 3, 0.6);
        let k_max = 5.min(n - 1);
        let f = assemble_features(
            &g,
            &SvdConfig {
                k_svd: k_max,
                ..SvdConfig::default()
            },
        )
        .unwrap();
        for col in f.data().columns() {
            let mean = col.mean().unwrap();
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            if col.iter().all(|&x| x == 0.0) {
                continue;
            }
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-6);
        }
        let a = magnitude_adjacency(&g);
        let dense = a.to_dense();
        let mut last = f64::INFINITY;
        for k in 1..=k_max {
            let svd = linalg::randomized_svd(&a, k, 10, 24, 7);
            let approx = svd.u.dot(&Array2::from_diag(&svd.sigma)).dot(&svd.v.t());
            let residual = (&dense - &approx).mapv(|x| x * x).sum().sqrt();
            prop_assert!(
                residual <= last + 1e-9,
                "k={} residual {} after {}",
                k,
                residual,
                last
            );
            last = residual;
        }
        Ok(())
    })
}

pub fn attention_normalized_and_outputs_in_range(cases: u32) -> Result<(), String> {
    run(
        cases,
        (any::<u64>(), 2usize..25, any::<bool>()),
        |(seed, n, attention)| {
            let (g, x, cfg) = random_model_problem(seed, n);
            let mut rng = super::rng(seed ^ 1);
            let wiring = Wiring {
                attention,
                ..Wiring::default()
            };
            let params = super::grad::random_params(&mut rng, &cfg, &wiring, 4);
            let mg = MessageGraph::new(&g, ChannelMode::Dual);
            let trace =
                model::forward(&params, &mg, &x, Mode::Train { dropout_seed: seed }).unwrap();
            for layer in &trace.layers {
                for (c, ch) in layer.channels.iter().enumerate() {
                    let idx = mg.channel(c);
                    for v in 0..n {
                        let r = idx.range(v);
                        if r.is_empty() {
                            continue;
                        }
                        let total: f64 = ch.alpha[r.clone()].iter().sum();
                        prop_assert!((total - 1.0).abs() < 1e-12);
                        prop_assert!(ch.alpha[r].iter().all(|&a| a >= 0.0));
                    }
                }
            }
            prop_assert!(trace.probs.iter().all(|&p| p > 0.0 && p < 1.0));
            let again = model::forward(&params, &mg, &x, Mode::Eval).unwrap();
            let once_more = model::forward(&params, &mg, &x, Mode::Eval).unwrap();
            prop_assert_eq!(again.probs, once_more.probs);
            prop_assert_eq!(again.z, once_more.z);
            Ok(())
        },
    )
}

pub fn model_permutation_equivariant(cases: u32) -> Result<(), String> {
    run(cases, (any::<u64>(), 2usize..25), |(seed, n)| {
        let (g, x, cfg) = random_model_problem(seed, n);
        let mut rng = super::rng(seed ^ 2);
        let params = super::grad::random_params(&mut rng, &cfg, &Wiring::default(), 4);
        let perm = super::permutation(&mut rng, n);
        let mut xp = Array2::zeros(x.dim());
        for v in 0..n {
            xp.row_mut(perm[v]).assign(&x.row(v));
        }
        let h = g.relabel(&perm).unwrap();
        let p1 = model::predict(&params, &MessageGraph::new(&g, ChannelMode::Dual), &x).unwrap();
        let p2 = model::predict(&params, &MessageGraph::new(&h, ChannelMode::Dual), &xp).unwrap();
        for v in 0..n {
            prop_assert!((p1[v] - p2[perm[v]]).abs() <= 1e-12 * (1.0 + p1[v].abs()));
        }
        Ok(())
    })
}

pub fn masked_nodes_never_change_the_loss(cases: u32) -> Result<(), String> {
    run(cases, any::<u64>(), |seed| {
        let mut rng = super::rng(seed);
        let problem = super::grad::Problem::random(&mut rng, 30, 80, 4);
        let cfg = ModelConfig {
            hidden_dim: 4,
            mlp_hidden: 3,
            ..ModelConfig::default()
        };
        let params = super::grad::random_params(&mut rng, &cfg, &Wiring::default(), 4);
        let mg = MessageGraph::new(&problem.graph, ChannelMode::Dual);
        let trace = model::forward(&params, &mg, &problem.features, problem.mode).unwrap();
        let loss_cfg = LossConfig::default();
        let base = compute_loss(
            &trace,
            &problem.labels,
            &problem.split,
            &problem.graph,
            &loss_cfg,
        )
        .unwrap();
        let v = rng.random_range(0..30);
        if problem.split.get(v) != Some(Split::Train) {
            prop_assert_eq!(base.grads.d_logits[v], 0.0);
            let mut labels = problem.labels.labels().to_vec();
            labels[v] = [Label::Benign, Label::Fraud, Label::Unlabeled][rng.random_range(0..3)];
            let other = compute_loss(
                &trace,
                &LabelSet::from_labels(labels),
                &problem.split,
                &problem.graph,
                &loss_cfg,
            )
            .unwrap();
            prop_assert_eq!(other.total, base.total);
            prop_assert_eq!(other.grads.d_logits, base.grads.d_logits);
        }
        Ok(())
    })
}

pub fn splits_stratified_disjoint_deterministic(cases: u32) -> Result<(), String> {
    run(
        cases,
        (any::<u64>(), 10usize..200, 10usize..60, 0usize..20),
        |(seed, benign, fraud, unl)| {
            let mut labels = vec![Label::Benign; benign];
            labels.extend(vec![Label::Fraud; fraud]);
            labels.extend(vec![Label::Unlabeled; unl]);
            let mut rng = super::rng(seed);
            labels.shuffle(&mut rng);
            let labels = LabelSet::from_labels(labels);
            let cfg = TrainConfig {
                split_seed: seed,
                ..TrainConfig::default()
            };
            let split = training::make_splits(&labels, &cfg).unwrap();
            prop_assert_eq!(&split, &training::make_splits(&labels, &cfg).unwrap());
            let overall = fraud as f64 / (benign + fraud) as f64;
            let mut covered = 0;
            for s in [Split::Train, Split::Val, Split::Test] {
                let nodes = split.nodes(s);
                covered += nodes.len();
                let f = nodes
                    .iter()
                    .filter(|&&v| labels.label(v) == Label::Fraud)
                    .count();
                let frac = f as f64 / nodes.len() as f64;
                // each class is cut separately, so one node of rounding per class is the integrality limit
                let slack = 0.02f64.max(1.0 / nodes.len() as f64 + 1e-12);
                prop_assert!(
                    (frac - overall).abs() <= slack,
                    "{:?}: {} vs {}",
                    s,
                    frac,
                    overall
                );
            }
            prop_assert_eq!(covered, benign + fraud);
            for v in 0..labels.len() {
                prop_assert_eq!(split.get(v).is_some(), labels.label(v) != Label::Unlabeled);
            }
            Ok(())
        },
    )
}

pub fn baseline_invariants(cases: u32) -> Result<(), String> {
    run(
        cases,
        (any::<u64>(), 2usize..40, 0.01f64..0.99),
        |(seed, n, pct)| {
            let mut rng = super::rng(seed);
            let g = super::random_graph(&mut rng, n, n * 3, 0.5);
            let rated = (0..n)
                .filter(|&v| {
                    g.degree(v, Sign::Positive, Direction::In)
                        + g.degree(v, Sign::Negative, Direction::In)
                        > 0
                })
                .count();
            let low = lowest_pct_heuristic(&g, pct).unwrap();
            let flagged = low.flags.as_ref().unwrap().iter().filter(|&&f| f).count();
            prop_assert_eq!(
                flagged,
                (pct * rated as f64 - 1e-9).ceil().max(0.0) as usize
            );
            prop_assert_eq!(&low, &lowest_pct_heuristic(&g, pct).unwrap());
            if g.count_sign(Sign::Negative) > 0 {
                let b = badrank(&g, &BadRankConfig::default()).unwrap();
                prop_assert!((b.scores.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(b.scores.iter().all(|&s| s >= 0.0 && s.is_finite()));
                prop_assert_eq!(&b, &badrank(&g, &BadRankConfig::default()).unwrap());
            }
            Ok(())
        },
    )
}

pub fn metric_invariances(cases: u32) -> Result<(), String> {
    run(cases, (any::<u64>(), 2usize..80), |(seed, n)| {
        let mut rng = super::rng(seed);
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..12) as f64 / 11.0)
            .collect();
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.3))).collect();
        labels[0] = 1;
        labels[n - 1] = 0;
        let auc = auc_roc(&scores, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&auc));
        let transformed: Vec<f64> = scores.iter().map(|&s| (3.0 * s).exp() - 7.0).collect();
        prop_assert_eq!(auc_roc(&transformed, &labels).unwrap(), auc);

        let preds: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
        let perm = super::permutation(&mut rng, n);
        let pp: Vec<u8> = perm.iter().map(|&i| preds[i]).collect();
        let lp: Vec<u8> = perm.iter().map(|&i| labels[i]).collect();
        prop_assert_eq!(macro_f1(&pp, &lp), macro_f1(&preds, &labels));
        prop_assert_eq!(
            Confusion::from_predictions(&pp, &lp),
            Confusion::from_predictions(&preds, &labels)
        );
        let f1 = macro_f1(&preds, &labels);
        prop_assert!((0.0..=1.0).contains(&f1));
        Ok(())
    })
}

pub type Suite = fn(u32) -> Result<(), String>;

pub const SUITES: &[(&str, Suite)] = &[
    (
        "graph_partition_round_trip_and_degrees",
        graph_partition_round_trip_and_degrees,
    ),
    ("labeling_invariants", labeling_invariants),
    (
        "labeling_permutation_equivariant",
        labeling_permutation_equivariant,
    ),
    (
        "structural_features_permutation_equivariant",
        structural_features_permutation_equivariant,
    ),
    (
        "standardized_columns_and_svd_residual",
        standardized_columns_and_svd_residual,
    ),
    (
        "attention_normalized_and_outputs_in_range",
        attention_normalized_and_outputs_in_range,
    ),
    (
        "model_permutation_equivariant",
        model_permutation_equivariant,
    ),
    (
        "masked_nodes_never_change_the_loss",
        masked_nodes_never_change_the_loss,
    ),
    (
        "splits_stratified_disjoint_deterministic",
        splits_stratified_disjoint_deterministic,
    ),
    ("baseline_invariants", baseline_invariants),
    ("metric_invariances", metric_invariances),
];
