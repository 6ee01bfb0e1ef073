//! Shared graph generators for the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sigtrust::graph::{EdgeRecord, SignedGraph};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn graph_from(n: usize, edges: &[(usize, usize, i32)]) -> SignedGraph {
    SignedGraph::new(
        n,
        edges
            .iter()
            .enumerate()
            .map(|(t, &(s, d, r))| EdgeRecord {
                source: s,
                target: d,
                raw_rating: r,
                timestamp: t as i64,
            })
            .collect(),
    )
    .unwrap()
}

/// Random rating in `[-10, 10] \ {0}`, positive with probability `p_pos`.
pub fn rating(rng: &mut ChaCha8Rng, p_pos: f64) -> i32 {
    let mag = rng.random_range(1..=10);
    if rng.random_bool(p_pos) {
        mag
    } else {
        -mag
    }
}

/// Up to `m` distinct directed non-loop edges with random ratings.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, m: usize, p_pos: f64) -> SignedGraph {
    let mut pairs = BTreeSet::new();
    let mut edges = Vec::new();
    for _ in 0..m * 4 {
        if edges.len() >= m || n < 2 {
            break;
        }
        let s = rng.random_range(0..n);
        let t = rng.random_range(0..n);
        if s == t || !pairs.insert((s, t)) {
            continue;
        }
        edges.push((s, t, rating(rng, p_pos)));
    }
    graph_from(n, &edges)
}

/// Random permutation of `0..n`.
pub fn permutation(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Trust network with a planted group of colluding accounts: honest users
/// rate each other highly, rate the colluders negatively (with occasional
/// lukewarm praise as camouflage), and the colluders praise each other.
/// Returns the graph and the planted fraud ids.
pub fn planted_fraud_graph(
    seed: u64,
    benign: usize,
    fraud: usize,
    loose: usize,
) -> (SignedGraph, Vec<usize>) {
    let mut rng = rng(seed);
    let n = benign + fraud + loose;
    let fraud_ids: Vec<usize> = (benign..benign + fraud).collect();
    let mut pairs = BTreeSet::new();
    let mut edges = Vec::new();
    let mut add = |edges: &mut Vec<(usize, usize, i32)>, s: usize, t: usize, r: i32| {
        if s != t && pairs.insert((s, t)) {
            edges.push((s, t, r));
        }
    };
    for s in 0..benign {
        for _ in 0..6 {
            let t = rng.random_range(0..benign);
            let r = rng.random_range(5..=10);
            add(&mut edges, s, t, r);
        }
        if rng.random_bool(0.15) {
            let t = rng.random_range(0..benign);
            let r = -rng.random_range(1..=4);
            add(&mut edges, s, t, r);
        }
    }
    for &f in &fraud_ids {
        for _ in 0..4 {
            let s = rng.random_range(0..benign);
            let r = -rng.random_range(5..=10);
            add(&mut edges, s, f, r);
        }
        for _ in 0..2 {
            let s = rng.random_range(0..benign);
            let r = rng.random_range(1..=4);
            add(&mut edges, s, f, r);
        }
        for _ in 0..4 {
            let t = fraud_ids[rng.random_range(0..fraud)];
            add(&mut edges, f, t, 10);
        }
        for _ in 0..2 {
            let t = rng.random_range(0..benign);
            let r = rng.random_range(1..=10);
            add(&mut edges, f, t, r);
        }
    }
    for l in benign + fraud..n {
        let t = rng.random_range(0..benign);
        let r = rating(&mut rng, 0.7);
        add(&mut edges, l, t, r);
        let s = fraud_ids[rng.random_range(0..fraud)];
        add(&mut edges, s, l, 3);
    }
    (graph_from(n, &edges), fraud_ids)
}

/// Two disjoint copies of `g`; node `v` of the second copy is `v + n`.
pub fn disjoint_double(g: &SignedGraph) -> SignedGraph {
    let n = g.num_nodes();
    let mut edges: Vec<EdgeRecord> = g.edges().to_vec();
    edges.extend(g.edges().iter().map(|e| EdgeRecord {
        source: e.source + n,
        target: e.target + n,
        ..*e
    }));
    SignedGraph::new(2 * n, edges).unwrap()
}

pub mod invariants;
pub mod oracle;

pub mod grad {
    use ndarray::Array2;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;
    use sigtrust::graph::SignedGraph;
    use sigtrust::labeling::{Label, LabelSet};
    use sigtrust::model::{self, MessageGraph, Mode, ModelConfig, ModelParams, Wiring};
    use sigtrust::training::{compute_loss, LossConfig, Split, SplitAssignment};

    pub struct Problem {
        pub graph: SignedGraph,
        pub features: Array2<f64>,
        pub labels: LabelSet,
        pub split: SplitAssignment,
        pub loss: LossConfig,
        pub mode: Mode,
    }

    impl Problem {
        pub fn random(rng: &mut ChaCha8Rng, n: usize, m: usize, in_dim: usize) -> Self {
            let graph = super::random_graph(rng, n, m, 0.6);
            let features =
                Array2::from_shape_simple_fn((n, in_dim), || rng.random_range(-1.5..1.5));
            let mut labels = Vec::with_capacity(n);
            let mut split = Vec::with_capacity(n);
            for v in 0..n {
                let label = match v % 5 {
                    0 | 3 => Label::Fraud,
                    4 if v % 2 == 0 => Label::Unlabeled,
                    _ => Label::Benign,
                };
                labels.push(label);
                split.push(match (label, v % 7) {
                    (Label::Unlabeled, _) => None,
                    (_, 0) => Some(Split::Test),
                    (_, 1) => Some(Split::Val),
                    _ => Some(Split::Train),
                });
            }
            Problem {
                graph,
                features,
                labels: LabelSet::from_labels(labels),
                split: SplitAssignment::from_assignment(split),
                loss: LossConfig {
                    lambda: 0.5,
                    ..LossConfig::default()
                },
                mode: Mode::Train { dropout_seed: 17 },
            }
        }

        pub fn loss(&self, params: &ModelParams, mg: &MessageGraph) -> f64 {
            let trace = model::forward(params, mg, &self.features, self.mode).unwrap();
            compute_loss(&trace, &self.labels, &self.split, &self.graph, &self.loss)
                .unwrap()
                .total
        }

        pub fn gradients(&self, params: &ModelParams, mg: &MessageGraph) -> ModelParams {
            let trace = model::forward(params, mg, &self.features, self.mode).unwrap();
            let out =
                compute_loss(&trace, &self.labels, &self.split, &self.graph, &self.loss).unwrap();
            model::backward(params, mg, &trace, &out.grads).unwrap()
        }
    }

    /// Parameters with every tensor, attention included, drawn at random.
    pub fn random_params(
        rng: &mut ChaCha8Rng,
        cfg: &ModelConfig,
        wiring: &Wiring,
        in_dim: usize,
    ) -> ModelParams {
        let mut p = ModelParams::init(cfg, wiring, in_dim).unwrap();
        for (_, _, data) in p.tensors_mut() {
            for x in data.iter_mut() {
                *x = rng.random_range(-0.6..0.6);
            }
        }
        p
    }

    pub struct FdResult {
        pub checked: usize,
        pub max_rel_err: f64,
        pub worst: String,
    }

    /// Compares analytic gradients with central differences on `samples`
    /// random coordinates. The relative error uses `max(|a|, |n|, floor)` as
    /// denominator so that near-zero entries are compared absolutely.
    pub fn check(
        problem: &Problem,
        params: &ModelParams,
        rng: &mut ChaCha8Rng,
        samples: usize,
        step: f64,
        floor: f64,
    ) -> FdResult {
        let mg = MessageGraph::new(&problem.graph, params.wiring.channels);
        let analytic = problem.gradients(params, &mg);
        let grads: Vec<(String, Vec<f64>)> = analytic
            .tensors()
            .into_iter()
            .map(|(name, _, d)| (name, d.to_vec()))
            .collect();
        let coords: Vec<(usize, usize)> = grads
            .iter()
            .enumerate()
            .flat_map(|(t, (_, d))| (0..d.len()).map(move |k| (t, k)))
            .collect();
        let mut worst = (0.0f64, String::new());
        let mut checked = 0;
        let picked = rand::seq::index::sample(rng, coords.len(), samples.min(coords.len()));
        for idx in picked.iter() {
            let (t, k) = coords[idx];
            let mut plus = params.clone();
            plus.tensors_mut()[t].2[k] += step;
            let mut minus = params.clone();
            minus.tensors_mut()[t].2[k] -= step;
            let numeric = (problem.loss(&plus, &mg) - problem.loss(&minus, &mg)) / (2.0 * step);
            let a = grads[t].1[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            checked += 1;
            if rel > worst.0 {
                worst = (
                    rel,
                    format!("{}[{k}] analytic={a:e} numeric={numeric:e}", grads[t].0),
                );
            }
        }
        FdResult {
            checked,
            max_rel_err: worst.0,
            worst: worst.1,
        }
    }
}
