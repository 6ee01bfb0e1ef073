//! Reference detectors: lowest-average-rating threshold, BadRank, and an
//! unsigned GCN built from the shared model code.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{assemble_features, rating_moments, FeatureMatrix, SvdConfig};
use crate::graph::{Direction, Sign, SignedGraph};
use crate::labeling::LabelSet;
use crate::model::{self, MessageGraph, ModelConfig, ModelParams, Wiring};
use crate::training::{self, LossConfig, SplitAssignment, TrainConfig, TrainLog};

/// Per-node anomaly scores, higher is more anomalous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineScore {
    pub method: String,
    pub scores: Vec<f64>,
    /// Binary decisions, where the method defines them.
    pub flags: Option<Vec<bool>>,
    /// `key=value` description of the parameters used.
    pub params: String,
}

impl BaselineScore {
    /// `node_id,score,flag,method`; the flag column is empty when undefined.
    pub fn to_csv(&self, graph: &SignedGraph) -> String {
        let mut out = String::from("node_id,score,flag,method\n");
        for (v, s) in self.scores.iter().enumerate() {
            let flag = match &self.flags {
                Some(f) => u8::from(f[v]).to_string(),
                None => String::new(),
            };
            let _ = writeln!(out, "{},{s},{flag},{}", graph.raw_id(v), self.method);
        }
        out
    }
}

/// Scores nodes by their negated mean incoming rating and flags the lowest
/// `pct` of rated nodes. Ties go to the node with more in-edges, then to the
/// smaller id.
pub fn lowest_pct_heuristic(graph: &SignedGraph, pct: f64) -> Result<BaselineScore> {
    if !(pct > 0.0 && pct < 1.0) {
        return Err(Error::Config(format!("pct {pct} not in (0, 1)")));
    }
    let n = graph.num_nodes();
    let mu = rating_moments(graph).column(0).to_vec();
    let in_degree: Vec<usize> = (0..n)
        .map(|v| {
            graph.degree(v, Sign::Positive, Direction::In)
                + graph.degree(v, Sign::Negative, Direction::In)
        })
        .collect();
    let mut rated: Vec<usize> = (0..n).filter(|&v| in_degree[v] > 0).collect();
    rated.sort_by(|&a, &b| {
        mu[a]
            .total_cmp(&mu[b])
            .then(in_degree[b].cmp(&in_degree[a]))
            .then(a.cmp(&b))
    });
    let count = ((pct * rated.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut flags = vec![false; n];
    for &v in rated.iter().take(count) {
        flags[v] = true;
    }
    let scores = (0..n)
        .map(|v| if in_degree[v] > 0 { -mu[v] } else { 0.0 })
        .collect();
    Ok(BaselineScore {
        method: format!("lowest_{}pct", (pct * 100.0).round()),
        scores,
        flags: Some(flags),
        params: format!("pct={pct}"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BadRankConfig {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Fraction of nodes flagged, highest scores first.
    pub flag_pct: f64,
}

impl Default for BadRankConfig {
    fn default() -> Self {
        BadRankConfig {
            damping: 0.85,
            tol: 1e-10,
            max_iter: 200,
            flag_pct: 0.05,
        }
    }
}

/// Badness flows from a rater to the targets it rated negatively, with
/// transition mass proportional to `|w̃|`. Teleport is uniform over nodes that
/// received a negative rating; raters with no negative out-edges spread their
/// mass over all nodes.
pub fn badrank(graph: &SignedGraph, cfg: &BadRankConfig) -> Result<BaselineScore> {
    if graph.count_sign(Sign::Negative) == 0 {
        return Err(Error::NoTrustStructure(
            "graph has no negative edges".into(),
        ));
    }
    if !(cfg.flag_pct > 0.0 && cfg.flag_pct < 1.0) {
        return Err(Error::Config(format!(
            "flag_pct {} not in (0, 1)",
            cfg.flag_pct
        )));
    }
    if !(0.0..1.0).contains(&cfg.damping) {
        return Err(Error::Config(format!(
            "damping {} not in [0, 1)",
            cfg.damping
        )));
    }
    let n = graph.num_nodes();
    let d = cfg.damping;
    let mut teleport = vec![0.0; n];
    for (v, t) in teleport.iter_mut().enumerate() {
        if graph.degree(v, Sign::Negative, Direction::In) > 0 {
            *t = 1.0;
        }
    }
    let targets: f64 = teleport.iter().sum();
    teleport.iter_mut().for_each(|x| *x /= targets);
    let out_weight: Vec<f64> = (0..n)
        .map(|v| {
            graph
                .incident(v, Sign::Negative, Direction::Out)
                .iter()
                .map(|&(_, e)| graph.edges()[e].weight().abs())
                .sum()
        })
        .collect();

    let uniform = 1.0 / n as f64;
    let mut b = teleport.clone();
    let mut next = vec![0.0; n];
    for _ in 0..cfg.max_iter {
        let dangling: f64 = (0..n).filter(|&v| out_weight[v] == 0.0).map(|v| b[v]).sum();
        for v in 0..n {
            next[v] = (1.0 - d) * teleport[v] + d * dangling * uniform;
        }
        for v in 0..n {
            if out_weight[v] == 0.0 {
                continue;
            }
            let share = d * b[v] / out_weight[v];
            for &(t, e) in graph.incident(v, Sign::Negative, Direction::Out) {
                next[t] += share * graph.edges()[e].weight().abs();
            }
        }
        let delta: f64 = b.iter().zip(&next).map(|(x, y)| (x - y).abs()).sum();
        std::mem::swap(&mut b, &mut next);
        if delta < cfg.tol {
            break;
        }
    }
    let total: f64 = b.iter().sum();
    b.iter_mut().for_each(|x| *x /= total);
    let flags = flag_top_fraction(&b, cfg.flag_pct);
    Ok(BaselineScore {
        method: "badrank".into(),
        scores: b,
        flags: Some(flags),
        params: format!(
            "damping={} tol={} max_iter={} flag_pct={}",
            cfg.damping, cfg.tol, cfg.max_iter, cfg.flag_pct
        ),
    })
}

/// Flags the `⌈pct·N⌉` highest scores, ties to the smaller id.
pub fn flag_top_fraction(scores: &[f64], pct: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let count = ((pct * scores.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut flags = vec![false; scores.len()];
    for &v in order.iter().take(count) {
        flags[v] = true;
    }
    flags
}

/// Structural features computed on the magnitude graph, so no sign
/// information reaches the unsigned model.
pub fn unsigned_features(graph: &SignedGraph, cfg: &SvdConfig) -> Result<FeatureMatrix> {
    assemble_features(&graph.unsigned(), cfg)
}

#[derive(Debug, Clone)]
pub struct GcnOutcome {
    pub params: ModelParams,
    pub log: TrainLog,
    pub score: BaselineScore,
}

/// One channel over every edge with `|w̃|` weights and mean pooling, trained
/// with the same loss and optimizer as the full model.
#[allow(clippy::too_many_arguments)]
pub fn unsigned_gcn(
    graph: &SignedGraph,
    features: &FeatureMatrix,
    labels: &LabelSet,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    split: &SplitAssignment,
) -> Result<GcnOutcome> {
    let wiring = Wiring::unsigned_gcn();
    let (params, log) = training::train_with_split(
        graph, features, labels, model_cfg, &wiring, train_cfg, loss_cfg, split,
    )?;
    let mg = MessageGraph::new(graph, wiring.channels);
    let probs = model::predict(&params, &mg, features.data())?;
    let flags = probs.iter().map(|&p| p >= 0.5).collect();
    Ok(GcnOutcome {
        score: BaselineScore {
            method: "gcn".into(),
            scores: probs.to_vec(),
            flags: Some(flags),
            params: format!(
                "seed={} hidden_dim={}",
                model_cfg.seed, model_cfg.hidden_dim
            ),
        },
        params,
        log,
    })
}
