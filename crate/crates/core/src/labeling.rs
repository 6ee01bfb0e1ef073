//! Ground-truth generation by recursive web-of-trust propagation.
//!
//! Seeds are the top-k nodes by PageRank on the positive subgraph. Benign is
//! the least fixpoint of "rated at least 0.5 by a Benign node" starting from
//! the seeds; Fraud is every non-Benign target of a rating at most -0.5
//! issued by a Benign node. Everything else is Unlabeled.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Direction, Sign, SignedGraph};

pub const BENIGN_THRESHOLD: f64 = 0.5;
pub const FRAUD_THRESHOLD: f64 = -0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Benign,
    Fraud,
    Unlabeled,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Benign => "benign",
            Label::Fraud => "fraud",
            Label::Unlabeled => "unlabeled",
        }
    }

    /// 0 for Benign, 1 for Fraud.
    pub fn class(self) -> Option<u8> {
        match self {
            Label::Benign => Some(0),
            Label::Fraud => Some(1),
            Label::Unlabeled => None,
        }
    }

    fn parse(text: &str) -> Option<Label> {
        match text {
            "benign" => Some(Label::Benign),
            "fraud" => Some(Label::Fraud),
            "unlabeled" => Some(Label::Unlabeled),
            _ => None,
        }
    }
}

/// What to do with a node that is both Benign and the target of a strong
/// negative rating from a Benign node.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictPolicy {
    #[default]
    BenignWins,
    FraudWins,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedConfig {
    pub k: usize,
    pub damping: f64,
    pub pr_tol: f64,
    pub pr_max_iter: usize,
    pub conflict: ConflictPolicy,
}

impl Default for SeedConfig {
    fn default() -> Self {
        SeedConfig {
            k: 10,
            damping: 0.85,
            pr_tol: 1e-10,
            pr_max_iter: 200,
            conflict: ConflictPolicy::BenignWins,
        }
    }
}

impl SeedConfig {
    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        if self.k == 0 || self.k > num_nodes {
            return Err(Error::Config(format!(
                "seed count k={} must be in 1..={num_nodes}",
                self.k
            )));
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(Error::Config(format!(
                "damping {} must be in (0, 1)",
                self.damping
            )));
        }
        if self.pr_tol.is_nan() || self.pr_tol <= 0.0 {
            return Err(Error::Config("pr_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Who labeled a node and how far it sits from the seeds. Seeds have no labeler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Provenance {
    pub labeler: Option<usize>,
    pub weight: f64,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    labels: Vec<Label>,
    seeds: Vec<usize>,
    provenance: Vec<Option<Provenance>>,
}

impl LabelSet {
    pub fn unlabeled(num_nodes: usize) -> Self {
        LabelSet {
            labels: vec![Label::Unlabeled; num_nodes],
            seeds: Vec::new(),
            provenance: vec![None; num_nodes],
        }
    }

    /// Builds a label set directly; provenance is left empty.
    pub fn from_labels(labels: Vec<Label>) -> Self {
        let n = labels.len();
        LabelSet {
            labels,
            seeds: Vec::new(),
            provenance: vec![None; n],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn label(&self, node: usize) -> Label {
        self.labels[node]
    }

    /// Seeds in ascending id order.
    pub fn seeds(&self) -> &[usize] {
        &self.seeds
    }

    pub fn provenance(&self, node: usize) -> Option<Provenance> {
        self.provenance[node]
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Labeled nodes as `(node, class)` pairs in ascending node order.
    pub fn labeled(&self) -> Vec<(usize, u8)> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.class().map(|c| (i, c)))
            .collect()
    }

    /// Returns a copy with nodes relabeled so that old `v` becomes `perm[v]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<LabelSet> {
        crate::graph::check_permutation(perm, self.labels.len())?;
        let mut out = LabelSet::unlabeled(self.labels.len());
        for (old, &new) in perm.iter().enumerate() {
            out.labels[new] = self.labels[old];
            out.provenance[new] = self.provenance[old].map(|p| Provenance {
                labeler: p.labeler.map(|l| perm[l]),
                ..p
            });
        }
        out.seeds = self.seeds.iter().map(|&s| perm[s]).collect();
        out.seeds.sort_unstable();
        Ok(out)
    }
}

/// Weighted PageRank on the positive subgraph with uniform teleport.
///
/// Transition probabilities are proportional to normalized rating weight.
/// Dangling nodes spread their mass uniformly.
pub fn pagerank_positive(graph: &SignedGraph, cfg: &SeedConfig) -> Result<Vec<f64>> {
    let n = graph.num_nodes();
    if graph.count_sign(Sign::Positive) == 0 {
        return Err(Error::NoTrustStructure(
            "positive subgraph has no edges".into(),
        ));
    }
    let d = cfg.damping;
    let out_weight: Vec<f64> = (0..n)
        .map(|v| {
            graph
                .incident(v, Sign::Positive, Direction::Out)
                .iter()
                .map(|&(_, e)| graph.edges()[e].weight())
                .sum()
        })
        .collect();

    let uniform = 1.0 / n as f64;
    let mut rank = vec![uniform; n];
    let mut next = vec![0.0; n];
    for _ in 0..cfg.pr_max_iter {
        let dangling: f64 = (0..n)
            .filter(|&v| out_weight[v] == 0.0)
            .map(|v| rank[v])
            .sum();
        let base = (1.0 - d) * uniform + d * dangling * uniform;
        next.iter_mut().for_each(|x| *x = base);
        for v in 0..n {
            if out_weight[v] == 0.0 {
                continue;
            }
            let share = d * rank[v] / out_weight[v];
            for &(t, e) in graph.incident(v, Sign::Positive, Direction::Out) {
                next[t] += share * graph.edges()[e].weight();
            }
        }
        let delta: f64 = rank.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut rank, &mut next);
        if delta < cfg.pr_tol {
            break;
        }
    }
    let total: f64 = rank.iter().sum();
    rank.iter_mut().for_each(|x| *x /= total);
    Ok(rank)
}

/// Top-k node ids by score, highest first, ties to the smaller id.
pub fn select_seeds(scores: &[f64], cfg: &SeedConfig) -> Result<Vec<usize>> {
    if cfg.k > scores.len() {
        return Err(Error::Config(format!(
            "seed count k={} exceeds node count {}",
            cfg.k,
            scores.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Config(format!("score of node {i} is not finite")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(cfg.k);
    Ok(order)
}

pub fn propagate_labels(graph: &SignedGraph, seeds: &[usize]) -> Result<LabelSet> {
    propagate_labels_with(graph, seeds, ConflictPolicy::BenignWins)
}

/// Benign breadth-first propagation followed by one Fraud pass.
///
/// The result does not depend on seed order: seeds are deduplicated and the
/// frontier is processed in ascending id order, so each Benign node's
/// labeler is its smallest-id Benign rater on the previous level.
pub fn propagate_labels_with(
    graph: &SignedGraph,
    seeds: &[usize],
    policy: ConflictPolicy,
) -> Result<LabelSet> {
    let n = graph.num_nodes();
    if seeds.is_empty() {
        return Err(Error::Config("seed list is empty".into()));
    }
    if let Some(&bad) = seeds.iter().find(|&&s| s >= n) {
        return Err(Error::NodeIndex {
            node: bad,
            num_nodes: n,
        });
    }
    let mut set = LabelSet::unlabeled(n);
    let seed_set: BTreeSet<usize> = seeds.iter().copied().collect();
    set.seeds = seed_set.iter().copied().collect();

    let mut frontier = set.seeds.clone();
    for &s in &frontier {
        set.labels[s] = Label::Benign;
        set.provenance[s] = Some(Provenance {
            labeler: None,
            weight: 0.0,
            depth: 0,
        });
    }
    let mut depth = 0;
    while !frontier.is_empty() {
        depth += 1;
        let mut next = Vec::new();
        for &u in &frontier {
            for &(v, e) in graph.incident(u, Sign::Positive, Direction::Out) {
                let w = graph.edges()[e].weight();
                if w >= BENIGN_THRESHOLD && set.labels[v] == Label::Unlabeled {
                    set.labels[v] = Label::Benign;
                    set.provenance[v] = Some(Provenance {
                        labeler: Some(u),
                        weight: w,
                        depth,
                    });
                    next.push(v);
                }
            }
        }
        next.sort_unstable();
        frontier = next;
    }

    let benign: Vec<usize> = (0..n).filter(|&v| set.labels[v] == Label::Benign).collect();
    for &u in &benign {
        let rater_depth = set.provenance[u].map_or(0, |p| p.depth);
        for &(v, e) in graph.incident(u, Sign::Negative, Direction::Out) {
            let w = graph.edges()[e].weight();
            if w > FRAUD_THRESHOLD {
                continue;
            }
            let eligible = match set.labels[v] {
                Label::Unlabeled => true,
                Label::Benign => policy == ConflictPolicy::FraudWins && !seed_set.contains(&v),
                Label::Fraud => false,
            };
            if eligible {
                set.labels[v] = Label::Fraud;
                set.provenance[v] = Some(Provenance {
                    labeler: Some(u),
                    weight: w,
                    depth: rater_depth + 1,
                });
            }
        }
    }
    Ok(set)
}

/// PageRank seeds followed by propagation.
pub fn generate_labels(graph: &SignedGraph, cfg: &SeedConfig) -> Result<(Vec<usize>, LabelSet)> {
    cfg.validate(graph.num_nodes())?;
    let scores = pagerank_positive(graph, cfg)?;
    let seeds = select_seeds(&scores, cfg)?;
    let labels = propagate_labels_with(graph, &seeds, cfg.conflict)?;
    Ok((seeds, labels))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub benign: usize,
    pub fraud: usize,
    pub unlabeled: usize,
    /// Fraud share among labeled nodes.
    pub fraud_ratio: f64,
    pub max_depth: usize,
}

impl LabelReport {
    pub fn render(&self) -> String {
        format!(
            "benign={}\nfraud={}\nunlabeled={}\nfraud_ratio={:.6}\nmax_depth={}\n",
            self.benign, self.fraud, self.unlabeled, self.fraud_ratio, self.max_depth
        )
    }
}

pub fn label_report(labels: &LabelSet) -> LabelReport {
    let benign = labels.count(Label::Benign);
    let fraud = labels.count(Label::Fraud);
    let labeled = benign + fraud;
    LabelReport {
        benign,
        fraud,
        unlabeled: labels.count(Label::Unlabeled),
        fraud_ratio: if labeled == 0 {
            0.0
        } else {
            fraud as f64 / labeled as f64
        },
        max_depth: labels
            .provenance
            .iter()
            .flatten()
            .map(|p| p.depth)
            .max()
            .unwrap_or(0),
    }
}

pub const LABEL_CSV_HEADER: &str = "node_id,label,labeler,weight,depth";

/// `node_id,label,labeler,weight,depth` with original node ids.
pub fn labels_to_csv(graph: &SignedGraph, labels: &LabelSet) -> String {
    let mut out = String::new();
    out.push_str(LABEL_CSV_HEADER);
    out.push('\n');
    for v in 0..labels.len() {
        let _ = write!(out, "{},{},", graph.raw_id(v), labels.labels[v].as_str());
        match labels.provenance[v] {
            Some(p) => {
                let labeler = p
                    .labeler
                    .map(|l| graph.raw_id(l).to_string())
                    .unwrap_or_default();
                let weight = if p.labeler.is_some() {
                    p.weight.to_string()
                } else {
                    String::new()
                };
                let _ = writeln!(out, "{labeler},{weight},{}", p.depth);
            }
            None => out.push_str(",,\n"),
        }
    }
    out
}

/// Inverse of [`labels_to_csv`]. Every graph node must appear exactly once.
pub fn parse_labels_csv(text: &str, graph: &SignedGraph) -> Result<LabelSet> {
    let index: HashMap<i64, usize> = graph.raw_id_index();
    let n = graph.num_nodes();
    let mut set = LabelSet::unlabeled(n);
    let mut seen = vec![false; n];
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r').trim() == LABEL_CSV_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header {LABEL_CSV_HEADER:?}"),
            })
        }
    }
    let perr = |line: usize, message: String| Error::Parse { line, message };
    let node_of = |text: &str, line: usize| -> Result<usize> {
        let raw: i64 = text
            .parse()
            .map_err(|_| perr(line, format!("bad node id {text:?}")))?;
        index
            .get(&raw)
            .copied()
            .ok_or_else(|| perr(line, format!("node {raw} is not in the graph")))
    };
    for (idx, row) in lines {
        let line = idx + 1;
        let row = row.trim_end_matches('\r').trim();
        if row.is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(perr(
                line,
                format!("expected 5 fields, found {}", fields.len()),
            ));
        }
        let v = node_of(fields[0], line)?;
        if std::mem::replace(&mut seen[v], true) {
            return Err(perr(line, format!("node {} listed twice", fields[0])));
        }
        let label = Label::parse(fields[1])
            .ok_or_else(|| perr(line, format!("unknown label {:?}", fields[1])))?;
        set.labels[v] = label;
        if label == Label::Unlabeled {
            if fields[2..].iter().any(|f| !f.is_empty()) {
                return Err(perr(line, "unlabeled row carries provenance".into()));
            }
            continue;
        }
        let depth: usize = fields[4]
            .parse()
            .map_err(|_| perr(line, format!("bad depth {:?}", fields[4])))?;
        if fields[2].is_empty() {
            if label != Label::Benign || depth != 0 || !fields[3].is_empty() {
                return Err(perr(
                    line,
                    "only depth-0 benign seeds may lack a labeler".into(),
                ));
            }
            set.seeds.push(v);
            set.provenance[v] = Some(Provenance {
                labeler: None,
                weight: 0.0,
                depth: 0,
            });
        } else {
            let labeler = node_of(fields[2], line)?;
            let weight: f64 = fields[3]
                .parse()
                .ok()
                .filter(|w: &f64| w.is_finite())
                .ok_or_else(|| perr(line, format!("bad weight {:?}", fields[3])))?;
            set.provenance[v] = Some(Provenance {
                labeler: Some(labeler),
                weight,
                depth,
            });
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Validation {
            line: 0,
            message: format!("node {} missing from label file", graph.raw_id(missing)),
        });
    }
    set.seeds.sort_unstable();
    Ok(set)
}
