//! Weighted BCE plus link-sign loss, stratified splits, and the Adam trainer.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluation::{auc_roc, macro_f1, threshold, DECISION_THRESHOLD};
use crate::features::FeatureMatrix;
use crate::graph::{Sign, SignedGraph};
use crate::labeling::LabelSet;
use crate::model::{
    self, sigmoid, ForwardTrace, LossGrads, MessageGraph, Mode, ModelConfig, ModelParams,
    TensorKind, Wiring,
};

/// Each class needs this many labeled nodes for a stratified split.
pub const MIN_PER_CLASS: usize = 10;

/// Validation AUC must rise by more than this to reset patience.
pub const MIN_IMPROVEMENT: f64 = 1e-4;

/// Training aborts once the loss exceeds its first-epoch value by this factor.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Minority class weight: fixed, or derived from the train split.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum FraudWeight {
    #[default]
    Auto,
    Fixed(f64),
}

impl fmt::Display for FraudWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FraudWeight::Auto => f.write_str("auto"),
            FraudWeight::Fixed(w) => write!(f, "{w}"),
        }
    }
}

impl FromStr for FraudWeight {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(FraudWeight::Auto);
        }
        s.parse::<f64>()
            .map(FraudWeight::Fixed)
            .map_err(|_| Error::Config(format!("w_fraud must be \"auto\" or a number, got {s:?}")))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NumberOrWord {
    Number(f64),
    Word(String),
}

impl Serialize for FraudWeight {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            FraudWeight::Auto => s.serialize_str("auto"),
            FraudWeight::Fixed(w) => s.serialize_f64(*w),
        }
    }
}

impl<'de> Deserialize<'de> for FraudWeight {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match NumberOrWord::deserialize(d)? {
            NumberOrWord::Number(w) => Ok(FraudWeight::Fixed(w)),
            NumberOrWord::Word(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Edges per epoch for the link term: every eligible edge or a fixed sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinkSample {
    #[default]
    All,
    Count(usize),
}

impl Serialize for LinkSample {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            LinkSample::All => s.serialize_str("all"),
            LinkSample::Count(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for LinkSample {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match NumberOrWord::deserialize(d)? {
            NumberOrWord::Word(s) if s == "all" => Ok(LinkSample::All),
            NumberOrWord::Number(x) if x >= 1.0 && x.fract() == 0.0 && x < 1e15 => {
                Ok(LinkSample::Count(x as usize))
            }
            _ => Err(serde::de::Error::custom(
                "link_sample_size must be \"all\" or a positive integer",
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda: f64,
    pub w_fraud: FraudWeight,
    pub link_sample_size: LinkSample,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.1,
            w_fraud: FraudWeight::Auto,
            link_sample_size: LinkSample::All,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda {} must be finite and >= 0",
                self.lambda
            )));
        }
        if let FraudWeight::Fixed(w) = self.w_fraud {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("w_fraud {w} must be finite and > 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Train, validation and test fractions.
    pub split_fractions: [f64; 3],
    pub split_seed: u64,
    pub model_seeds: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            weight_decay: 5e-4,
            max_epochs: 2000,
            patience: 20,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            split_fractions: [0.70, 0.15, 0.15],
            split_seed: 0,
            model_seeds: vec![0, 1, 2],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.split_fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.split_fractions.iter().any(|&f| f.is_nan() || f <= 0.0)
        {
            return Err(Error::Config(format!(
                "split_fractions {:?} must be positive and sum to 1",
                self.split_fractions
            )));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr {} must be finite and > 0",
                self.lr
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be finite and >= 0".into()));
        }
        for (name, b) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} {b} not in [0, 1)")));
            }
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return Err(Error::Config("adam_eps must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Split membership of every node; unlabeled nodes have none.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    assignment: Vec<Option<Split>>,
}

impl SplitAssignment {
    pub fn from_assignment(assignment: Vec<Option<Split>>) -> Self {
        SplitAssignment { assignment }
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn get(&self, node: usize) -> Option<Split> {
        self.assignment[node]
    }

    pub fn assignment(&self) -> &[Option<Split>] {
        &self.assignment
    }

    /// Members of `split` in ascending id order.
    pub fn nodes(&self, split: Split) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&v| self.assignment[v] == Some(split))
            .collect()
    }

    /// Hex sha256 over the per-node assignment codes.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.assignment {
            h.update([match s {
                None => 0u8,
                Some(Split::Train) => 1,
                Some(Split::Val) => 2,
                Some(Split::Test) => 3,
            }]);
        }
        hex::encode(h.finalize())
    }
}

/// Stratified shuffle split of the labeled nodes. Per class, the shuffled
/// list is cut at `round(n·f_train)` and `round(n·f_val)`; the remainder is test.
pub fn make_splits(labels: &LabelSet, cfg: &TrainConfig) -> Result<SplitAssignment> {
    cfg.validate()?;
    let mut assignment = vec![None; labels.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.split_seed);
    for class in [0u8, 1u8] {
        let mut members: Vec<usize> = labels
            .labeled()
            .into_iter()
            .filter(|&(_, y)| y == class)
            .map(|(v, _)| v)
            .collect();
        if members.len() < MIN_PER_CLASS {
            return Err(Error::InsufficientLabels(format!(
                "class {} has {} labeled nodes, need at least {MIN_PER_CLASS}",
                if class == 1 { "fraud" } else { "benign" },
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let n = members.len() as f64;
        let n_train = (n * cfg.split_fractions[0]).round() as usize;
        let n_val = ((n * cfg.split_fractions[1]).round() as usize).min(members.len() - n_train);
        for (i, &v) in members.iter().enumerate() {
            assignment[v] = Some(if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            });
        }
    }
    Ok(SplitAssignment { assignment })
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Benign-to-fraud count ratio over the train split.
pub fn auto_fraud_weight(labels: &LabelSet, split: &SplitAssignment) -> Result<f64> {
    let (mut benign, mut fraud) = (0usize, 0usize);
    for v in split.nodes(Split::Train) {
        match labels.label(v).class() {
            Some(0) => benign += 1,
            Some(1) => fraud += 1,
            _ => {}
        }
    }
    if benign == 0 || fraud == 0 {
        return Err(Error::InsufficientLabels(format!(
            "train split has {benign} benign and {fraud} fraud nodes; both classes are required"
        )));
    }
    Ok(benign as f64 / fraud as f64)
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub total: f64,
    pub wbce: f64,
    pub link: f64,
    pub grads: LossGrads,
}

/// Pre-resolved loss inputs for one split.
#[derive(Debug, Clone)]
pub struct LossContext {
    /// `(node, class)` for train nodes.
    train: Vec<(usize, u8)>,
    /// `(source, target, 1 if positive)` for edges without a test endpoint.
    link_edges: Vec<(usize, usize, f64)>,
    pub lambda: f64,
    pub w_fraud: f64,
    pub sample: LinkSample,
    num_nodes: usize,
}

impl LossContext {
    pub fn new(
        graph: &SignedGraph,
        labels: &LabelSet,
        split: &SplitAssignment,
        cfg: &LossConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if labels.len() != graph.num_nodes() || split.len() != graph.num_nodes() {
            return Err(Error::Shape("labels, split and graph sizes differ".into()));
        }
        let auto = auto_fraud_weight(labels, split)?;
        let w_fraud = match cfg.w_fraud {
            FraudWeight::Auto => auto,
            FraudWeight::Fixed(w) => w,
        };
        let train = split
            .nodes(Split::Train)
            .into_iter()
            .filter_map(|v| labels.label(v).class().map(|c| (v, c)))
            .collect();
        let link_edges = graph
            .edges()
            .iter()
            .filter(|e| {
                split.get(e.source) != Some(Split::Test) && split.get(e.target) != Some(Split::Test)
            })
            .map(|e| {
                (
                    e.source,
                    e.target,
                    if e.sign() == Sign::Positive { 1.0 } else { 0.0 },
                )
            })
            .collect();
        Ok(LossContext {
            train,
            link_edges,
            lambda: cfg.lambda,
            w_fraud,
            sample: cfg.link_sample_size,
            num_nodes: graph.num_nodes(),
        })
    }

    pub fn num_link_edges(&self) -> usize {
        self.link_edges.len()
    }

    /// Loss and upstream gradients. The link sample, if any, is drawn from `rng`.
    pub fn evaluate(&self, trace: &ForwardTrace, rng: &mut ChaCha8Rng) -> Result<LossOutput> {
        let n = self.num_nodes;
        if trace.logits.len() != n || trace.z.nrows() != n {
            return Err(Error::Shape("trace does not match the loss context".into()));
        }
        let mut grads = LossGrads::zeros(n);
        let mut wbce = 0.0;
        for &(v, y) in &self.train {
            let s = trace.logits[v];
            if y == 1 {
                wbce += self.w_fraud * softplus(-s);
                grads.d_logits[v] += self.w_fraud * (sigmoid(s) - 1.0);
            } else {
                wbce += softplus(s);
                grads.d_logits[v] += sigmoid(s);
            }
        }

        let picked: Vec<usize> = match self.sample {
            LinkSample::Count(m) if m < self.link_edges.len() => {
                let mut idx = rand::seq::index::sample(rng, self.link_edges.len(), m).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..self.link_edges.len()).collect(),
        };
        let mut link = 0.0;
        if !picked.is_empty() {
            let m = picked.len() as f64;
            let mut dz = Array2::<f64>::zeros(trace.z.dim());
            for &k in &picked {
                let (i, j, b) = self.link_edges[k];
                let t = trace.z.row(i).dot(&trace.z.row(j));
                link += b * softplus(-t) + (1.0 - b) * softplus(t);
                let g = self.lambda * (sigmoid(t) - b) / m;
                if g != 0.0 {
                    let zi = trace.z.row(i).to_owned();
                    let zj = trace.z.row(j).to_owned();
                    dz.row_mut(i).scaled_add(g, &zj);
                    dz.row_mut(j).scaled_add(g, &zi);
                }
            }
            link /= m;
            if self.lambda != 0.0 {
                grads.d_z = Some(dz);
            }
        }
        Ok(LossOutput {
            total: wbce + self.lambda * link,
            wbce,
            link,
            grads,
        })
    }
}

/// One-shot loss over all eligible edges (a sampled link term uses seed 0).
pub fn compute_loss(
    trace: &ForwardTrace,
    labels: &LabelSet,
    split: &SplitAssignment,
    graph: &SignedGraph,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    let ctx = LossContext::new(graph, labels, split, cfg)?;
    ctx.evaluate(trace, &mut ChaCha8Rng::seed_from_u64(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub wbce: f64,
    pub link: f64,
    pub total: f64,
    pub val_auc: f64,
    pub val_f1: f64,
    pub lr: f64,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub w_fraud: f64,
    pub stopped_early: bool,
}

impl TrainLog {
    /// One JSON object per line.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Every record with the wall-clock field cleared.
    pub fn without_timing(&self) -> Vec<EpochRecord> {
        self.records
            .iter()
            .map(|r| EpochRecord {
                elapsed_ms: 0,
                ..r.clone()
            })
            .collect()
    }
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    fn new(params: &ModelParams) -> Self {
        let sizes: Vec<usize> = params.tensors().iter().map(|(_, _, d)| d.len()).collect();
        Adam {
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut ModelParams, grads: &ModelParams, cfg: &TrainConfig) {
        self.step += 1;
        let bc1 = 1.0 - cfg.adam_beta1.powi(self.step);
        let bc2 = 1.0 - cfg.adam_beta2.powi(self.step);
        let grad_tensors = grads.tensors();
        for (t, (_, kind, p)) in params.tensors_mut().into_iter().enumerate() {
            let g = grad_tensors[t].2;
            let decay = if kind == TensorKind::Attention {
                0.0
            } else {
                cfg.weight_decay
            };
            let (m, v) = (&mut self.m[t], &mut self.v[t]);
            for k in 0..p.len() {
                m[k] = cfg.adam_beta1 * m[k] + (1.0 - cfg.adam_beta1) * g[k];
                v[k] = cfg.adam_beta2 * v[k] + (1.0 - cfg.adam_beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.adam_eps) + decay * p[k]);
            }
        }
    }
}

fn dropout_seed(model_seed: u64, epoch: usize) -> u64 {
    model_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((epoch as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9))
}

/// Validation AUC and Macro-F1 from eval-mode probabilities.
pub fn split_metrics(
    probs: &[f64],
    labels: &LabelSet,
    split: &SplitAssignment,
    which: Split,
) -> Result<(f64, f64)> {
    let (scores, ys): (Vec<f64>, Vec<u8>) = split
        .nodes(which)
        .into_iter()
        .filter_map(|v| labels.label(v).class().map(|c| (probs[v], c)))
        .unzip();
    let auc = auc_roc(&scores, &ys)?;
    let f1 = macro_f1(&threshold(&scores, DECISION_THRESHOLD), &ys);
    Ok((auc, f1))
}

/// Full dual-channel model on a fresh stratified split.
pub fn train(
    graph: &SignedGraph,
    features: &FeatureMatrix,
    labels: &LabelSet,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    loss_cfg: &LossConfig,
) -> Result<(ModelParams, TrainLog)> {
    let split = make_splits(labels, train_cfg)?;
    train_with_split(
        graph,
        features,
        labels,
        model_cfg,
        &Wiring::default(),
        train_cfg,
        loss_cfg,
        &split,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn train_with_split(
    graph: &SignedGraph,
    features: &FeatureMatrix,
    labels: &LabelSet,
    model_cfg: &ModelConfig,
    wiring: &Wiring,
    train_cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    split: &SplitAssignment,
) -> Result<(ModelParams, TrainLog)> {
    train_cfg.validate()?;
    model_cfg.validate()?;
    if features.rows() != graph.num_nodes() {
        return Err(Error::Shape(format!(
            "{} feature rows for {} nodes",
            features.rows(),
            graph.num_nodes()
        )));
    }
    let ctx = LossContext::new(graph, labels, split, loss_cfg)?;
    let mg = MessageGraph::new(graph, wiring.channels);
    let x = features.data();
    let mut params = ModelParams::init(model_cfg, wiring, features.dim())?;
    let mut adam = Adam::new(&params);
    let mut link_rng = ChaCha8Rng::seed_from_u64(model_cfg.seed ^ 0x11c4_5a3e);
    let started = Instant::now();

    let mut records = Vec::new();
    let mut best: Option<(usize, f64, ModelParams)> = None;
    let mut stopped_early = false;
    let mut first_loss: Option<f64> = None;

    for epoch in 0..train_cfg.max_epochs {
        let trace = model::forward(
            &params,
            &mg,
            x,
            Mode::Train {
                dropout_seed: dropout_seed(model_cfg.seed, epoch),
            },
        )
        .map_err(|e| diverged(epoch, format!("forward pass failed: {e}")))?;
        let loss = ctx.evaluate(&trace, &mut link_rng)?;
        if !loss.total.is_finite() {
            return Err(diverged(
                epoch,
                format!(
                    "loss is not finite (wbce={}, link={}, total={})",
                    loss.wbce, loss.link, loss.total
                ),
            ));
        }
        let reference = *first_loss.get_or_insert(loss.total);
        if loss.total > DIVERGENCE_FACTOR * reference.max(1e-12) {
            return Err(diverged(
                epoch,
                format!(
                    "loss exploded from {reference:e} to {:e} (wbce={:e}, link={:e})",
                    loss.total, loss.wbce, loss.link
                ),
            ));
        }
        let grads = model::backward(&params, &mg, &trace, &loss.grads)?;
        adam.update(&mut params, &grads, train_cfg);
        if !params.is_finite() {
            return Err(diverged(
                epoch,
                "parameters became non-finite after the update".into(),
            ));
        }

        let probs = model::predict(&params, &mg, x)
            .map_err(|e| diverged(epoch, format!("eval pass failed: {e}")))?;
        let (val_auc, val_f1) =
            split_metrics(probs.as_slice().unwrap(), labels, split, Split::Val)?;
        records.push(EpochRecord {
            epoch,
            wbce: loss.wbce,
            link: loss.link,
            total: loss.total,
            val_auc,
            val_f1,
            lr: train_cfg.lr,
            elapsed_ms: started.elapsed().as_millis() as u64,
        });
        log::debug!(
            "epoch {epoch}: total={:.6} val_auc={val_auc:.4}",
            loss.total
        );

        match &best {
            Some((_, best_auc, _)) if val_auc <= best_auc + MIN_IMPROVEMENT => {}
            _ => best = Some((epoch, val_auc, params.clone())),
        }
        let best_epoch = best.as_ref().map(|b| b.0).unwrap_or(0);
        if epoch - best_epoch >= train_cfg.patience {
            stopped_early = true;
            break;
        }
    }

    let (best_epoch, best_val_auc, best_params) =
        best.ok_or_else(|| Error::Config("max_epochs must be at least 1".into()))?;
    Ok((
        best_params,
        TrainLog {
            records,
            best_epoch,
            best_val_auc,
            w_fraud: ctx.w_fraud,
            stopped_early,
        },
    ))
}

fn diverged(epoch: usize, message: String) -> Error {
    Error::Diverged { epoch, message }
}
