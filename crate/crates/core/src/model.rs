//! Dual-channel signed attention network.
//!
//! Each layer runs one message-passing channel per edge sign. A channel
//! projects the layer input with its own weight matrix, scores every
//! in-edge `j → i` with `LeakyReLU(aᵀ [W h_i ‖ W h_j ‖ w̃_ji])`, normalizes
//! the scores with a softmax over the in-neighborhood of `i` and applies
//! ELU to the attention-weighted sum of projected neighbors. Nodes without
//! in-neighbors in a channel fall back to `ELU(W h_i)`. The next layer
//! consumes the concatenated channel outputs; the last concatenation is the
//! node embedding `z`, fed to a one-hidden-layer MLP with a sigmoid output.
//!
//! Gradients are computed by hand in [`backward`], mirroring [`forward`]
//! step for step.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Direction, Sign, SignedGraph};

/// Predictions are kept inside `[PROB_GUARD, 1 - PROB_GUARD]`.
pub const PROB_GUARD: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub mlp_hidden: usize,
    pub leaky_slope: f64,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_layers: 2,
            hidden_dim: 32,
            mlp_hidden: 32,
            leaky_slope: 0.2,
            dropout_rate: 0.1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_dim == 0 || self.mlp_hidden == 0 {
            return Err(Error::Config(
                "layer count and widths must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} not in [0, 1)",
                self.dropout_rate
            )));
        }
        if !self.leaky_slope.is_finite() {
            return Err(Error::Config("leaky_slope must be finite".into()));
        }
        Ok(())
    }
}

/// Which edges feed which channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    /// Positive and negative in-edges in separate channels.
    Dual,
    /// Positive in-edges only.
    PositiveOnly,
    /// One channel over all in-edges with weights `|w̃|`.
    Unsigned,
}

impl ChannelMode {
    pub fn num_channels(self) -> usize {
        match self {
            ChannelMode::Dual => 2,
            ChannelMode::PositiveOnly | ChannelMode::Unsigned => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Wiring {
    pub channels: ChannelMode,
    /// Softmax attention when true, uniform mean pooling otherwise.
    pub attention: bool,
    /// Replace structural features with random vectors of the same width.
    pub random_features: bool,
}

impl Default for Wiring {
    fn default() -> Self {
        Wiring {
            channels: ChannelMode::Dual,
            attention: true,
            random_features: false,
        }
    }
}

impl Wiring {
    /// Single unsigned channel with mean pooling.
    pub fn unsigned_gcn() -> Self {
        Wiring {
            channels: ChannelMode::Unsigned,
            attention: false,
            random_features: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    Full,
    NoNegativeChannel,
    NoAttention,
    NoStatusFeatures,
}

impl AblationKind {
    pub const ALL: [AblationKind; 4] = [
        AblationKind::Full,
        AblationKind::NoNegativeChannel,
        AblationKind::NoAttention,
        AblationKind::NoStatusFeatures,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationKind::Full => "full",
            AblationKind::NoNegativeChannel => "no_negative_channel",
            AblationKind::NoAttention => "no_attention",
            AblationKind::NoStatusFeatures => "no_status_features",
        }
    }
}

impl fmt::Display for AblationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation kind {s:?}")))
    }
}

pub fn ablation_variant(cfg: &ModelConfig, kind: AblationKind) -> (ModelConfig, Wiring) {
    let wiring = match kind {
        AblationKind::Full => Wiring::default(),
        AblationKind::NoNegativeChannel => Wiring {
            channels: ChannelMode::PositiveOnly,
            ..Wiring::default()
        },
        AblationKind::NoAttention => Wiring {
            attention: false,
            ..Wiring::default()
        },
        AblationKind::NoStatusFeatures => Wiring {
            random_features: true,
            ..Wiring::default()
        },
    };
    (*cfg, wiring)
}

/// Parses the kind name and returns the variant wiring.
pub fn ablation_variant_named(cfg: &ModelConfig, kind: &str) -> Result<(ModelConfig, Wiring)> {
    Ok(ablation_variant(cfg, kind.parse()?))
}

/// In-edges of every node for one channel, grouped by target.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelIndex {
    offsets: Vec<usize>,
    sources: Vec<usize>,
    weights: Vec<f64>,
}

impl ChannelIndex {
    fn from_lists(lists: Vec<Vec<(usize, f64)>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut sources = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for list in lists {
            for (j, w) in list {
                sources.push(j);
                weights.push(w);
            }
            offsets.push(sources.len());
        }
        ChannelIndex {
            offsets,
            sources,
            weights,
        }
    }

    /// Slot range of `node`'s in-edges inside [`sources`](Self::sources).
    pub fn range(&self, node: usize) -> std::ops::Range<usize> {
        self.offsets[node]..self.offsets[node + 1]
    }

    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn num_edges(&self) -> usize {
        self.sources.len()
    }
}

/// Per-channel message-passing structure derived from a [`SignedGraph`].
#[derive(Debug, Clone, PartialEq)]
pub struct MessageGraph {
    num_nodes: usize,
    mode: ChannelMode,
    channels: Vec<ChannelIndex>,
}

impl MessageGraph {
    pub fn new(graph: &SignedGraph, mode: ChannelMode) -> Self {
        let n = graph.num_nodes();
        let signed = |sign: Sign| {
            ChannelIndex::from_lists(
                (0..n)
                    .map(|i| {
                        graph
                            .incident(i, sign, Direction::In)
                            .iter()
                            .map(|&(j, e)| (j, graph.edges()[e].weight()))
                            .collect()
                    })
                    .collect(),
            )
        };
        let channels = match mode {
            ChannelMode::Dual => vec![signed(Sign::Positive), signed(Sign::Negative)],
            ChannelMode::PositiveOnly => vec![signed(Sign::Positive)],
            ChannelMode::Unsigned => {
                let lists = (0..n)
                    .map(|i| {
                        let mut all: Vec<(usize, usize)> = graph
                            .incident(i, Sign::Positive, Direction::In)
                            .iter()
                            .chain(graph.incident(i, Sign::Negative, Direction::In))
                            .copied()
                            .collect();
                        all.sort_unstable();
                        all.into_iter()
                            .map(|(j, e)| (j, graph.edges()[e].weight().abs()))
                            .collect()
                    })
                    .collect();
                vec![ChannelIndex::from_lists(lists)]
            }
        };
        MessageGraph {
            num_nodes: n,
            mode,
            channels,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn mode(&self) -> ChannelMode {
        self.mode
    }

    pub fn channel(&self, c: usize) -> &ChannelIndex {
        &self.channels[c]
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// One `in_dim × hidden_dim` projection per channel.
    pub weights: Vec<Array2<f64>>,
    /// One attention vector of length `2·hidden_dim + 1` per channel; empty
    /// when attention is disabled.
    pub attention: Vec<Array1<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Weight,
    Attention,
    Bias,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub wiring: Wiring,
    pub in_dim: usize,
    pub layers: Vec<LayerParams>,
    pub mlp_w1: Array2<f64>,
    pub mlp_b1: Array1<f64>,
    pub mlp_w2: Array1<f64>,
    pub mlp_b2: Array1<f64>,
}

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-bound..bound))
}

impl ModelParams {
    /// Xavier-uniform projections and MLP weights, zero attention vectors and biases.
    pub fn init(config: &ModelConfig, wiring: &Wiring, in_dim: usize) -> Result<Self> {
        config.validate()?;
        if in_dim == 0 {
            return Err(Error::Config("input dimension must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let channels = wiring.channels.num_channels();
        let h = config.hidden_dim;
        let mut layers = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let fan_in = if l == 0 { in_dim } else { channels * h };
            let weights = (0..channels).map(|_| xavier(&mut rng, fan_in, h)).collect();
            let attention = if wiring.attention {
                (0..channels).map(|_| Array1::zeros(2 * h + 1)).collect()
            } else {
                Vec::new()
            };
            layers.push(LayerParams { weights, attention });
        }
        let z_dim = channels * h;
        let mlp_w1 = xavier(&mut rng, z_dim, config.mlp_hidden);
        let mlp_w2 = xavier(&mut rng, config.mlp_hidden, 1)
            .index_axis(Axis(1), 0)
            .to_owned();
        Ok(ModelParams {
            config: *config,
            wiring: *wiring,
            in_dim,
            layers,
            mlp_w1,
            mlp_b1: Array1::zeros(config.mlp_hidden),
            mlp_w2,
            mlp_b2: Array1::zeros(1),
        })
    }

    /// Same shapes, every entry zero. Gradient containers use this.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, _, data) in out.tensors_mut() {
            data.fill(0.0);
        }
        out
    }

    pub fn num_channels(&self) -> usize {
        self.wiring.channels.num_channels()
    }

    pub fn embedding_dim(&self) -> usize {
        self.num_channels() * self.config.hidden_dim
    }

    /// Every tensor in a fixed schema order.
    pub fn tensors(&self) -> Vec<(String, TensorKind, &[f64])> {
        let mut out: Vec<(String, TensorKind, &[f64])> = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for (c, w) in layer.weights.iter().enumerate() {
                out.push((
                    format!("layer{l}.w{c}"),
                    TensorKind::Weight,
                    w.as_slice().unwrap(),
                ));
            }
            for (c, a) in layer.attention.iter().enumerate() {
                out.push((
                    format!("layer{l}.a{c}"),
                    TensorKind::Attention,
                    a.as_slice().unwrap(),
                ));
            }
        }
        out.push((
            "mlp.w1".into(),
            TensorKind::Weight,
            self.mlp_w1.as_slice().unwrap(),
        ));
        out.push((
            "mlp.b1".into(),
            TensorKind::Bias,
            self.mlp_b1.as_slice().unwrap(),
        ));
        out.push((
            "mlp.w2".into(),
            TensorKind::Weight,
            self.mlp_w2.as_slice().unwrap(),
        ));
        out.push((
            "mlp.b2".into(),
            TensorKind::Bias,
            self.mlp_b2.as_slice().unwrap(),
        ));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, TensorKind, &mut [f64])> {
        let mut out: Vec<(String, TensorKind, &mut [f64])> = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (c, w) in layer.weights.iter_mut().enumerate() {
                out.push((
                    format!("layer{l}.w{c}"),
                    TensorKind::Weight,
                    w.as_slice_mut().unwrap(),
                ));
            }
            for (c, a) in layer.attention.iter_mut().enumerate() {
                out.push((
                    format!("layer{l}.a{c}"),
                    TensorKind::Attention,
                    a.as_slice_mut().unwrap(),
                ));
            }
        }
        out.push((
            "mlp.w1".into(),
            TensorKind::Weight,
            self.mlp_w1.as_slice_mut().unwrap(),
        ));
        out.push((
            "mlp.b1".into(),
            TensorKind::Bias,
            self.mlp_b1.as_slice_mut().unwrap(),
        ));
        out.push((
            "mlp.w2".into(),
            TensorKind::Weight,
            self.mlp_w2.as_slice_mut().unwrap(),
        ));
        out.push((
            "mlp.b2".into(),
            TensorKind::Bias,
            self.mlp_b2.as_slice_mut().unwrap(),
        ));
        out
    }

    pub fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend(layer.weights.iter().map(|w| w.shape().to_vec()));
            out.extend(layer.attention.iter().map(|a| a.shape().to_vec()));
        }
        out.push(self.mlp_w1.shape().to_vec());
        out.push(self.mlp_b1.shape().to_vec());
        out.push(self.mlp_w2.shape().to_vec());
        out.push(self.mlp_b2.shape().to_vec());
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, _, d)| d.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, _, d)| d.iter().all(|x| x.is_finite()))
    }

    fn same_shape(&self, other: &ModelParams) -> bool {
        self.config == other.config
            && self.wiring == other.wiring
            && self.in_dim == other.in_dim
            && self.tensor_shapes() == other.tensor_shapes()
    }
}

/// Gradient set, shaped like the parameters.
pub type Gradients = ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Training pass; the dropout mask is drawn from this seed.
    Train {
        dropout_seed: u64,
    },
}

#[derive(Debug, Clone)]
pub struct ChannelTrace {
    /// `X W`, `N × hidden`.
    pub projected: Array2<f64>,
    /// Pre-LeakyReLU attention scores, one per channel edge slot.
    pub scores: Vec<f64>,
    /// Normalized attention weights, one per channel edge slot.
    pub alpha: Vec<f64>,
    /// Pre-ELU aggregate.
    pub aggregated: Array2<f64>,
    pub output: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub input: Array2<f64>,
    pub channels: Vec<ChannelTrace>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub train: bool,
    pub layers: Vec<LayerTrace>,
    /// Fused embedding before dropout.
    pub z: Array2<f64>,
    /// Inverted-dropout multipliers (0 or `1/(1-p)`), present in train mode.
    pub dropout_mask: Option<Array2<f64>>,
    pub mlp_pre: Array2<f64>,
    pub mlp_hidden: Array2<f64>,
    pub logits: Array1<f64>,
    pub probs: Array1<f64>,
}

/// Upstream gradients of the scalar loss.
#[derive(Debug, Clone)]
pub struct LossGrads {
    /// `∂L/∂logit_i`.
    pub d_logits: Array1<f64>,
    /// `∂L/∂z` from terms that read the embedding directly.
    pub d_z: Option<Array2<f64>>,
}

impl LossGrads {
    pub fn zeros(num_nodes: usize) -> Self {
        LossGrads {
            d_logits: Array1::zeros(num_nodes),
            d_z: None,
        }
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_finite(m: &Array2<f64>, layer: usize, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalFault {
            layer,
            message: format!("non-finite {what}"),
        })
    }
}

fn channel_forward(
    input: &Array2<f64>,
    weights: &Array2<f64>,
    attention: Option<&Array1<f64>>,
    index: &ChannelIndex,
    slope: f64,
) -> ChannelTrace {
    let n = input.nrows();
    let projected = input.dot(weights);
    let h = projected.ncols();
    let mut scores = vec![0.0; index.num_edges()];
    let mut alpha = vec![0.0; index.num_edges()];
    let mut aggregated = Array2::zeros((n, h));

    let (dst_score, src_score, edge_coef) = match attention {
        Some(a) => (
            projected.dot(&a.slice(s![..h])),
            projected.dot(&a.slice(s![h..2 * h])),
            a[2 * h],
        ),
        None => (Array1::zeros(0), Array1::zeros(0), 0.0),
    };

    for i in 0..n {
        let range = index.range(i);
        if range.is_empty() {
            aggregated.row_mut(i).assign(&projected.row(i));
            continue;
        }
        match attention {
            Some(_) => {
                let mut max = f64::NEG_INFINITY;
                for k in range.clone() {
                    let u =
                        dst_score[i] + src_score[index.sources[k]] + edge_coef * index.weights[k];
                    scores[k] = u;
                    let lu = if u > 0.0 { u } else { slope * u };
                    alpha[k] = lu;
                    max = max.max(lu);
                }
                let mut total = 0.0;
                for k in range.clone() {
                    alpha[k] = (alpha[k] - max).exp();
                    total += alpha[k];
                }
                for k in range.clone() {
                    alpha[k] /= total;
                }
            }
            None => {
                let share = 1.0 / range.len() as f64;
                for k in range.clone() {
                    alpha[k] = share;
                }
            }
        }
        let mut row = aggregated.row_mut(i);
        for k in range {
            row.scaled_add(alpha[k], &projected.row(index.sources[k]));
        }
    }
    let output = aggregated.mapv(elu);
    ChannelTrace {
        projected,
        scores,
        alpha,
        aggregated,
        output,
    }
}

fn concat_channels(channels: &[ChannelTrace]) -> Array2<f64> {
    let views: Vec<ArrayView2<f64>> = channels.iter().map(|c| c.output.view()).collect();
    ndarray::concatenate(Axis(1), &views).expect("channel outputs share row count")
}

fn dropout_mask(rows: usize, cols: usize, rate: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    Array2::from_shape_simple_fn((rows, cols), || {
        if rng.random::<f64>() < keep {
            scale
        } else {
            0.0
        }
    })
}

pub fn forward(
    params: &ModelParams,
    graph: &MessageGraph,
    features: &Array2<f64>,
    mode: Mode,
) -> Result<ForwardTrace> {
    if features.ncols() != params.in_dim {
        return Err(Error::Config(format!(
            "feature width {} does not match model input width {}",
            features.ncols(),
            params.in_dim
        )));
    }
    if features.nrows() != graph.num_nodes() {
        return Err(Error::Shape(format!(
            "{} feature rows for {} nodes",
            features.nrows(),
            graph.num_nodes()
        )));
    }
    if graph.num_channels() != params.num_channels() || graph.mode() != params.wiring.channels {
        return Err(Error::Config(
            "message graph channel mode does not match the model".into(),
        ));
    }
    let cfg = &params.config;
    let mut layers: Vec<LayerTrace> = Vec::with_capacity(params.layers.len());
    let mut input = features.clone();
    for (l, lp) in params.layers.iter().enumerate() {
        let channels: Vec<ChannelTrace> = (0..graph.num_channels())
            .map(|c| {
                channel_forward(
                    &input,
                    &lp.weights[c],
                    lp.attention.get(c),
                    graph.channel(c),
                    cfg.leaky_slope,
                )
            })
            .collect();
        let next = concat_channels(&channels);
        check_finite(&next, l + 1, "channel output")?;
        layers.push(LayerTrace { input, channels });
        input = next;
    }
    let z = input;
    let n = z.nrows();
    let (dropout_mask, classifier_input) = match mode {
        Mode::Train { dropout_seed } if cfg.dropout_rate > 0.0 => {
            let mask = dropout_mask(n, z.ncols(), cfg.dropout_rate, dropout_seed);
            let dropped = &z * &mask;
            (Some(mask), dropped)
        }
        _ => (None, z.clone()),
    };
    let classifier_layer = params.layers.len() + 1;
    let mlp_pre = classifier_input.dot(&params.mlp_w1) + &params.mlp_b1;
    let mlp_hidden = mlp_pre.mapv(elu);
    check_finite(&mlp_hidden, classifier_layer, "classifier hidden state")?;
    let logits = mlp_hidden.dot(&params.mlp_w2) + params.mlp_b2[0];
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericalFault {
            layer: classifier_layer,
            message: "non-finite logit".into(),
        });
    }
    let probs = logits.mapv(|x| sigmoid(x).clamp(PROB_GUARD, 1.0 - PROB_GUARD));
    Ok(ForwardTrace {
        train: matches!(mode, Mode::Train { .. }),
        layers,
        z,
        dropout_mask,
        mlp_pre,
        mlp_hidden,
        logits,
        probs,
    })
}

/// Eval-mode probabilities.
pub fn predict(
    params: &ModelParams,
    graph: &MessageGraph,
    features: &Array2<f64>,
) -> Result<Array1<f64>> {
    forward(params, graph, features, Mode::Eval).map(|t| t.probs)
}

/// Returns `(∂L/∂input, ∂L/∂W, ∂L/∂a)` for one channel given `∂L/∂output`.
fn channel_backward(
    input: &Array2<f64>,
    weights: &Array2<f64>,
    attention: Option<&Array1<f64>>,
    index: &ChannelIndex,
    trace: &ChannelTrace,
    d_output: ArrayView2<f64>,
    slope: f64,
) -> (Array2<f64>, Array2<f64>, Option<Array1<f64>>) {
    let n = input.nrows();
    let h = weights.ncols();
    let d_agg = &d_output * &trace.aggregated.mapv(elu_grad);
    let projected = &trace.projected;
    let mut d_proj = Array2::<f64>::zeros((n, h));
    let mut d_dst = Array1::<f64>::zeros(if attention.is_some() { n } else { 0 });
    let mut d_src = Array1::<f64>::zeros(if attention.is_some() { n } else { 0 });
    let mut d_edge_coef = 0.0;
    let mut g = Vec::new();

    for i in 0..n {
        let range = index.range(i);
        if range.is_empty() {
            d_proj.row_mut(i).scaled_add(1.0, &d_agg.row(i));
            continue;
        }
        let di = d_agg.row(i);
        g.clear();
        for k in range.clone() {
            let j = index.sources[k];
            d_proj.row_mut(j).scaled_add(trace.alpha[k], &di);
            if attention.is_some() {
                g.push(di.dot(&projected.row(j)));
            }
        }
        if attention.is_some() {
            let mean: f64 = range
                .clone()
                .zip(&g)
                .map(|(k, gk)| trace.alpha[k] * gk)
                .sum();
            for (k, gk) in range.zip(&g) {
                let d_lrelu = trace.alpha[k] * (gk - mean);
                let u = trace.scores[k];
                let du = if u > 0.0 { d_lrelu } else { slope * d_lrelu };
                d_dst[i] += du;
                d_src[index.sources[k]] += du;
                d_edge_coef += du * index.weights[k];
            }
        }
    }

    let d_attention = attention.map(|a| {
        let a_dst = a.slice(s![..h]);
        let a_src = a.slice(s![h..2 * h]);
        for i in 0..n {
            let mut row = d_proj.row_mut(i);
            row.scaled_add(d_dst[i], &a_dst);
            row.scaled_add(d_src[i], &a_src);
        }
        let mut da = Array1::zeros(2 * h + 1);
        da.slice_mut(s![..h]).assign(&projected.t().dot(&d_dst));
        da.slice_mut(s![h..2 * h])
            .assign(&projected.t().dot(&d_src));
        da[2 * h] = d_edge_coef;
        da
    });
    let d_weights = input.t().dot(&d_proj);
    let d_input = d_proj.dot(&weights.t());
    (d_input, d_weights, d_attention)
}

/// Exact reverse-mode gradients of the loss whose upstream gradients are
/// `grads`, for the pass recorded in `trace`.
pub fn backward(
    params: &ModelParams,
    graph: &MessageGraph,
    trace: &ForwardTrace,
    grads: &LossGrads,
) -> Result<Gradients> {
    let n = graph.num_nodes();
    if trace.layers.len() != params.layers.len()
        || trace.z.ncols() != params.embedding_dim()
        || trace.z.nrows() != n
        || grads.d_logits.len() != n
        || trace
            .layers
            .iter()
            .any(|l| l.channels.len() != params.num_channels())
        || graph.num_channels() != params.num_channels()
    {
        return Err(Error::Shape("trace, graph and parameters disagree".into()));
    }
    if let Some(dz) = &grads.d_z {
        if dz.dim() != trace.z.dim() {
            return Err(Error::Shape(
                "embedding gradient has the wrong shape".into(),
            ));
        }
    }
    let mut out = params.zeros_like();
    let slope = params.config.leaky_slope;

    // classifier
    let d_logits = &grads.d_logits;
    out.mlp_b2[0] = d_logits.sum();
    out.mlp_w2 = trace.mlp_hidden.t().dot(d_logits);
    let d_hidden = d_logits
        .view()
        .insert_axis(Axis(1))
        .dot(&params.mlp_w2.view().insert_axis(Axis(0)));
    let d_pre = &d_hidden * &trace.mlp_pre.mapv(elu_grad);
    out.mlp_b1 = d_pre.sum_axis(Axis(0));
    let classifier_input = match &trace.dropout_mask {
        Some(mask) => &trace.z * mask,
        None => trace.z.clone(),
    };
    out.mlp_w1 = classifier_input.t().dot(&d_pre);
    let mut d_z = d_pre.dot(&params.mlp_w1.t());
    if let Some(mask) = &trace.dropout_mask {
        d_z *= mask;
    }
    if let Some(extra) = &grads.d_z {
        d_z += extra;
    }

    // message passing, last layer first
    let h = params.config.hidden_dim;
    let mut d_layer_output = d_z;
    for l in (0..params.layers.len()).rev() {
        let lp = &params.layers[l];
        let lt = &trace.layers[l];
        let mut d_input = Array2::<f64>::zeros(lt.input.dim());
        for c in 0..params.num_channels() {
            let d_out = d_layer_output.slice(s![.., c * h..(c + 1) * h]);
            let (d_in, d_w, d_a) = channel_backward(
                &lt.input,
                &lp.weights[c],
                lp.attention.get(c),
                graph.channel(c),
                &lt.channels[c],
                d_out,
                slope,
            );
            d_input += &d_in;
            out.layers[l].weights[c] = d_w;
            if let Some(d_a) = d_a {
                out.layers[l].attention[c] = d_a;
            }
        }
        d_layer_output = d_input;
    }
    debug_assert!(out.same_shape(params));
    Ok(out)
}

/// Checks that two parameter sets are interchangeable (config, wiring, shapes).
pub fn compatible(a: &ModelParams, b: &ModelParams) -> bool {
    a.same_shape(b)
}
