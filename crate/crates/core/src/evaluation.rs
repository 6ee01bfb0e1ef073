//! Metrics, multi-seed aggregation, the ablation harness and embedding export.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{random_features, FeatureMatrix};
use crate::graph::SignedGraph;
use crate::labeling::{Label, LabelSet};
use crate::linalg;
use crate::model::{
    self, ablation_variant, AblationKind, MessageGraph, Mode, ModelConfig, ModelParams,
};
use crate::training::{self, LossConfig, Split, SplitAssignment, TrainConfig};

/// Probability threshold for the binary decision.
pub const DECISION_THRESHOLD: f64 = 0.5;

/// Mann–Whitney AUC: `(concordant + ½·tied) / (n_pos · n_neg)` over all
/// positive/negative pairs. Labels are 0/1.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Config("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InsufficientLabels("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the Mann-Whitney U statistic, kept integral
    let mut doubled: u64 = 0;
    let mut negatives_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        doubled += 2 * pos * negatives_below + pos * neg;
        negatives_below += neg;
        i = j;
    }
    Ok(doubled as f64 / (2 * n_pos * n_neg) as f64)
}

/// Binary confusion counts with class 1 (fraud) as positive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tp: usize,
}

impl Confusion {
    pub fn from_predictions(preds: &[u8], labels: &[u8]) -> Self {
        let mut c = Confusion::default();
        for (&p, &y) in preds.iter().zip(labels) {
            match (y, p) {
                (0, 0) => c.tn += 1,
                (0, _) => c.fp += 1,
                (_, 0) => c.fn_ += 1,
                _ => c.tp += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tn + self.fp + self.fn_ + self.tp
    }

    fn ratio(num: usize, den: usize) -> f64 {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    }

    /// `(precision, recall, f1)` of `class`.
    pub fn class_scores(&self, class: u8) -> (f64, f64, f64) {
        let (tp, fp, fn_) = if class == 1 {
            (self.tp, self.fp, self.fn_)
        } else {
            (self.tn, self.fn_, self.fp)
        };
        let precision = Self::ratio(tp, tp + fp);
        let recall = Self::ratio(tp, tp + fn_);
        let f1 = Self::ratio(2 * tp, 2 * tp + fp + fn_);
        (precision, recall, f1)
    }
}

/// Unweighted mean of the class-0 and class-1 F1 scores.
pub fn macro_f1(preds: &[u8], labels: &[u8]) -> f64 {
    let c = Confusion::from_predictions(preds, labels);
    (c.class_scores(0).2 + c.class_scores(1).2) / 2.0
}

pub fn threshold(probs: &[f64], cut: f64) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(p >= cut)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub split: String,
    pub auc_roc: f64,
    pub macro_f1: f64,
    /// Per class `[benign, fraud]`.
    pub precision: [f64; 2],
    pub recall: [f64; 2],
    pub confusion: Confusion,
    pub n_seeds: usize,
    pub auc_std: f64,
    pub f1_std: f64,
}

impl EvalReport {
    /// Scores rank nodes for AUC, `preds` are the binary decisions.
    pub fn from_scores(
        method: &str,
        split: &str,
        scores: &[f64],
        preds: &[u8],
        labels: &[u8],
    ) -> Result<Self> {
        let auc = auc_roc(scores, labels)?;
        let confusion = Confusion::from_predictions(preds, labels);
        let (p0, r0, _) = confusion.class_scores(0);
        let (p1, r1, _) = confusion.class_scores(1);
        Ok(EvalReport {
            method: method.to_string(),
            split: split.to_string(),
            auc_roc: auc,
            macro_f1: macro_f1(preds, labels),
            precision: [p0, p1],
            recall: [r0, r1],
            confusion,
            n_seeds: 1,
            auc_std: 0.0,
            f1_std: 0.0,
        })
    }

    /// Probability outputs thresholded at 0.5.
    pub fn from_probs(method: &str, split: &str, probs: &[f64], labels: &[u8]) -> Result<Self> {
        Self::from_scores(
            method,
            split,
            probs,
            &threshold(probs, DECISION_THRESHOLD),
            labels,
        )
    }

    /// Mean of the per-seed reports with population standard deviations.
    pub fn aggregate(reports: &[EvalReport]) -> Result<Self> {
        let first = reports
            .first()
            .ok_or_else(|| Error::Config("no reports to aggregate".into()))?;
        let n = reports.len() as f64;
        let mean = |f: &dyn Fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let std = |f: &dyn Fn(&EvalReport) -> f64, m: f64| {
            (reports.iter().map(|r| (f(r) - m).powi(2)).sum::<f64>() / n).sqrt()
        };
        let auc = mean(&|r| r.auc_roc);
        let f1 = mean(&|r| r.macro_f1);
        let mut confusion = Confusion::default();
        for r in reports {
            confusion.tn += r.confusion.tn;
            confusion.fp += r.confusion.fp;
            confusion.fn_ += r.confusion.fn_;
            confusion.tp += r.confusion.tp;
        }
        Ok(EvalReport {
            method: first.method.clone(),
            split: first.split.clone(),
            auc_roc: auc,
            macro_f1: f1,
            precision: [mean(&|r| r.precision[0]), mean(&|r| r.precision[1])],
            recall: [mean(&|r| r.recall[0]), mean(&|r| r.recall[1])],
            confusion,
            n_seeds: reports.len(),
            auc_std: std(&|r| r.auc_roc, auc),
            f1_std: std(&|r| r.macro_f1, f1),
        })
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Published figures printed next to measured rows, `(method, auc, f1)`.
pub const REFERENCE_ROWS: [(&str, f64, f64); 8] = [
    ("lowest_5pct", 0.527, 0.503),
    ("badrank", 0.578, 0.555),
    ("gcn", 0.676, 0.630),
    ("gat", 0.742, 0.682),
    ("sgcn", 0.846, 0.669),
    ("sigat", 0.896, 0.696),
    ("snea", 0.838, 0.719),
    ("dual_channel", 0.927, 0.747),
];

pub fn reference_for(method: &str) -> Option<(f64, f64)> {
    REFERENCE_ROWS
        .iter()
        .find(|(m, _, _)| *m == method)
        .map(|&(_, a, f)| (a, f))
}

/// Aligned text table. Methods without a measured row that have a published
/// figure appear as reference-only rows marked `(published)`.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<22} {:<6} {:>16} {:>16} {:>10} {:>10}",
        "method", "split", "auc_roc", "macro_f1", "pub_auc", "pub_f1"
    );
    let fmt_metric = |m: f64, s: f64, n: usize| {
        if n > 1 {
            format!("{m:.4}±{s:.4}")
        } else {
            format!("{m:.4}")
        }
    };
    for r in reports {
        let (pa, pf) = reference_for(&r.method)
            .map(|(a, f)| (format!("{a:.3}"), format!("{f:.3}")))
            .unwrap_or_else(|| ("-".into(), "-".into()));
        let _ = writeln!(
            out,
            "{:<22} {:<6} {:>16} {:>16} {:>10} {:>10}",
            r.method,
            r.split,
            fmt_metric(r.auc_roc, r.auc_std, r.n_seeds),
            fmt_metric(r.macro_f1, r.f1_std, r.n_seeds),
            pa,
            pf
        );
    }
    for (method, a, f) in REFERENCE_ROWS {
        if reports.iter().any(|r| r.method == method) {
            continue;
        }
        let _ = writeln!(
            out,
            "{:<22} {:<6} {:>16} {:>16} {:>10.3} {:>10.3}",
            format!("{method} (published)"),
            "-",
            "-",
            "-",
            a,
            f
        );
    }
    out
}

/// One trained variant for one seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRun {
    pub variant: AblationKind,
    pub seed: u64,
    pub split_checksum: String,
    pub best_epoch: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationSummary {
    pub variant: AblationKind,
    pub report: EvalReport,
    pub median_auc: f64,
    pub median_f1: f64,
    /// Relative drop of the mean versus the full model, in percent.
    pub auc_drop_pct: f64,
    pub f1_drop_pct: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationOutcome {
    pub runs: Vec<AblationRun>,
    pub summaries: Vec<AblationSummary>,
}

pub fn relative_drop_pct(full: f64, variant: f64) -> f64 {
    if full == 0.0 {
        0.0
    } else {
        (full - variant) / full * 100.0
    }
}

/// Probabilities and labels for the nodes of one split.
pub fn split_scores(
    probs: &[f64],
    labels: &LabelSet,
    split: &SplitAssignment,
    which: Split,
) -> (Vec<f64>, Vec<u8>) {
    split
        .nodes(which)
        .into_iter()
        .map(|v| {
            (
                probs[v],
                labels.label(v).class().expect("split nodes are labeled"),
            )
        })
        .unzip()
}

/// Trains every ablation variant for every seed on one shared split and
/// evaluates on its test part.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation_suite(
    graph: &SignedGraph,
    features: &FeatureMatrix,
    labels: &LabelSet,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    seeds: &[u64],
    kinds: &[AblationKind],
) -> Result<AblationOutcome> {
    if seeds.is_empty() {
        return Err(Error::Config(
            "ablation suite needs at least one seed".into(),
        ));
    }
    let split = training::make_splits(labels, train_cfg)?;
    let checksum = split.checksum();
    let mut runs = Vec::new();
    for &seed in seeds {
        for &kind in kinds {
            let (mut cfg, wiring) = ablation_variant(model_cfg, kind);
            cfg.seed = seed;
            let feats = if wiring.random_features {
                random_features(features.rows(), features.dim(), seed ^ 0x5eed_f00d)
            } else {
                features.clone()
            };
            let (params, log) = training::train_with_split(
                graph, &feats, labels, &cfg, &wiring, train_cfg, loss_cfg, &split,
            )?;
            let mg = MessageGraph::new(graph, wiring.channels);
            let probs = model::predict(&params, &mg, feats.data())?;
            let (scores, ys) = split_scores(probs.as_slice().unwrap(), labels, &split, Split::Test);
            let report = EvalReport::from_probs(kind.as_str(), "test", &scores, &ys)?;
            log::info!(
                "ablation {kind} seed {seed}: auc={:.4} f1={:.4} best_epoch={}",
                report.auc_roc,
                report.macro_f1,
                log.best_epoch
            );
            runs.push(AblationRun {
                variant: kind,
                seed,
                split_checksum: checksum.clone(),
                best_epoch: log.best_epoch,
                report,
            });
        }
    }
    let summaries = summarize_ablation(&runs)?;
    Ok(AblationOutcome { runs, summaries })
}

pub fn summarize_ablation(runs: &[AblationRun]) -> Result<Vec<AblationSummary>> {
    let mut by_kind: BTreeMap<&str, (AblationKind, Vec<EvalReport>)> = BTreeMap::new();
    for r in runs {
        by_kind
            .entry(r.variant.as_str())
            .or_insert_with(|| (r.variant, Vec::new()))
            .1
            .push(r.report.clone());
    }
    let full = by_kind
        .get(AblationKind::Full.as_str())
        .map(|(_, reps)| EvalReport::aggregate(reps))
        .transpose()?;
    let mut out = Vec::new();
    for kind in AblationKind::ALL {
        let Some((_, reps)) = by_kind.get(kind.as_str()) else {
            continue;
        };
        let report = EvalReport::aggregate(reps)?;
        let aucs: Vec<f64> = reps.iter().map(|r| r.auc_roc).collect();
        let f1s: Vec<f64> = reps.iter().map(|r| r.macro_f1).collect();
        let (auc_drop_pct, f1_drop_pct) = match &full {
            Some(f) => (
                relative_drop_pct(f.auc_roc, report.auc_roc),
                relative_drop_pct(f.macro_f1, report.macro_f1),
            ),
            None => (0.0, 0.0),
        };
        out.push(AblationSummary {
            variant: kind,
            median_auc: median(&aucs),
            median_f1: median(&f1s),
            report,
            auc_drop_pct,
            f1_drop_pct,
        });
    }
    Ok(out)
}

/// Published relative drops for the ablated variants, `(auc or f1, percent)`.
pub fn published_drop(kind: AblationKind) -> Option<(&'static str, f64)> {
    match kind {
        AblationKind::NoNegativeChannel => Some(("f1", 10.67)),
        AblationKind::NoAttention => Some(("f1", 8.00)),
        AblationKind::NoStatusFeatures => Some(("auc", 10.75)),
        AblationKind::Full => None,
    }
}

pub fn render_ablation(outcome: &AblationOutcome) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<22} {:>6} {:>10} {:>10} {:<40}",
        "variant", "seed", "auc_roc", "macro_f1", "split_checksum"
    );
    for r in &outcome.runs {
        let _ = writeln!(
            out,
            "{:<22} {:>6} {:>10.4} {:>10.4} {:<40}",
            r.variant.as_str(),
            r.seed,
            r.report.auc_roc,
            r.report.macro_f1,
            &r.split_checksum[..16.min(r.split_checksum.len())]
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<22} {:>16} {:>16} {:>10} {:>10} {:>16}",
        "variant", "auc_roc", "macro_f1", "auc_drop%", "f1_drop%", "published_drop%"
    );
    for s in &outcome.summaries {
        let published = published_drop(s.variant)
            .map(|(metric, pct)| format!("{metric} {pct:.2}"))
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:<22} {:>16} {:>16} {:>10.2} {:>10.2} {:>16}",
            s.variant.as_str(),
            format!("{:.4}±{:.4}", s.report.auc_roc, s.report.auc_std),
            format!("{:.4}±{:.4}", s.report.macro_f1, s.report.f1_std),
            s.auc_drop_pct,
            s.f1_drop_pct,
            published
        );
    }
    out
}

/// Rows projected onto the top-2 principal components of the centered data.
pub fn pca_2d(data: &Array2<f64>) -> Array2<f64> {
    let n = data.nrows();
    if n == 0 {
        return Array2::zeros((0, 2));
    }
    let mean = data.mean_axis(Axis(0)).expect("non-empty");
    let centered = data - &mean;
    let mut coords = Array2::zeros((n, 2));
    let d = centered.ncols();
    if d == 0 {
        return coords;
    }
    // the smaller Gram side keeps the Jacobi SVD tall
    let basis = if n >= d {
        linalg::jacobi_svd(&centered.view()).v
    } else {
        let svd = linalg::jacobi_svd(&centered.t());
        svd.u
    };
    let k = basis.ncols().min(2);
    let mut axes = basis.slice(ndarray::s![.., ..k]).to_owned();
    linalg::fix_column_signs(&mut axes);
    let proj = centered.dot(&axes);
    coords.slice_mut(ndarray::s![.., ..k]).assign(&proj);
    coords.mapv_inplace(|x| if x.abs() < 1e-300 { 0.0 } else { x });
    coords
}

/// Distance between the Fraud and Benign centroids against the mean distance
/// of labeled nodes to their own class centroid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub inter_centroid: f64,
    pub mean_intra: f64,
}

impl Separation {
    pub fn separated(&self) -> bool {
        self.inter_centroid > self.mean_intra
    }
}

pub fn separation(z: &Array2<f64>, labels: &LabelSet) -> Result<Separation> {
    let labeled = labels.labeled();
    let class_rows = |c: u8| -> Vec<usize> {
        labeled
            .iter()
            .filter(|(_, y)| *y == c)
            .map(|(v, _)| *v)
            .collect()
    };
    let benign = class_rows(0);
    let fraud = class_rows(1);
    if benign.is_empty() || fraud.is_empty() {
        return Err(Error::InsufficientLabels(
            "separation needs both classes".into(),
        ));
    }
    let centroid = |rows: &[usize]| {
        z.select(Axis(0), rows)
            .mean_axis(Axis(0))
            .expect("non-empty")
    };
    let cb = centroid(&benign);
    let cf = centroid(&fraud);
    let dist = |a: ndarray::ArrayView1<f64>, b: &ndarray::Array1<f64>| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let inter = dist(cb.view(), &cf);
    let intra_sum: f64 = benign.iter().map(|&v| dist(z.row(v), &cb)).sum::<f64>()
        + fraud.iter().map(|&v| dist(z.row(v), &cf)).sum::<f64>();
    Ok(Separation {
        inter_centroid: inter,
        mean_intra: intra_sum / (benign.len() + fraud.len()) as f64,
    })
}

#[derive(Debug, Clone)]
pub struct EmbeddingExport {
    pub z: Array2<f64>,
    pub projection: Array2<f64>,
    pub separation: Option<Separation>,
    pub embeddings_csv: String,
    pub projection_csv: String,
}

/// Eval-mode embeddings `z` with labels, plus their 2-D PCA projection.
pub fn export_embeddings(
    params: &ModelParams,
    graph: &SignedGraph,
    features: &FeatureMatrix,
    labels: &LabelSet,
) -> Result<EmbeddingExport> {
    let mg = MessageGraph::new(graph, params.wiring.channels);
    let trace = model::forward(params, &mg, features.data(), Mode::Eval)?;
    let z = trace.z;
    let projection = pca_2d(&z);
    let mut embeddings_csv = String::from("node_id,label");
    for j in 0..z.ncols() {
        let _ = write!(embeddings_csv, ",z{j}");
    }
    embeddings_csv.push('\n');
    let mut projection_csv = String::from("node_id,label,pc1,pc2\n");
    for v in 0..z.nrows() {
        let label = labels.label(v).as_str();
        let _ = write!(embeddings_csv, "{},{label}", graph.raw_id(v));
        for x in z.row(v) {
            let _ = write!(embeddings_csv, ",{x}");
        }
        embeddings_csv.push('\n');
        let _ = writeln!(
            projection_csv,
            "{},{label},{},{}",
            graph.raw_id(v),
            projection[[v, 0]],
            projection[[v, 1]]
        );
    }
    let separation = if labels.count(Label::Benign) > 0 && labels.count(Label::Fraud) > 0 {
        Some(separation(&z, labels)?)
    } else {
        None
    };
    Ok(EmbeddingExport {
        z,
        projection,
        separation,
        embeddings_csv,
        projection_csv,
    })
}
