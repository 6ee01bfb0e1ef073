//! Topological node features: signed degrees, incoming rating moments and a
//! truncated SVD embedding of the magnitude adjacency matrix.

use std::fmt::Write as _;

use ndarray::{concatenate, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Direction, Sign, SignedGraph};
use crate::linalg::{self, Csr};

pub const MAX_SVD_RANK: usize = 64;
const SVD_OVERSAMPLE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvdConfig {
    pub k_svd: usize,
    pub iters: usize,
    pub seed: u64,
}

impl Default for SvdConfig {
    fn default() -> Self {
        SvdConfig {
            k_svd: 32,
            iters: 24,
            seed: 7,
        }
    }
}

impl SvdConfig {
    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        if self.k_svd == 0 || self.k_svd > MAX_SVD_RANK {
            return Err(Error::Config(format!(
                "k_svd={} must be in 1..={MAX_SVD_RANK}",
                self.k_svd
            )));
        }
        if self.k_svd > num_nodes {
            return Err(Error::Config(format!(
                "k_svd={} exceeds node count {num_nodes}",
                self.k_svd
            )));
        }
        if self.iters < 2 {
            return Err(Error::Config("svd iters must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Array2<f64>,
    schema: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(data: Array2<f64>, schema: Vec<String>) -> Result<Self> {
        if data.ncols() != schema.len() {
            return Err(Error::Shape(format!(
                "{} columns but {} schema names",
                data.ncols(),
                schema.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericalFault {
                layer: 0,
                message: "non-finite feature value".into(),
            });
        }
        Ok(FeatureMatrix { data, schema })
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn schema(&self) -> &[String] {
        &self.schema
    }

    /// Rows reordered so that old row `v` lands at `perm[v]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<FeatureMatrix> {
        crate::graph::check_permutation(perm, self.rows())?;
        let mut data = Array2::zeros(self.data.raw_dim());
        for (old, &new) in perm.iter().enumerate() {
            data.row_mut(new).assign(&self.data.row(old));
        }
        Ok(FeatureMatrix {
            data,
            schema: self.schema.clone(),
        })
    }

    pub fn to_csv(&self, graph: &SignedGraph) -> String {
        let mut out = String::from("node_id");
        for name in &self.schema {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (v, row) in self.data.outer_iter().enumerate() {
            let _ = write!(out, "{}", graph.raw_id(v));
            for x in row {
                let _ = write!(out, ",{x}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn column_schema(k_svd: usize) -> Vec<String> {
    let mut names: Vec<String> = [
        "d_in_pos",
        "d_in_neg",
        "d_out_pos",
        "d_out_neg",
        "mu",
        "sigma2",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    names.extend((1..=k_svd).map(|j| format!("svd_{j}")));
    names
}

/// `[d_in⁺, d_in⁻, d_out⁺, d_out⁻]` per node.
pub fn signed_degree_stats(graph: &SignedGraph) -> Array2<f64> {
    let n = graph.num_nodes();
    let mut out = Array2::zeros((n, 4));
    for v in 0..n {
        out[[v, 0]] = graph.degree(v, Sign::Positive, Direction::In) as f64;
        out[[v, 1]] = graph.degree(v, Sign::Negative, Direction::In) as f64;
        out[[v, 2]] = graph.degree(v, Sign::Positive, Direction::Out) as f64;
        out[[v, 3]] = graph.degree(v, Sign::Negative, Direction::Out) as f64;
    }
    out
}

/// Mean and population variance of incoming normalized ratings; `(0, 0)` for
/// nodes nobody rated.
pub fn rating_moments(graph: &SignedGraph) -> Array2<f64> {
    let n = graph.num_nodes();
    let mut count = vec![0usize; n];
    let mut mean = vec![0.0f64; n];
    let mut m2 = vec![0.0f64; n];
    for e in graph.edges() {
        let t = e.target;
        count[t] += 1;
        let w = e.weight();
        let delta = w - mean[t];
        mean[t] += delta / count[t] as f64;
        m2[t] += delta * (w - mean[t]);
    }
    let mut out = Array2::zeros((n, 2));
    for v in 0..n {
        if count[v] > 0 {
            out[[v, 0]] = mean[v];
            out[[v, 1]] = (m2[v] / count[v] as f64).max(0.0);
        }
    }
    out
}

/// `|A|` with `A[source, target] = w̃`.
pub fn magnitude_adjacency(graph: &SignedGraph) -> Csr {
    let n = graph.num_nodes();
    let triplets: Vec<(usize, usize, f64)> = graph
        .edges()
        .iter()
        .map(|e| (e.source, e.target, e.weight().abs()))
        .collect();
    Csr::from_triplets(n, n, &triplets)
}

/// Left singular vectors of `|A|` scaled by their singular values, top `k_svd`.
pub fn truncated_svd(graph: &SignedGraph, cfg: &SvdConfig) -> Result<Array2<f64>> {
    cfg.validate(graph.num_nodes())?;
    let a = magnitude_adjacency(graph);
    let svd = linalg::randomized_svd(&a, cfg.k_svd, SVD_OVERSAMPLE, cfg.iters, cfg.seed);
    let mut scaled = svd.u;
    for (mut col, &s) in scaled.axis_iter_mut(Axis(1)).zip(svd.sigma.iter()) {
        col.mapv_inplace(|x| x * s);
    }
    linalg::fix_column_signs(&mut scaled);
    Ok(scaled)
}

/// Column-wise z-scoring with population variance; constant columns become 0.
pub fn standardize_columns(m: &mut Array2<f64>) {
    let n = m.nrows() as f64;
    if m.nrows() == 0 {
        return;
    }
    for mut col in m.axis_iter_mut(Axis(1)) {
        let mean = col.sum() / n;
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if std <= 1e-12 * (1.0 + mean.abs()) {
            col.fill(0.0);
        } else {
            col.mapv_inplace(|x| (x - mean) / std);
        }
    }
}

pub fn assemble_features(graph: &SignedGraph, cfg: &SvdConfig) -> Result<FeatureMatrix> {
    let degrees = signed_degree_stats(graph);
    let moments = rating_moments(graph);
    let svd = truncated_svd(graph, cfg)?;
    let mut data = concatenate(Axis(1), &[degrees.view(), moments.view(), svd.view()])
        .map_err(|e| Error::Shape(e.to_string()))?;
    standardize_columns(&mut data);
    FeatureMatrix::new(data, column_schema(cfg.k_svd))
}

/// Standard normal features of the given shape, used when structural
/// features are ablated away.
pub fn random_features(rows: usize, dim: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = Array2::from_shape_simple_fn((rows, dim), || StandardNormal.sample(&mut rng));
    let schema = (1..=dim).map(|j| format!("random_{j}")).collect();
    FeatureMatrix { data, schema }
}
