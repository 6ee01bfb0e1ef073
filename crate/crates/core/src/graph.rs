//! Signed directed rating graph.
//!
//! Ratings are integers in `[-10, 10] \ {0}` and are exposed as normalized
//! weights `raw / 10`. The graph is immutable once built; sign-partitioned
//! adjacency indices are precomputed for every node in both directions.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ABS_RATING: i32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    In,
    Out,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeRecord {
    pub source: usize,
    pub target: usize,
    pub raw_rating: i32,
    pub timestamp: i64,
}

impl EdgeRecord {
    /// Normalized weight in `[-1, 1] \ {0}`.
    pub fn weight(&self) -> f64 {
        f64::from(self.raw_rating) / 10.0
    }

    pub fn sign(&self) -> Sign {
        if self.raw_rating > 0 {
            Sign::Positive
        } else {
            Sign::Negative
        }
    }
}

/// Compressed per-node neighbor lists: `(neighbor, edge index)` sorted by
/// neighbor id, then edge index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
struct Adjacency {
    offsets: Vec<usize>,
    entries: Vec<(usize, usize)>,
}

impl Adjacency {
    fn build(num_nodes: usize, pairs: impl Iterator<Item = (usize, usize, usize)>) -> Self {
        let mut lists: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_nodes];
        for (node, neighbor, edge) in pairs {
            lists[node].push((neighbor, edge));
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        let mut entries = Vec::new();
        offsets.push(0);
        for mut list in lists {
            list.sort_unstable();
            entries.extend(list);
            offsets.push(entries.len());
        }
        Adjacency { offsets, entries }
    }

    fn get(&self, node: usize) -> &[(usize, usize)] {
        &self.entries[self.offsets[node]..self.offsets[node + 1]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestConfig {
    /// When false, a self-loop row is a validation error instead of being dropped.
    #[serde(default = "default_true")]
    pub drop_self_loops: bool,
}

fn default_true() -> bool {
    true
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            drop_self_loops: true,
        }
    }
}

/// Counts gathered while cleaning an edge list.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestAudit {
    pub rows: usize,
    pub self_loops_dropped: usize,
    pub duplicates_collapsed: usize,
    pub num_nodes: usize,
    pub num_edges: usize,
    pub positive_edges: usize,
    pub negative_edges: usize,
}

impl IngestAudit {
    pub fn render(&self) -> String {
        format!(
            "rows={} self_loops_dropped={} duplicates_collapsed={} nodes={} edges={} positive={} negative={}",
            self.rows,
            self.self_loops_dropped,
            self.duplicates_collapsed,
            self.num_nodes,
            self.num_edges,
            self.positive_edges,
            self.negative_edges
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignedGraph {
    num_nodes: usize,
    edges: Vec<EdgeRecord>,
    raw_ids: Vec<i64>,
    pos_in: Adjacency,
    pos_out: Adjacency,
    neg_in: Adjacency,
    neg_out: Adjacency,
}

impl SignedGraph {
    /// Builds a graph over dense node ids `0..num_nodes`.
    pub fn new(num_nodes: usize, edges: Vec<EdgeRecord>) -> Result<Self> {
        let raw_ids = (0..num_nodes as i64).collect();
        Self::with_raw_ids(num_nodes, edges, raw_ids)
    }

    pub fn with_raw_ids(
        num_nodes: usize,
        edges: Vec<EdgeRecord>,
        raw_ids: Vec<i64>,
    ) -> Result<Self> {
        if raw_ids.len() != num_nodes {
            return Err(Error::Config(format!(
                "raw id table has {} entries for {} nodes",
                raw_ids.len(),
                num_nodes
            )));
        }
        for (idx, e) in edges.iter().enumerate() {
            let line = idx + 1;
            if e.source >= num_nodes || e.target >= num_nodes {
                return Err(Error::NodeIndex {
                    node: e.source.max(e.target),
                    num_nodes,
                });
            }
            if e.source == e.target {
                return Err(Error::Validation {
                    line,
                    message: format!("self-loop on node {}", e.source),
                });
            }
            check_rating(e.raw_rating, line)?;
        }
        let select = |sign: Sign, dir: Direction| {
            Adjacency::build(
                num_nodes,
                edges
                    .iter()
                    .enumerate()
                    .filter(move |(_, e)| e.sign() == sign)
                    .map(move |(i, e)| match dir {
                        Direction::In => (e.target, e.source, i),
                        Direction::Out => (e.source, e.target, i),
                    }),
            )
        };
        Ok(SignedGraph {
            num_nodes,
            pos_in: select(Sign::Positive, Direction::In),
            pos_out: select(Sign::Positive, Direction::Out),
            neg_in: select(Sign::Negative, Direction::In),
            neg_out: select(Sign::Negative, Direction::Out),
            edges,
            raw_ids,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[EdgeRecord] {
        &self.edges
    }

    pub fn raw_ids(&self) -> &[i64] {
        &self.raw_ids
    }

    pub fn raw_id(&self, node: usize) -> i64 {
        self.raw_ids[node]
    }

    /// Dense index of an original node id.
    pub fn dense_id(&self, raw: i64) -> Option<usize> {
        self.raw_ids.iter().position(|&r| r == raw)
    }

    pub fn raw_id_index(&self) -> HashMap<i64, usize> {
        self.raw_ids
            .iter()
            .enumerate()
            .map(|(i, &r)| (r, i))
            .collect()
    }

    pub fn count_sign(&self, sign: Sign) -> usize {
        self.edges.iter().filter(|e| e.sign() == sign).count()
    }

    fn adjacency(&self, sign: Sign, direction: Direction) -> &Adjacency {
        match (sign, direction) {
            (Sign::Positive, Direction::In) => &self.pos_in,
            (Sign::Positive, Direction::Out) => &self.pos_out,
            (Sign::Negative, Direction::In) => &self.neg_in,
            (Sign::Negative, Direction::Out) => &self.neg_out,
        }
    }

    /// `(neighbor, edge index)` pairs in ascending neighbor order.
    pub fn incident(&self, node: usize, sign: Sign, direction: Direction) -> &[(usize, usize)] {
        self.adjacency(sign, direction).get(node)
    }

    /// Signed neighbors of `node` with normalized weights, ascending by
    /// neighbor id then edge index.
    pub fn neighbors_signed(
        &self,
        node: usize,
        sign: Sign,
        direction: Direction,
    ) -> Result<Vec<(usize, f64)>> {
        if node >= self.num_nodes {
            return Err(Error::NodeIndex {
                node,
                num_nodes: self.num_nodes,
            });
        }
        Ok(self
            .incident(node, sign, direction)
            .iter()
            .map(|&(nb, e)| (nb, self.edges[e].weight()))
            .collect())
    }

    pub fn degree(&self, node: usize, sign: Sign, direction: Direction) -> usize {
        self.incident(node, sign, direction).len()
    }

    /// Same node set, positive edges only.
    pub fn positive_subgraph(&self) -> SignedGraph {
        self.filtered(|e| e.raw_rating > 0)
    }

    /// Same node set, every rating replaced by its magnitude.
    pub fn unsigned(&self) -> SignedGraph {
        let edges = self
            .edges
            .iter()
            .map(|e| EdgeRecord {
                raw_rating: e.raw_rating.abs(),
                ..*e
            })
            .collect();
        SignedGraph::with_raw_ids(self.num_nodes, edges, self.raw_ids.clone())
            .expect("magnitudes of valid ratings are valid")
    }

    fn filtered(&self, keep: impl Fn(&EdgeRecord) -> bool) -> SignedGraph {
        let edges = self.edges.iter().filter(|e| keep(e)).copied().collect();
        SignedGraph::with_raw_ids(self.num_nodes, edges, self.raw_ids.clone())
            .expect("subset of a valid edge list is valid")
    }

    /// Relabels nodes so that old node `v` becomes `perm[v]`. Edge order is kept.
    pub fn relabel(&self, perm: &[usize]) -> Result<SignedGraph> {
        check_permutation(perm, self.num_nodes)?;
        let edges = self
            .edges
            .iter()
            .map(|e| EdgeRecord {
                source: perm[e.source],
                target: perm[e.target],
                ..*e
            })
            .collect();
        let mut raw_ids = vec![0; self.num_nodes];
        for (old, &new) in perm.iter().enumerate() {
            raw_ids[new] = self.raw_ids[old];
        }
        SignedGraph::with_raw_ids(self.num_nodes, edges, raw_ids)
    }

    /// Canonical `SOURCE,TARGET,RATING,TIME` dump using the original node ids.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.edges.len() * 24);
        for e in &self.edges {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                self.raw_ids[e.source], self.raw_ids[e.target], e.raw_rating, e.timestamp
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn audit(&self) -> IngestAudit {
        IngestAudit {
            rows: self.edges.len(),
            num_nodes: self.num_nodes,
            num_edges: self.edges.len(),
            positive_edges: self.count_sign(Sign::Positive),
            negative_edges: self.count_sign(Sign::Negative),
            ..Default::default()
        }
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::Shape(format!(
            "permutation of length {} for {} nodes",
            perm.len(),
            n
        )));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::Shape("not a permutation".into()));
        }
        seen[p] = true;
    }
    Ok(())
}

fn check_rating(rating: i32, line: usize) -> Result<()> {
    if rating == 0 {
        return Err(Error::Validation {
            line,
            message: "zero rating".into(),
        });
    }
    if rating.abs() > MAX_ABS_RATING {
        return Err(Error::Validation {
            line,
            message: format!("rating {rating} outside [-10, 10]"),
        });
    }
    Ok(())
}

fn parse_field<'a>(
    fields: &mut impl Iterator<Item = &'a str>,
    name: &str,
    line: usize,
) -> Result<&'a str> {
    match fields.next().map(str::trim) {
        Some(f) if !f.is_empty() => Ok(f),
        _ => Err(Error::Parse {
            line,
            message: format!("missing {name} field"),
        }),
    }
}

fn parse_int(text: &str, name: &str, line: usize) -> Result<i64> {
    if let Ok(v) = text.parse::<i64>() {
        return Ok(v);
    }
    // some SNAP dumps write timestamps as floats
    match text.parse::<f64>() {
        Ok(v) if v.is_finite() && v.fract() == 0.0 && v.abs() < 9.0e15 => Ok(v as i64),
        _ => Err(Error::Parse {
            line,
            message: format!("{name} is not an integer: {text:?}"),
        }),
    }
}

/// Parses a `SOURCE,TARGET,RATING,TIME` edge list (no header, LF or CRLF).
///
/// Node ids are remapped to `0..N` in order of first appearance. Repeated
/// `(source, target)` pairs collapse to the row with the latest timestamp
/// (later rows win ties) and keep the position of the first occurrence.
/// Self-loop rows are dropped before id assignment.
pub fn parse_edge_list(text: &str, cfg: &IngestConfig) -> Result<(SignedGraph, IngestAudit)> {
    let mut audit = IngestAudit::default();
    let mut rows: Vec<(i64, i64, i32, i64)> = Vec::new();
    let mut pair_index: HashMap<(i64, i64), usize> = HashMap::new();

    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let row = raw_line.trim_end_matches('\r').trim();
        if row.is_empty() {
            continue;
        }
        audit.rows += 1;
        let mut fields = row.split(',');
        let source = parse_int(parse_field(&mut fields, "source", line)?, "source", line)?;
        let target = parse_int(parse_field(&mut fields, "target", line)?, "target", line)?;
        let rating_text = parse_field(&mut fields, "rating", line)?;
        let rating = parse_int(rating_text, "rating", line)?;
        let time = parse_int(parse_field(&mut fields, "time", line)?, "time", line)?;
        if fields.next().is_some() {
            return Err(Error::Parse {
                line,
                message: "expected exactly 4 fields".into(),
            });
        }
        let rating = i32::try_from(rating).map_err(|_| Error::Validation {
            line,
            message: format!("rating {rating} outside [-10, 10]"),
        })?;
        check_rating(rating, line)?;
        if source == target {
            if !cfg.drop_self_loops {
                return Err(Error::Validation {
                    line,
                    message: format!("self-loop on node {source}"),
                });
            }
            audit.self_loops_dropped += 1;
            continue;
        }
        match pair_index.get(&(source, target)) {
            Some(&pos) => {
                audit.duplicates_collapsed += 1;
                if time >= rows[pos].3 {
                    rows[pos].2 = rating;
                    rows[pos].3 = time;
                }
            }
            None => {
                pair_index.insert((source, target), rows.len());
                rows.push((source, target, rating, time));
            }
        }
    }

    if audit.self_loops_dropped > 0 {
        log::warn!("dropped {} self-loop rows", audit.self_loops_dropped);
    }
    if rows.is_empty() {
        return Err(Error::EmptyGraph(if audit.rows == 0 {
            "edge list has no rows".into()
        } else {
            "edge list has no usable edges".into()
        }));
    }

    let mut dense: HashMap<i64, usize> = HashMap::new();
    let mut raw_ids = Vec::new();
    let mut intern = |raw: i64| {
        *dense.entry(raw).or_insert_with(|| {
            raw_ids.push(raw);
            raw_ids.len() - 1
        })
    };
    let edges: Vec<EdgeRecord> = rows
        .iter()
        .map(|&(s, t, r, ts)| EdgeRecord {
            source: intern(s),
            target: intern(t),
            raw_rating: r,
            timestamp: ts,
        })
        .collect();
    let graph = SignedGraph::with_raw_ids(raw_ids.len(), edges, raw_ids)?;
    audit.num_nodes = graph.num_nodes();
    audit.num_edges = graph.num_edges();
    audit.positive_edges = graph.count_sign(Sign::Positive);
    audit.negative_edges = graph.count_sign(Sign::Negative);
    Ok((graph, audit))
}

pub fn load_edge_list_with_audit(
    path: &Path,
    cfg: &IngestConfig,
) -> Result<(SignedGraph, IngestAudit)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_edge_list(&text, cfg)
}

pub fn load_edge_list(path: &Path, cfg: &IngestConfig) -> Result<SignedGraph> {
    load_edge_list_with_audit(path, cfg).map(|(g, _)| g)
}
