//! Cross-modal similarity graph construction and the normalized propagation
//! operator.
//!
//! Every unordered pair of records is scored under five cosine similarity
//! kinds (concatenated features, image-to-text, text-to-image,
//! image-to-image, text-to-text); an edge is created when any score strictly
//! exceeds the threshold. Pairwise construction is O(N^2 * (d_t + d_v)) time;
//! see the ignored `smoke_pairwise_scaling` test for a measurement harness.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, NewsRecord};
use crate::error::{GlpnError, Result};

/// The five similarity checks between two news items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    /// Cosine of the concatenated text+image vectors of both items.
    ConcatConcat,
    /// Cosine of one item's image embedding with the other's text embedding.
    ImageToText,
    /// Cosine of one item's text embedding with the other's image embedding.
    TextToImage,
    ImageToImage,
    TextToText,
}

impl SimilarityKind {
    pub const ALL: [SimilarityKind; 5] = [
        SimilarityKind::ConcatConcat,
        SimilarityKind::ImageToText,
        SimilarityKind::TextToImage,
        SimilarityKind::ImageToImage,
        SimilarityKind::TextToText,
    ];
}

/// One similarity check that exceeded the threshold on an edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeKind {
    pub kind: SimilarityKind,
    pub score: f64,
}

/// An undirected edge, stored with `i < j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub kinds: Vec<EdgeKind>,
}

/// The similarity graph over all records (train and test alike). Edges are
/// binary for propagation; the exceeding scores are kept as annotations only.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossModalGraph {
    n: usize,
    theta: f64,
    edges: Vec<Edge>,
}

impl CrossModalGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Neighbor lists (no self-loops), sorted ascending per node.
    pub fn adjacency_lists(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for e in &self.edges {
            adj[e.i].push(e.j);
            adj[e.j].push(e.i);
        }
        for l in &mut adj {
            l.sort_unstable();
        }
        adj
    }
}

/// Cosine similarity of two equal-dimension, nonzero vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(GlpnError::DimensionMismatch(format!(
            "cosine over dimensions {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (dot, na, nb) = dot_and_norms(a, b);
    if na == 0.0 || nb == 0.0 {
        return Err(GlpnError::ZeroVector);
    }
    Ok(dot / (na * nb))
}

fn dot_and_norms(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    (dot, na.sqrt(), nb.sqrt())
}

/// Cosine of the concatenations `a1 ++ a2` and `b1 ++ b2`, accumulated in the
/// same order a materialized concatenation would be, so results are
/// bit-identical to [`cosine`] on concatenated buffers.
fn cosine_concat(a1: &[f64], a2: &[f64], b1: &[f64], b2: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a1.iter().zip(b1).chain(a2.iter().zip(b2)) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// All five similarity scores for an unordered pair of records.
///
/// For the pair {i, j}, `ImageToText` is cos(v_i, t_j) and `TextToImage` is
/// cos(t_i, v_j); together they cover both directions, so the result is
/// order-insensitive as a set. When `d_t != d_v` the cross-modal kinds cannot
/// be computed and are reported absent.
pub fn pair_similarities(
    r_i: &NewsRecord,
    r_j: &NewsRecord,
) -> BTreeMap<SimilarityKind, f64> {
    let mut out = BTreeMap::new();
    out.insert(
        SimilarityKind::ConcatConcat,
        cosine_concat(
            &r_i.text_embedding,
            &r_i.image_embedding,
            &r_j.text_embedding,
            &r_j.image_embedding,
        ),
    );
    out.insert(
        SimilarityKind::ImageToImage,
        cosine(&r_i.image_embedding, &r_j.image_embedding).expect("validated embeddings"),
    );
    out.insert(
        SimilarityKind::TextToText,
        cosine(&r_i.text_embedding, &r_j.text_embedding).expect("validated embeddings"),
    );
    if r_i.text_embedding.len() == r_i.image_embedding.len() {
        out.insert(
            SimilarityKind::ImageToText,
            cosine(&r_i.image_embedding, &r_j.text_embedding).expect("validated embeddings"),
        );
        out.insert(
            SimilarityKind::TextToImage,
            cosine(&r_i.text_embedding, &r_j.image_embedding).expect("validated embeddings"),
        );
    }
    out
}

/// Build the cross-modal graph: an edge {i, j} exists iff any similarity kind
/// strictly exceeds `theta`. Deterministic for a given dataset and threshold.
pub fn build_graph(ds: &Dataset, theta: f64) -> Result<CrossModalGraph> {
    if !(theta > -1.0 && theta <= 1.0) {
        return Err(GlpnError::Config(format!("theta {theta} must lie in (-1, 1]")));
    }
    let records = ds.records();
    let mut edges = Vec::new();
    for i in 0..records.len() {
        for j in (i + 1)..records.len() {
            let kinds: Vec<EdgeKind> = pair_similarities(&records[i], &records[j])
                .into_iter()
                .filter(|(_, score)| *score > theta)
                .map(|(kind, score)| EdgeKind { kind, score })
                .collect();
            if !kinds.is_empty() {
                edges.push(Edge { i, j, kinds });
            }
        }
    }
    Ok(CrossModalGraph { n: records.len(), theta, edges })
}

/// The symmetric normalized propagation operator, stored sparse (CSR with
/// ascending column indices per row).
///
/// Entries realize `D^{-1/2} (A + I) D^{-1/2}` where `A` is the binary
/// adjacency of the graph and `D` the degree matrix of `A + I`. All entries
/// are nonnegative and the matrix is exactly symmetric. Rows do not sum to 1
/// in general.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Nonzero (column, value) pairs of row `i`, ascending by column.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi].iter().copied().zip(self.values[lo..hi].iter().copied())
    }

    /// Sparse-dense product `self * x`.
    ///
    /// Row accumulation visits columns in ascending order, matching a dense
    /// reference that skips exact zeros, so results are bit-reproducible.
    pub fn matmul(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(self.n, x.nrows(), "operand rows must match node count");
        let k = x.ncols();
        let mut out = Array2::<f64>::zeros((self.n, k));
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                for c in 0..k {
                    out[[i, c]] += v * x[[j, c]];
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut d = Array2::<f64>::zeros((self.n, self.n));
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d[[i, j]] = v;
            }
        }
        d
    }
}

/// Derive the normalized adjacency from a graph. Self-loops enter only via
/// the `A + I` term.
pub fn normalize(g: &CrossModalGraph) -> NormalizedAdjacency {
    let n = g.n();
    let adj = g.adjacency_lists();
    let degree: Vec<f64> = adj.iter().map(|l| (l.len() + 1) as f64).collect();
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();

    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    for i in 0..n {
        let mut cols: Vec<usize> = adj[i].clone();
        // Insert the self-loop keeping columns ascending.
        let pos = cols.partition_point(|&c| c < i);
        cols.insert(pos, i);
        for c in cols {
            col_idx.push(c);
            values.push(inv_sqrt[i] * inv_sqrt[c]);
        }
        row_ptr.push(col_idx.len());
    }
    NormalizedAdjacency { n, row_ptr, col_idx, values }
}

#[derive(Serialize, Deserialize)]
struct GraphHeader {
    n: usize,
    theta: f64,
}

/// Write a graph cache: a header line with `n` and `theta`, then one edge per
/// line with `i < j` and the exceeding kinds.
pub fn save_graph(g: &CrossModalGraph, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    let header = GraphHeader { n: g.n(), theta: g.theta() };
    serde_json::to_writer(&mut w, &header)
        .map_err(|e| GlpnError::Config(format!("serialize graph header: {e}")))?;
    w.write_all(b"\n")?;
    for e in g.edges() {
        serde_json::to_writer(&mut w, e)
            .map_err(|e2| GlpnError::Config(format!("serialize edge: {e2}")))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Read a graph cache written by [`save_graph`].
pub fn load_graph(path: &Path) -> Result<CrossModalGraph> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| GlpnError::Parse { line: 1, message: "empty graph file".into() })?;
    let header: GraphHeader = serde_json::from_str(&first?)
        .map_err(|e| GlpnError::Parse { line: 1, message: e.to_string() })?;
    let mut edges = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: Edge = serde_json::from_str(&line)
            .map_err(|err| GlpnError::Parse { line: idx + 1, message: err.to_string() })?;
        if e.i >= e.j || e.j >= header.n {
            return Err(GlpnError::Parse {
                line: idx + 1,
                message: format!("edge ({}, {}) out of order or out of range", e.i, e.j),
            });
        }
        edges.push(e);
    }
    Ok(CrossModalGraph { n: header.n, theta: header.theta, edges })
}
