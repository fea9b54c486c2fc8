use std::sync::Arc;

use crate::error::{check_dim, Error, Result};
use crate::sparse::CsrMatrix;

/// Graph view of a linear system: one node per unknown, one directed edge per
/// stored entry of `A` (self-loops included), in CSR row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphData {
    pub n_nodes: usize,
    pub node_features: Vec<f64>,
    pub edges: Vec<(usize, usize)>,
    pub edge_features: Vec<f64>,
    pub edge_pair_index: Vec<usize>,
    /// Edges leaving node `i` occupy `row_offsets[i]..row_offsets[i+1]`.
    pub(crate) row_offsets: Arc<Vec<usize>>,
    pub(crate) sources: Arc<Vec<usize>>,
    pub(crate) targets: Arc<Vec<usize>>,
    /// Strictly lower pattern of `A`; its k-th stored entry corresponds to
    /// edge `lower_edges[k]`.
    pub(crate) lower_pattern: CsrMatrix,
    pub(crate) lower_edges: Vec<usize>,
    pub(crate) diag: Vec<f64>,
}

impl GraphData {
    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_lower(&self) -> usize {
        self.lower_edges.len()
    }

    pub fn lower_pattern(&self) -> &CsrMatrix {
        &self.lower_pattern
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }
}

pub fn graph_from_system(a: &CsrMatrix, b: &[f64]) -> Result<GraphData> {
    let n = a.n();
    check_dim(n, b.len())?;
    let diag = a.positive_diagonal()?;
    let mut edges = Vec::with_capacity(a.nnz());
    for i in 0..n {
        edges.extend(a.row(i).0.iter().map(|&j| (i, j)));
    }
    let mut edge_pair_index = Vec::with_capacity(edges.len());
    for &(i, j) in &edges {
        let rev = a
            .position(j, i)
            .ok_or_else(|| Error::InvalidMatrix(format!("entry ({i}, {j}) has no symmetric partner")))?;
        edge_pair_index.push(rev);
    }
    let lower_pattern = a.strict_lower();
    let lower_edges = (0..edges.len()).filter(|&k| edges[k].1 < edges[k].0).collect();
    Ok(GraphData {
        n_nodes: n,
        node_features: b.to_vec(),
        edge_features: a.values().to_vec(),
        edge_pair_index,
        row_offsets: Arc::new(a.row_ptr().to_vec()),
        sources: Arc::new(edges.iter().map(|e| e.0).collect()),
        targets: Arc::new(edges.iter().map(|e| e.1).collect()),
        edges,
        lower_pattern,
        lower_edges,
        diag,
    })
}

/// Averages the two directions of every off-diagonal pair onto the strictly
/// lower slot; self-loop outputs are dropped.
pub fn symmetrize_triangulate(m: &[f64], graph: &GraphData) -> Result<Vec<f64>> {
    check_dim(graph.n_edges(), m.len())?;
    Ok(graph.lower_edges.iter().map(|&k| 0.5 * (m[k] + m[graph.edge_pair_index[k]])).collect())
}

/// Adjoint of [`symmetrize_triangulate`].
pub(crate) fn symmetrize_adjoint(grad_lower: &[f64], graph: &GraphData) -> Vec<f64> {
    let mut g = vec![0.0; graph.n_edges()];
    for (&k, gl) in graph.lower_edges.iter().zip(grad_lower) {
        g[k] += 0.5 * gl;
        g[graph.edge_pair_index[k]] += 0.5 * gl;
    }
    g
}
