use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::numkit::{CsrMatrix, SparseOperand, Tensor};

/// An undirected, node-labelled graph with dense node features.
#[derive(Debug)]
pub struct Graph {
    n_classes: usize,
    features: Tensor,
    labels: Vec<usize>,
    adj: CsrMatrix,
    edges: Vec<(usize, usize)>,
    sparse_features: OnceLock<Arc<SparseOperand>>,
    feature_density: OnceLock<f64>,
}

impl Clone for Graph {
    fn clone(&self) -> Self {
        Self {
            n_classes: self.n_classes,
            features: self.features.clone(),
            labels: self.labels.clone(),
            adj: self.adj.clone(),
            edges: self.edges.clone(),
            sparse_features: OnceLock::new(),
            feature_density: OnceLock::new(),
        }
    }
}

impl Graph {
    /// Builds a graph from undirected edges. Pairs are canonicalised to
    /// `src < dst` and deduplicated; self-loops are rejected.
    pub fn new(
        features: Tensor,
        labels: Vec<usize>,
        n_classes: usize,
        edges: &[(usize, usize)],
    ) -> Result<Self> {
        let invalid = |detail: String| Error::Dataset {
            path: Default::default(),
            detail,
        };
        let (n, _) = features.dims2()?;
        if labels.len() != n {
            return Err(invalid(format!("{} labels for {n} nodes", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(invalid(format!("label {bad} outside [0, {n_classes})")));
        }
        if !features.is_finite() {
            return Err(invalid("non-finite feature value".into()));
        }
        let mut canon = Vec::with_capacity(edges.len());
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(invalid(format!("edge ({u},{v}) references a missing node")));
            }
            if u == v {
                return Err(invalid(format!("self-loop on node {u}")));
            }
            canon.push((u.min(v), u.max(v)));
        }
        canon.sort_unstable();
        canon.dedup();
        let triplets: Vec<(usize, usize, f32)> = canon
            .iter()
            .flat_map(|&(u, v)| [(u, v, 1.0), (v, u, 1.0)])
            .collect();
        let adj = CsrMatrix::from_triplets(n, n, &triplets)?;
        Ok(Self {
            n_classes,
            features,
            labels,
            adj,
            edges: canon,
            sparse_features: OnceLock::new(),
            feature_density: OnceLock::new(),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn n_feats(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Symmetric 0/1 adjacency without self-loops.
    pub fn adj(&self) -> &CsrMatrix {
        &self.adj
    }

    /// Undirected edges with `src < dst`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn degree(&self, u: usize) -> usize {
        self.adj.row_range(u).len()
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.adj.col_idx()[self.adj.row_range(u)]
    }

    /// Features as a constant sparse operand (built once, then shared).
    pub fn sparse_features(&self) -> Arc<SparseOperand> {
        self.sparse_features
            .get_or_init(|| {
                SparseOperand::new(CsrMatrix::from_dense(&self.features).expect("features are rank 2"))
            })
            .clone()
    }

    /// Fraction of non-zero feature entries.
    pub fn feature_density(&self) -> f64 {
        *self.feature_density.get_or_init(|| {
            let nz = self.features.data().iter().filter(|&&v| v != 0.0).count();
            nz as f64 / self.features.len().max(1) as f64
        })
    }

    /// Scales each feature row to unit L1 norm (all-zero rows stay zero).
    pub fn row_normalize_features(&mut self) {
        let d = self.n_feats();
        for row in self.features.data_mut().chunks_mut(d) {
            let s: f32 = row.iter().map(|v| v.abs()).sum();
            if s > 0.0 {
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
        self.sparse_features = OnceLock::new();
        self.feature_density = OnceLock::new();
    }

    /// Same nodes, keeping only edges whose endpoints both satisfy `keep`.
    pub fn edge_subgraph(&self, keep: &[bool]) -> Self {
        let edges: Vec<(usize, usize)> = self
            .edges
            .iter()
            .copied()
            .filter(|&(u, v)| keep[u] && keep[v])
            .collect();
        Self::new(self.features.clone(), self.labels.clone(), self.n_classes, &edges)
            .expect("subgraph of a valid graph is valid")
    }
}

/// The 4-node path used across tests and examples: edges 0-1, 1-2, 2-3.
pub fn toy_graph() -> Graph {
    let features = Tensor::from_rows(&[
        vec![1.0, 0.0],
        vec![0.8, 0.2],
        vec![0.2, 0.8],
        vec![0.0, 1.0],
    ])
    .unwrap();
    Graph::new(features, vec![0, 0, 1, 1], 2, &[(0, 1), (1, 2), (2, 3)]).unwrap()
}
