use crate::numkit::CsrMatrix;

use super::Graph;

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` where `D̃` is the degree matrix of `A + I`.
pub fn normalize_adjacency(g: &Graph) -> CsrMatrix {
    let pattern = with_self_loops(g);
    let n = g.n_nodes();
    let inv_sqrt: Vec<f32> = (0..n)
        .map(|u| 1.0 / ((g.degree(u) + 1) as f32).sqrt())
        .collect();
    let mut values = Vec::with_capacity(pattern.nnz());
    for r in 0..n {
        for k in pattern.row_range(r) {
            values.push(inv_sqrt[r] * inv_sqrt[pattern.col_idx()[k]]);
        }
    }
    pattern.with_values(values)
}

/// Row-normalised adjacency without self-loops (neighbour mean).
/// Isolated nodes get an empty row.
pub fn mean_adjacency(g: &Graph) -> CsrMatrix {
    let adj = g.adj();
    let mut values = Vec::with_capacity(adj.nnz());
    for r in 0..g.n_nodes() {
        let deg = adj.row_range(r).len() as f32;
        values.extend(adj.row_range(r).map(|_| 1.0 / deg));
    }
    adj.with_values(values)
}

/// `A + I` with unit values.
pub fn with_self_loops(g: &Graph) -> CsrMatrix {
    let n = g.n_nodes();
    let adj = g.adj();
    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0);
    let mut col_idx = Vec::with_capacity(adj.nnz() + n);
    for r in 0..n {
        let nbrs = g.neighbors(r);
        let split = nbrs.partition_point(|&c| c < r);
        col_idx.extend_from_slice(&nbrs[..split]);
        col_idx.push(r);
        col_idx.extend_from_slice(&nbrs[split..]);
        row_ptr.push(col_idx.len());
    }
    let values = vec![1.0; col_idx.len()];
    CsrMatrix::new(n, n, row_ptr, col_idx, values).expect("self-loop pattern is valid")
}
