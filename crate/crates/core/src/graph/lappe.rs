//! Laplacian eigenvector positional encodings.

use nalgebra::{DMatrix, SymmetricEigen};

use super::Graph;
use crate::error::{input, Result};

/// Coordinates below this magnitude are treated as zero when fixing signs.
const SIGN_EPS: f64 = 1e-10;

/// `n × k` eigenvector coordinates of `I - D^{-1/2} A D^{-1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LapPeFeatures {
    pub n: usize,
    pub k: usize,
    /// Row-major `n × k`.
    pub vectors: Vec<f64>,
    /// Eigenvalues backing each column on the largest connected component
    /// (zero where that component has too few nodes).
    pub eigenvalues: Vec<f64>,
}

impl LapPeFeatures {
    pub fn get(&self, node: usize, col: usize) -> f64 {
        self.vectors[node * self.k + col]
    }
}

/// Per connected component, the eigenvectors of the normalized Laplacian with
/// the `k` smallest eigenvalues after dropping the component's null direction;
/// columns run short on small components are zero-padded. Each component block
/// gets a canonical sign (first non-negligible coordinate positive), then each
/// non-zero column is scaled to unit norm.
///
/// Isolated nodes contribute an all-zero row.
pub fn lap_pe(graph: &Graph, k: usize) -> Result<LapPeFeatures> {
    let n = graph.num_nodes();
    if k >= n {
        return input(format!("lap_pe needs k < num_nodes (k = {k}, n = {n})"));
    }
    let comp = graph.components();
    let n_comp = comp.iter().max().map_or(0, |&c| c + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_comp];
    for (v, &c) in comp.iter().enumerate() {
        members[c].push(v);
    }
    let largest = (0..n_comp)
        .max_by(|&a, &b| members[a].len().cmp(&members[b].len()).then(b.cmp(&a)))
        .unwrap_or(0);

    let mut vectors = vec![0.0; n * k];
    let mut eigenvalues = vec![0.0; k];
    let mut local = vec![usize::MAX; n];
    for (c, nodes) in members.iter().enumerate() {
        let s = nodes.len();
        if s < 2 {
            continue;
        }
        for (li, &v) in nodes.iter().enumerate() {
            local[v] = li;
        }
        let inv_sqrt_deg: Vec<f64> = nodes
            .iter()
            .map(|&v| 1.0 / (graph.degree(v) as f64).sqrt())
            .collect();
        let mut lap = DMatrix::<f64>::identity(s, s);
        for (li, &v) in nodes.iter().enumerate() {
            for &u in graph.neighbors(v) {
                let lu = local[u];
                lap[(li, lu)] -= inv_sqrt_deg[li] * inv_sqrt_deg[lu];
            }
        }
        let eig = SymmetricEigen::new(lap);
        let mut order: Vec<usize> = (0..s).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        for (col, &e) in order.iter().skip(1).take(k).enumerate() {
            let column = eig.eigenvectors.column(e);
            let flip = column
                .iter()
                .find(|x| x.abs() > SIGN_EPS)
                .map_or(1.0, |&x| x.signum());
            for (li, &v) in nodes.iter().enumerate() {
                vectors[v * k + col] = flip * column[li];
            }
            if c == largest {
                eigenvalues[col] = eig.eigenvalues[e];
            }
        }
    }
    for col in 0..k {
        let norm = (0..n).map(|v| vectors[v * k + col].powi(2)).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in 0..n {
                vectors[v * k + col] /= norm;
            }
        }
    }
    Ok(LapPeFeatures { n, k, vectors, eigenvalues })
}
