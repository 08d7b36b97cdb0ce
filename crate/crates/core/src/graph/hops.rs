use std::collections::VecDeque;

use rayon::prelude::*;

use super::Graph;
use crate::error::{input, Result};

/// Hop count for pairs in different connected components.
pub const UNREACHABLE: u32 = u32::MAX;
/// Hop count between a virtual node and any other node.
pub const VIRTUAL: u32 = u32::MAX - 1;

/// Single-source breadth-first hop counts.
pub fn bfs_hops(graph: &Graph, source: usize) -> Result<Vec<u32>> {
    if source >= graph.num_nodes() {
        return input(format!(
            "source {source} out of range for {} nodes",
            graph.num_nodes()
        ));
    }
    let mut dist = vec![UNREACHABLE; graph.num_nodes()];
    dist[source] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        let next = dist[u] + 1;
        for &v in graph.neighbors(u) {
            if dist[v] == UNREACHABLE {
                dist[v] = next;
                queue.push_back(v);
            }
        }
    }
    Ok(dist)
}

/// Dense all-pairs hop counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HopMatrix {
    n: usize,
    hops: Vec<u32>,
}

impl HopMatrix {
    pub(crate) fn from_raw(n: usize, hops: Vec<u32>) -> Self {
        debug_assert_eq!(hops.len(), n * n);
        Self { n, hops }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.hops[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.hops[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.hops
    }

    /// Largest finite hop count between real nodes (virtual pairs excluded).
    pub fn diameter(&self) -> u32 {
        self.hops
            .iter()
            .copied()
            .filter(|&h| h != UNREACHABLE && h != VIRTUAL)
            .max()
            .unwrap_or(0)
    }
}

/// All-pairs hop matrix via one BFS per source.
pub fn hop_matrix(graph: &Graph) -> HopMatrix {
    let n = graph.num_nodes();
    let rows: Vec<Vec<u32>> = (0..n)
        .into_par_iter()
        .map(|s| bfs_hops(graph, s).expect("source in range"))
        .collect();
    HopMatrix::from_raw(n, rows.concat())
}
