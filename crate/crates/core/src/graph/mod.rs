//! Undirected labelled graphs and the structures derived from hop distances.

mod hops;
mod io;
mod lappe;
mod mask;

pub use hops::{bfs_hops, hop_matrix, HopMatrix, UNREACHABLE, VIRTUAL};
pub use io::{read_graphs, write_graphs, GraphRecord};
pub use lappe::{lap_pe, LapPeFeatures};
pub use mask::{add_virtual_node, ego_net, focal_mask, FocalMask, VIRTUAL_FEATURE};

use crate::error::{input, Result};

/// Undirected simple graph with per-node categorical features.
///
/// Edges are kept in canonical form: `(u, v)` with `u < v`, sorted
/// lexicographically. Adjacency lists are sorted and symmetric.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    adjacency: Vec<Vec<usize>>,
    edges: Vec<(usize, usize)>,
    node_feats: Vec<u32>,
    node_labels: Option<Vec<u32>>,
    edge_types: Option<Vec<u32>>,
    virtual_node: Option<usize>,
}

impl Graph {
    /// Builds a graph, validating ids and rejecting self-loops and duplicate edges.
    ///
    /// Edge endpoints may be given in either order; `edge_types`, when present,
    /// is parallel to `edges` as passed in.
    pub fn new(
        num_nodes: usize,
        edges: Vec<(usize, usize)>,
        node_feats: Vec<u32>,
        node_labels: Option<Vec<u32>>,
        edge_types: Option<Vec<u32>>,
    ) -> Result<Self> {
        if node_feats.len() != num_nodes {
            return input(format!(
                "node_feats has length {} but num_nodes is {num_nodes}",
                node_feats.len()
            ));
        }
        if let Some(labels) = &node_labels {
            if labels.len() != num_nodes {
                return input(format!(
                    "node_labels has length {} but num_nodes is {num_nodes}",
                    labels.len()
                ));
            }
        }
        if let Some(types) = &edge_types {
            if types.len() != edges.len() {
                return input(format!(
                    "edge_types has length {} but there are {} edges",
                    types.len(),
                    edges.len()
                ));
            }
        }
        let mut keyed: Vec<((usize, usize), u32)> = Vec::with_capacity(edges.len());
        for (k, &(u, v)) in edges.iter().enumerate() {
            if u >= num_nodes || v >= num_nodes {
                return input(format!("edge ({u}, {v}) out of range for {num_nodes} nodes"));
            }
            if u == v {
                return input(format!("self-loop at node {u}"));
            }
            let t = edge_types.as_ref().map_or(0, |t| t[k]);
            keyed.push(((u.min(v), u.max(v)), t));
        }
        keyed.sort_unstable();
        if let Some(w) = keyed.windows(2).find(|w| w[0].0 == w[1].0) {
            return input(format!("duplicate edge {:?}", w[0].0));
        }
        let mut adjacency = vec![Vec::new(); num_nodes];
        for &((u, v), _) in &keyed {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let edge_types = edge_types.map(|_| keyed.iter().map(|&(_, t)| t).collect());
        Ok(Self {
            num_nodes,
            adjacency,
            edges: keyed.into_iter().map(|(e, _)| e).collect(),
            node_feats,
            node_labels,
            edge_types,
            virtual_node: None,
        })
    }

    /// Graph with no edges and all-zero features.
    pub fn empty(num_nodes: usize) -> Self {
        Self::new(num_nodes, Vec::new(), vec![0; num_nodes], None, None)
            .expect("edgeless graph is always valid")
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    /// Canonical edge list, `u < v`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn node_feats(&self) -> &[u32] {
        &self.node_feats
    }

    pub fn node_labels(&self) -> Option<&[u32]> {
        self.node_labels.as_deref()
    }

    pub fn edge_types(&self) -> Option<&[u32]> {
        self.edge_types.as_deref()
    }

    /// Index of the appended virtual node, if this graph was augmented.
    pub fn virtual_node(&self) -> Option<usize> {
        self.virtual_node
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.num_nodes && self.adjacency[u].binary_search(&v).is_ok()
    }

    /// Edge category of `(u, v)`; `None` when the pair is not an edge.
    /// Graphs without explicit edge types report type 0 for every edge.
    pub fn edge_type(&self, u: usize, v: usize) -> Option<u32> {
        let key = (u.min(v), u.max(v));
        let idx = self.edges.binary_search(&key).ok()?;
        Some(self.edge_types.as_ref().map_or(0, |t| t[idx]))
    }

    /// Relabels node `i` to `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.num_nodes {
            return input("permutation length differs from node count");
        }
        let mut seen = vec![false; self.num_nodes];
        for &p in perm {
            if p >= self.num_nodes || std::mem::replace(&mut seen[p], true) {
                return input("not a permutation");
            }
        }
        let scatter = |src: &[u32]| {
            let mut out = vec![0; src.len()];
            for (i, &x) in src.iter().enumerate() {
                out[perm[i]] = x;
            }
            out
        };
        let edges = self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let mut g = Self::new(
            self.num_nodes,
            edges,
            scatter(&self.node_feats),
            self.node_labels.as_deref().map(scatter),
            self.edge_types.clone(),
        )?;
        g.virtual_node = self.virtual_node.map(|v| perm[v]);
        Ok(g)
    }

    /// Connected-component id per node, numbered in order of first appearance.
    pub fn components(&self) -> Vec<usize> {
        let mut comp = vec![usize::MAX; self.num_nodes];
        let mut next = 0;
        let mut stack = Vec::new();
        for start in 0..self.num_nodes {
            if comp[start] != usize::MAX {
                continue;
            }
            comp[start] = next;
            stack.push(start);
            while let Some(u) = stack.pop() {
                for &v in &self.adjacency[u] {
                    if comp[v] == usize::MAX {
                        comp[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        comp
    }

    pub fn is_connected(&self) -> bool {
        self.components().iter().all(|&c| c == 0)
    }

    pub(crate) fn with_virtual_node(mut self, node: usize) -> Self {
        self.virtual_node = Some(node);
        self
    }
}
