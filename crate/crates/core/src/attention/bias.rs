//! Hop-distance buckets and the per-graph index tables that feed the
//! attention bias and gate.

use std::sync::Arc;

use crate::autodiff::{Tensor, NO_ROW};
use crate::error::{Error, Result};
use crate::graph::{focal_mask, FocalMask, Graph, HopMatrix, UNREACHABLE, VIRTUAL};

/// Maps hop counts to bias-table rows: `0..=max_hop` keep their own row,
/// then FAR (beyond `max_hop`), DISC (unreachable) and VIRTUAL.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BucketScheme {
    pub max_hop: u32,
}

impl BucketScheme {
    pub fn new(max_hop: u32) -> Self {
        Self { max_hop }
    }

    pub fn far(&self) -> u32 {
        self.max_hop + 1
    }

    pub fn disconnected(&self) -> u32 {
        self.max_hop + 2
    }

    pub fn virtual_bucket(&self) -> u32 {
        self.max_hop + 3
    }

    pub fn num_buckets(&self) -> usize {
        self.max_hop as usize + 4
    }

    pub fn bucket(&self, hop: u32) -> u32 {
        match hop {
            UNREACHABLE => self.disconnected(),
            VIRTUAL => self.virtual_bucket(),
            h if h <= self.max_hop => h,
            _ => self.far(),
        }
    }
}

/// Learned additive bias tables, `rows × heads`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasTables {
    pub scheme: BucketScheme,
    /// `num_buckets × heads`
    pub hop_bias: Tensor,
    /// `num_edge_types × heads`, added on 1-hop pairs only
    pub edge_bias: Tensor,
}

/// Multiplicative post-softmax gate, `num_buckets × heads`. `None` is the identity.
pub type GateTable = Option<Tensor>;

/// Everything an FFGT layer needs about one graph, computed once and shared
/// by every layer.
#[derive(Debug, Clone)]
pub struct GraphContext {
    pub n: usize,
    pub hops: HopMatrix,
    pub scheme: BucketScheme,
    /// Row-major `n × n` bucket id per pair.
    pub bucket_index: Arc<Vec<u32>>,
    /// Row-major `n × n` edge type on 1-hop pairs, [`NO_ROW`] elsewhere.
    pub edge_index: Arc<Vec<u32>>,
    pub focal: Option<FocalScope>,
}

/// Focal mask for one focal length in both sparse and dense form.
#[derive(Debug, Clone)]
pub struct FocalScope {
    pub mask: FocalMask,
    pub dense: Arc<Vec<bool>>,
}

impl FocalScope {
    pub fn new(mask: FocalMask) -> Self {
        let dense = Arc::new(mask.dense());
        Self { mask, dense }
    }

    pub fn fl(&self) -> usize {
        self.mask.fl()
    }
}

impl GraphContext {
    /// `fl = None` skips the focal mask (enough for full-range-only layers).
    pub fn new(
        graph: &Graph,
        hops: HopMatrix,
        scheme: BucketScheme,
        num_edge_types: usize,
        fl: Option<usize>,
    ) -> Result<Self> {
        let n = graph.num_nodes();
        if hops.n() != n {
            return Err(Error::Input(format!(
                "hop matrix covers {} nodes, graph has {n}",
                hops.n()
            )));
        }
        if let Some(&t) = graph.edge_types().and_then(|t| t.iter().max()) {
            if t as usize >= num_edge_types {
                return Err(Error::Config(format!(
                    "edge type {t} exceeds the configured {num_edge_types} edge types"
                )));
            }
        }
        let mut bucket_index = Vec::with_capacity(n * n);
        let mut edge_index = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let h = hops.get(i, j);
                bucket_index.push(scheme.bucket(h));
                edge_index.push(if h == 1 { graph.edge_type(i, j).unwrap_or(NO_ROW) } else { NO_ROW });
            }
        }
        let focal = fl.map(|fl| FocalScope::new(focal_mask(&hops, fl)));
        Ok(Self {
            n,
            hops,
            scheme,
            bucket_index: Arc::new(bucket_index),
            edge_index: Arc::new(edge_index),
            focal,
        })
    }

    fn table_entry(table: &Tensor, row: u32, head: usize) -> f64 {
        if row == NO_ROW {
            0.0
        } else {
            table.at(row as usize, head)
        }
    }

    /// Scalar bias for pair `(i, j)` of `head`.
    pub fn bias_at(&self, tables: &BiasTables, head: usize, i: usize, j: usize) -> f64 {
        let k = i * self.n + j;
        Self::table_entry(&tables.hop_bias, self.bucket_index[k], head)
            + Self::table_entry(&tables.edge_bias, self.edge_index[k], head)
    }

    pub fn gate_at(&self, gate: &Tensor, head: usize, i: usize, j: usize) -> f64 {
        Self::table_entry(gate, self.bucket_index[i * self.n + j], head)
    }
}

/// Dense `n × n` bias matrix for one head:
/// `hop_bias[bucket(hop)] + edge_bias[type]` on edges, `hop_bias[bucket(hop)]` elsewhere.
pub fn build_bias_matrix(
    hops: &HopMatrix,
    graph: &Graph,
    tables: &BiasTables,
    head: usize,
) -> Result<Tensor> {
    let n = hops.n();
    let mut data = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let h = hops.get(i, j);
            let mut b = tables.hop_bias.at(tables.scheme.bucket(h) as usize, head);
            if h == 1 {
                let t = graph.edge_type(i, j).ok_or_else(|| {
                    Error::Input(format!("hop 1 between {i} and {j} without an edge"))
                })?;
                b += tables.edge_bias.at(t as usize, head);
            }
            data.push(b);
        }
    }
    Tensor::new(vec![n, n], data)
}
