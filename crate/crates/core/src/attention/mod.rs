//! The compound attention layer: `M` full-range heads over every node pair
//! and `N` focal heads restricted to `fl`-hop ego-nets, merged by
//! concatenation and a linear layer, followed by a residual 2-layer MLP.
//!
//! ```text
//! y1  = LN(x + W_merge · concat(full_1..full_M, focal_1..focal_N) + b)
//! out = LN(y1 + MLP(y1))
//! ```
//!
//! Head `h` reads column `h` of the bias and gate tables, full heads first.

mod bias;
mod head;

pub use bias::{build_bias_matrix, BiasTables, BucketScheme, FocalScope, GateTable, GraphContext};
pub use head::{
    attention_head, bias_var, gate_var, khop_mpnn_reference, sparse_focal_forward, HeadVars,
    HeadWeights, SparseOutput,
};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Shape and behaviour of one compound layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub dim: usize,
    pub full_heads: usize,
    pub focal_heads: usize,
    pub fl: usize,
    pub mlp_hidden: usize,
    pub gate_enabled: bool,
    pub max_hop_bucket: u32,
    pub num_edge_types: usize,
}

impl LayerConfig {
    pub fn num_heads(&self) -> usize {
        self.full_heads + self.focal_heads
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.num_heads().max(1)
    }

    pub fn scheme(&self) -> BucketScheme {
        BucketScheme::new(self.max_hop_bucket)
    }

    pub fn validate(&self) -> Result<()> {
        if self.full_heads == 0 {
            return Err(Error::Config("at least one full-range head is required".into()));
        }
        if self.dim == 0 || !self.dim.is_multiple_of(self.num_heads()) {
            return Err(Error::Config(format!(
                "dim {} is not divisible by {} heads",
                self.dim,
                self.num_heads()
            )));
        }
        if self.mlp_hidden == 0 || self.num_edge_types == 0 {
            return Err(Error::Config("mlp_hidden and num_edge_types must be positive".into()));
        }
        Ok(())
    }
}

/// Parameter ids of one head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadIds {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
}

impl HeadIds {
    fn vars(&self, params: &[Var]) -> HeadVars {
        HeadVars { w_q: params[self.w_q.0], w_k: params[self.w_k.0], w_v: params[self.w_v.0] }
    }
}

/// Parameter layout of one compound layer inside a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct FfgtLayer {
    pub config: LayerConfig,
    pub full_heads: Vec<HeadIds>,
    pub focal_heads: Vec<HeadIds>,
    pub hop_bias: ParamId,
    pub edge_bias: ParamId,
    pub gate: Option<ParamId>,
    pub merge_w: ParamId,
    pub merge_b: ParamId,
    pub norm1_gamma: ParamId,
    pub norm1_beta: ParamId,
    pub mlp_w1: ParamId,
    pub mlp_b1: ParamId,
    pub mlp_w2: ParamId,
    pub mlp_b2: ParamId,
    pub norm2_gamma: ParamId,
    pub norm2_beta: ParamId,
}

/// Glorot-uniform `rows × cols` matrix.
pub fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
    Tensor::new(vec![rows, cols], data).expect("shape product")
}

impl FfgtLayer {
    /// Registers a freshly initialised layer under `prefix` in `store`.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        config: LayerConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let d_h = config.head_dim();
        let heads = config.num_heads();
        let buckets = config.scheme().num_buckets();
        let mut head = |store: &mut ParamStore, kind: &str, h: usize| HeadIds {
            w_q: store.add(format!("{prefix}.{kind}{h}.w_q"), xavier(rng, d, d_h)),
            w_k: store.add(format!("{prefix}.{kind}{h}.w_k"), xavier(rng, d, d_h)),
            w_v: store.add(format!("{prefix}.{kind}{h}.w_v"), xavier(rng, d, d_h)),
        };
        let full_heads = (0..config.full_heads).map(|h| head(store, "full", h)).collect();
        let focal_heads = (0..config.focal_heads).map(|h| head(store, "focal", h)).collect();
        let hop_bias = store.add(format!("{prefix}.hop_bias"), Tensor::zeros(&[buckets, heads]));
        let edge_bias = store.add(
            format!("{prefix}.edge_bias"),
            Tensor::zeros(&[config.num_edge_types, heads]),
        );
        let gate = config
            .gate_enabled
            .then(|| store.add(format!("{prefix}.gate"), Tensor::full(&[buckets, heads], 1.0)));
        let merge_w = store.add(format!("{prefix}.merge.w"), xavier(rng, d, d));
        let merge_b = store.add(format!("{prefix}.merge.b"), Tensor::zeros(&[d]));
        let norm1_gamma = store.add(format!("{prefix}.norm1.gamma"), Tensor::full(&[d], 1.0));
        let norm1_beta = store.add(format!("{prefix}.norm1.beta"), Tensor::zeros(&[d]));
        let h = config.mlp_hidden;
        let mlp_w1 = store.add(format!("{prefix}.mlp.w1"), xavier(rng, d, h));
        let mlp_b1 = store.add(format!("{prefix}.mlp.b1"), Tensor::zeros(&[h]));
        let mlp_w2 = store.add(format!("{prefix}.mlp.w2"), xavier(rng, h, d));
        let mlp_b2 = store.add(format!("{prefix}.mlp.b2"), Tensor::zeros(&[d]));
        let norm2_gamma = store.add(format!("{prefix}.norm2.gamma"), Tensor::full(&[d], 1.0));
        let norm2_beta = store.add(format!("{prefix}.norm2.beta"), Tensor::zeros(&[d]));
        Ok(Self {
            config,
            full_heads,
            focal_heads,
            hop_bias,
            edge_bias,
            gate,
            merge_w,
            merge_b,
            norm1_gamma,
            norm1_beta,
            mlp_w1,
            mlp_b1,
            mlp_w2,
            mlp_b2,
            norm2_gamma,
            norm2_beta,
        })
    }

    /// Ids of head `h` in table-column order (full heads first).
    pub fn head(&self, h: usize) -> HeadIds {
        if h < self.full_heads.len() {
            self.full_heads[h]
        } else {
            self.focal_heads[h - self.full_heads.len()]
        }
    }

    pub fn head_weights(&self, store: &ParamStore, h: usize) -> HeadWeights {
        let ids = self.head(h);
        HeadWeights {
            w_q: store.get(ids.w_q).clone(),
            w_k: store.get(ids.w_k).clone(),
            w_v: store.get(ids.w_v).clone(),
        }
    }

    pub fn bias_tables(&self, store: &ParamStore) -> BiasTables {
        BiasTables {
            scheme: self.config.scheme(),
            hop_bias: store.get(self.hop_bias).clone(),
            edge_bias: store.get(self.edge_bias).clone(),
        }
    }

    pub fn gate_table(&self, store: &ParamStore) -> GateTable {
        self.gate.map(|g| store.get(g).clone())
    }

    /// Outputs of every head, full heads first, each `n × d_h`.
    pub fn head_outputs(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: Var,
        ctx: &GraphContext,
    ) -> Result<Vec<Var>> {
        let focal_mask = if self.focal_heads.is_empty() {
            None
        } else {
            let scope = ctx.focal.as_ref().ok_or_else(|| {
                Error::Config("focal heads need a graph context with a focal mask".into())
            })?;
            if scope.fl() != self.config.fl {
                return Err(Error::Config(format!(
                    "context mask has fl = {}, layer expects {}",
                    scope.fl(),
                    self.config.fl
                )));
            }
            Some(scope.dense.clone())
        };
        if ctx.scheme != self.config.scheme() {
            return Err(Error::Config("context bucket scheme differs from the layer's".into()));
        }
        let hop_bias = params[self.hop_bias.0];
        let edge_bias = params[self.edge_bias.0];
        let mut outs = Vec::with_capacity(self.config.num_heads());
        for h in 0..self.config.num_heads() {
            let bias = bias_var(tape, hop_bias, edge_bias, ctx, h)?;
            let gate = match self.gate {
                Some(g) => Some(gate_var(tape, params[g.0], ctx, h)?),
                None => None,
            };
            let mask = if h < self.full_heads.len() { None } else { focal_mask.clone() };
            outs.push(attention_head(tape, x, &self.head(h).vars(params), bias, gate, mask)?);
        }
        Ok(outs)
    }

    /// Full layer forward. `params` are the tape leaves bound from the store.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], x: Var, ctx: &GraphContext) -> Result<Var> {
        let p = |id: ParamId| params[id.0];
        let heads = self.head_outputs(tape, params, x, ctx)?;
        let concat = tape.concat_cols(&heads)?;
        let merged = tape.linear(concat, p(self.merge_w), p(self.merge_b))?;
        let res1 = tape.add(x, merged)?;
        let y1 = tape.layer_norm(res1, p(self.norm1_gamma), p(self.norm1_beta))?;
        let hidden = tape.linear(y1, p(self.mlp_w1), p(self.mlp_b1))?;
        let hidden = tape.relu(hidden);
        let mlp = tape.linear(hidden, p(self.mlp_w2), p(self.mlp_b2))?;
        let res2 = tape.add(y1, mlp)?;
        tape.layer_norm(res2, p(self.norm2_gamma), p(self.norm2_beta))
    }
}

/// Finite-difference check of one randomised compound layer on a small graph,
/// differentiating with respect to the input and every parameter.
pub(crate) fn gradcheck_layer(seed: u64, fault: Option<f64>) -> Result<(f64, usize)> {
    use crate::gradcheck::{check_leaves, contract, random_tensor};
    use crate::graph::{hop_matrix, Graph};
    use rand::SeedableRng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1A7E_5EED);
    let n = 7;
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.gen_range(0..i), i)).collect();
    edges.push((0, n - 1));
    edges.sort_unstable();
    edges.dedup();
    let types = edges.iter().map(|_| rng.gen_range(0..2)).collect();
    let graph = Graph::new(n, edges, vec![0; n], None, Some(types))?;
    let config = LayerConfig {
        dim: 8,
        full_heads: 1,
        focal_heads: 1,
        fl: 1,
        mlp_hidden: 6,
        gate_enabled: true,
        max_hop_bucket: 2,
        num_edge_types: 2,
    };
    let mut store = ParamStore::new();
    let layer = FfgtLayer::new(&mut store, "l0", config.clone(), &mut rng)?;
    for t in store.tensors_mut() {
        let noise = random_tensor(&mut rng, t.shape(), 0.5);
        t.add_assign(&noise);
    }
    let ctx = GraphContext::new(&graph, hop_matrix(&graph), config.scheme(), 2, Some(config.fl))?;
    let x = random_tensor(&mut rng, &[n, config.dim], 1.0);
    let w = random_tensor(&mut rng, &[n, config.dim], 1.0);
    let mut inputs = vec![x];
    inputs.extend(store.tensors().iter().cloned());
    check_leaves(
        &inputs,
        |tape, vars| {
            let out = layer.forward(tape, &vars[1..], vars[0], &ctx)?;
            contract(tape, out, &w)
        },
        fault,
    )
}
