use std::sync::Arc;

use super::{BiasTables, GraphContext};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{input, Result};
use crate::graph::{ego_net, FocalMask, HopMatrix};

/// Tape handles of one head's projections, each `d × d_h`.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
}

/// Plain-value projections of one head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
}

/// `(masked_softmax(Q Kᵀ / √d_h + bias, mask) ⊙ gate) · V`.
///
/// `mask = None` attends over every node; `gate = None` skips the product.
pub fn attention_head(
    tape: &mut Tape,
    x: Var,
    head: &HeadVars,
    bias: Var,
    gate: Option<Var>,
    mask: Option<Arc<Vec<bool>>>,
) -> Result<Var> {
    let q = tape.matmul(x, head.w_q)?;
    let k = tape.matmul(x, head.w_k)?;
    let v = tape.matmul(x, head.w_v)?;
    let d_h = tape.value(q).dims2()?.1;
    let scores = tape.matmul_nt(q, k)?;
    let scores = tape.scale(scores, 1.0 / (d_h as f64).sqrt());
    let logits = tape.add(scores, bias)?;
    let mut attn = tape.masked_row_softmax(logits, mask)?;
    if let Some(g) = gate {
        attn = tape.mul(attn, g)?;
    }
    tape.matmul(attn, v)
}

/// Records the `n × n` bias of `head` on the tape:
/// `hop_bias[bucket] + edge_bias[type]` on edges.
pub fn bias_var(
    tape: &mut Tape,
    hop_bias: Var,
    edge_bias: Var,
    ctx: &GraphContext,
    head: usize,
) -> Result<Var> {
    let shape = [ctx.n, ctx.n];
    let hop = tape.table_column(hop_bias, ctx.bucket_index.clone(), head, &shape)?;
    let edge = tape.table_column(edge_bias, ctx.edge_index.clone(), head, &shape)?;
    tape.add(hop, edge)
}

pub fn gate_var(tape: &mut Tape, gate: Var, ctx: &GraphContext, head: usize) -> Result<Var> {
    tape.table_column(gate, ctx.bucket_index.clone(), head, &[ctx.n, ctx.n])
}

/// Output of [`sparse_focal_forward`] with its work counter.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOutput {
    pub out: Tensor,
    /// Number of `(i, j)` pairs whose score was evaluated.
    pub touched_pairs: usize,
}

/// Forward-only focal head that visits only in-mask pairs.
pub fn sparse_focal_forward(
    x: &Tensor,
    head: &HeadWeights,
    tables: &BiasTables,
    gate: Option<&Tensor>,
    head_idx: usize,
    ctx: &GraphContext,
    mask: &FocalMask,
) -> Result<SparseOutput> {
    let n = x.dims2()?.0;
    if mask.n() != n || ctx.n != n {
        return input(format!("mask/context sizes ({}, {}) differ from {n} rows", mask.n(), ctx.n));
    }
    let q = x.matmul(&head.w_q)?;
    let k = x.matmul(&head.w_k)?;
    let v = x.matmul(&head.w_v)?;
    let d_h = q.dims2()?.1;
    if k.dims2()?.1 != d_h {
        return input("query and key widths differ");
    }
    let d_v = v.dims2()?.1;
    let scale = 1.0 / (d_h as f64).sqrt();
    let mut out = vec![0.0; n * d_v];
    let mut touched = 0;
    let mut weights = Vec::new();
    for i in 0..n {
        let row = mask.row(i);
        if row.is_empty() {
            return input(format!("focal mask row {i} is empty"));
        }
        touched += row.len();
        weights.clear();
        let qi = q.row(i);
        for &j in row {
            let dot: f64 = qi.iter().zip(k.row(j)).map(|(a, b)| a * b).sum();
            weights.push(dot * scale + ctx.bias_at(tables, head_idx, i, j));
        }
        let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for w in weights.iter_mut() {
            *w = (*w - max).exp();
            total += *w;
        }
        let out_row = &mut out[i * d_v..(i + 1) * d_v];
        for (&j, w) in row.iter().zip(&weights) {
            let mut a = w / total;
            if let Some(g) = gate {
                a *= ctx.gate_at(g, head_idx, i, j);
            }
            if a == 0.0 {
                continue;
            }
            for (o, &vv) in out_row.iter_mut().zip(v.row(j)) {
                *o += a * vv;
            }
        }
    }
    Ok(SparseOutput { out: Tensor::new(vec![n, d_v], out)?, touched_pairs: touched })
}

/// K-hop message passing with one shared weight per distance:
/// `out_i = Σ_{j ∈ ego(i)} α_i(hop(i, j)) · x_j W_v`, where `α_i` is the
/// softmax of `per_distance_weights` over node `i`'s ego-net.
pub fn khop_mpnn_reference(
    x: &Tensor,
    per_distance_weights: &[f64],
    w_v: &Tensor,
    hops: &HopMatrix,
    fl: usize,
) -> Result<Tensor> {
    if per_distance_weights.len() != fl + 1 {
        return input(format!(
            "need {} per-distance weights for fl = {fl}, got {}",
            fl + 1,
            per_distance_weights.len()
        ));
    }
    let v = x.matmul(w_v)?;
    let (n, d_v) = v.dims2()?;
    let mut out = vec![0.0; n * d_v];
    for i in 0..n {
        let ego = ego_net(hops, i, fl)?;
        if let Some(&j) = ego.iter().find(|&&j| hops.get(i, j) as usize > fl) {
            return input(format!("pair ({i}, {j}) has no distance weight (virtual node?)"));
        }
        let logit = |j: usize| per_distance_weights[hops.get(i, j) as usize];
        let max = ego.iter().map(|&j| logit(j)).fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = ego.iter().map(|&j| (logit(j) - max).exp()).sum();
        for &j in &ego {
            let alpha = (logit(j) - max).exp() / total;
            for c in 0..d_v {
                out[i * d_v + c] += alpha * v.at(j, c);
            }
        }
    }
    Tensor::new(vec![n, d_v], out)
}
