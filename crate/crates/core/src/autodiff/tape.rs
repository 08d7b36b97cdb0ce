use std::sync::Arc;

use super::tensor::{masked_softmax_forward, matmul_into, matmul_nt_into, matmul_tn_into};
use super::{ParamStore, Tensor, LAYER_NORM_EPS, NO_ROW};
use crate::error::{input, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    Add(Var, Var),
    /// Matrix plus a row vector broadcast over rows.
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sum(Var),
    ConcatCols(Vec<Var>),
    TakeRows(Var),
    MaskedSoftmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    /// Gather of one column of a `rows × cols` table; [`NO_ROW`] entries read as 0.
    TableColumn {
        table: Var,
        index: Arc<Vec<u32>>,
        col: usize,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        weights: Vec<f64>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Ordered record of primitive operations. Parents always precede children.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every recorded value.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` does not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = &self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Handle of the `idx`-th recorded value.
    pub fn var_at(&self, idx: usize) -> Option<Var> {
        (idx < self.nodes.len()).then_some(Var(idx))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records every parameter of `store` as a leaf, in store order.
    pub fn bind(&mut self, store: &ParamStore) -> Vec<Var> {
        store.tensors().iter().map(|t| self.leaf(t.clone())).collect()
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        self.value(v).dims2()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ` for `a: m×k`, `b: p×k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a)?;
        let (p, k2) = self.dims2(b)?;
        if k != k2 {
            return input(format!("matmul_nt inner dimensions differ: {m}x{k} · ({p}x{k2})ᵀ"));
        }
        let mut out = vec![0.0; m * p];
        matmul_nt_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, p);
        Ok(self.push(Tensor::new(vec![m, p], out)?, Op::MatMulNt(a, b)))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return input(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// `x[n×d] + bias[d]` on every row.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (n, d) = self.dims2(x)?;
        if self.value(bias).len() != d {
            return input(format!("row bias has {} entries, matrix has {d} columns", self.value(bias).len()));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for r in 0..n {
            for (v, bv) in data[r * d..(r + 1) * d].iter_mut().zip(b) {
                *v += bv;
            }
        }
        Ok(self.push(Tensor::new(vec![n, d], data)?, Op::AddRow(x, bias)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.scale_assign(s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let data = v.data().iter().map(|&x| x.max(0.0)).collect();
        let out = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Relu(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Affine layer `x · w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    /// Concatenation of matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return input("concat of zero tensors");
        };
        let n = self.dims2(first)?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p)?;
            if r != n {
                return input(format!("concat row counts differ: {n} vs {r}"));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for r in 0..n {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        Ok(self.push(Tensor::new(vec![n, total], data)?, Op::ConcatCols(parts.to_vec())))
    }

    /// First `count` rows of a matrix.
    pub fn take_rows(&mut self, x: Var, count: usize) -> Result<Var> {
        let (n, d) = self.dims2(x)?;
        if count > n {
            return input(format!("take_rows({count}) on a matrix with {n} rows"));
        }
        let data = self.value(x).data()[..count * d].to_vec();
        Ok(self.push(Tensor::new(vec![count, d], data)?, Op::TakeRows(x)))
    }

    /// Row softmax over the in-mask entries only; out-of-mask outputs are exactly 0.
    /// `mask` is a row-major boolean matrix of the same shape, `None` for all-ones.
    pub fn masked_row_softmax(&mut self, logits: Var, mask: Option<Arc<Vec<bool>>>) -> Result<Var> {
        let (r, c) = self.dims2(logits)?;
        if let Some(m) = &mask {
            if m.len() != r * c {
                return input(format!("mask has {} cells, logits are {r}x{c}", m.len()));
            }
        }
        let out = masked_softmax_forward(self.value(logits).data(), mask.as_deref().map(Vec::as_slice), r, c)?;
        Ok(self.push(Tensor::new(vec![r, c], out)?, Op::MaskedSoftmax(logits)))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (n, d) = self.dims2(x)?;
        if d == 0 {
            return input("layer_norm over zero features");
        }
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return input(format!("layer_norm affine parameters must have {d} entries"));
        }
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; n * d];
        let mut inv_std = vec![0.0; n];
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat[r * d + c] = h;
                out[r * d + c] = h * g[c] + b[c];
            }
        }
        let value = Tensor::new(vec![n, d], out)?;
        Ok(self.push(value, Op::LayerNorm { x, gamma, beta, xhat, inv_std }))
    }

    /// Row gather from a `v × d` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.dims2(table)?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return input(format!("embedding id {bad} out of range for {v} rows"));
        }
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::new(vec![ids.len(), d], data)?;
        Ok(self.push(out, Op::Embedding { table, ids: ids.to_vec() }))
    }

    /// Builds a tensor of `shape` whose k-th entry is `table[index[k]][col]`
    /// (0 where `index[k]` is [`NO_ROW`]).
    pub fn table_column(
        &mut self,
        table: Var,
        index: Arc<Vec<u32>>,
        col: usize,
        shape: &[usize],
    ) -> Result<Var> {
        let (rows, cols) = self.dims2(table)?;
        if col >= cols {
            return input(format!("column {col} out of range for table with {cols} columns"));
        }
        if index.len() != shape.iter().product::<usize>() {
            return input("table_column index length does not match shape");
        }
        let t = self.value(table).data();
        let mut data = Vec::with_capacity(index.len());
        for slot in index.iter() {
            data.push(match *slot {
                NO_ROW => 0.0,
                r if (r as usize) < rows => t[r as usize * cols + col],
                r => return input(format!("table row {r} out of range for {rows} rows")),
            });
        }
        let out = Tensor::new(shape.to_vec(), data)?;
        Ok(self.push(out, Op::TableColumn { table, index, col }))
    }

    /// Class-weighted mean negative log-likelihood. Weights are rescaled to
    /// mean 1 over classes before use.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], class_weights: &[f64]) -> Result<Var> {
        let (n, c) = self.dims2(logits)?;
        if labels.len() != n {
            return input(format!("{} labels for {n} rows", labels.len()));
        }
        if class_weights.len() != c {
            return input(format!("{} class weights for {c} classes", class_weights.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return input(format!("label {bad} out of range for {c} classes"));
        }
        let mean_w = class_weights.iter().sum::<f64>() / c as f64;
        if !(mean_w > 0.0) {
            return input("class weights must have a positive mean");
        }
        let weights: Vec<f64> = class_weights.iter().map(|w| w / mean_w).collect();
        let x = self.value(logits).data();
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for r in 0..n {
            let row = &x[r * c..(r + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for k in 0..c {
                probs[r * c + k] = (row[k] - lse).exp();
            }
            loss += weights[labels[r]] * (lse - row[labels[r]]);
        }
        if n > 0 {
            loss /= n as f64;
        }
        let op = Op::CrossEntropy { logits, labels: labels.to_vec(), weights, probs };
        Ok(self.push(Tensor::scalar(loss), op))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return input(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims2(*a)?;
                let p = self.dims2(*b)?.1;
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                // dA = dC · Bᵀ
                matmul_nt_into(g, bv, slot(grads, *a, m * k), m, p, k);
                // dB = Aᵀ · dC
                matmul_tn_into(av, g, slot(grads, *b, k * p), m, k, p);
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = self.dims2(*a)?;
                let p = self.dims2(*b)?.0;
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                // C = A Bᵀ: dA = dC · B, dB = dCᵀ · A
                matmul_into(g, bv, slot(grads, *a, m * k), m, p, k);
                matmul_tn_into(g, av, slot(grads, *b, p * k), m, p, k);
            }
            Op::Add(a, b) => {
                for (o, x) in slot(grads, *a, g.len()).iter_mut().zip(g) {
                    *o += x;
                }
                for (o, x) in slot(grads, *b, g.len()).iter_mut().zip(g) {
                    *o += x;
                }
            }
            Op::AddRow(x, bias) => {
                for (o, v) in slot(grads, *x, g.len()).iter_mut().zip(g) {
                    *o += v;
                }
                let d = self.value(*bias).len();
                let gb = slot(grads, *bias, d);
                for row in g.chunks(d) {
                    for (o, v) in gb.iter_mut().zip(row) {
                        *o += v;
                    }
                }
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                for ((o, x), y) in slot(grads, *a, g.len()).iter_mut().zip(g).zip(bv) {
                    *o += x * y;
                }
                for ((o, x), y) in slot(grads, *b, g.len()).iter_mut().zip(g).zip(av) {
                    *o += x * y;
                }
            }
            Op::Scale(a, s) => {
                for (o, x) in slot(grads, *a, g.len()).iter_mut().zip(g) {
                    *o += s * x;
                }
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                for ((o, x), &v) in slot(grads, *a, g.len()).iter_mut().zip(g).zip(av) {
                    if v > 0.0 {
                        *o += x;
                    }
                }
            }
            Op::Sum(a) => {
                let len = self.value(*a).len();
                for o in slot(grads, *a, len).iter_mut() {
                    *o += g[0];
                }
            }
            Op::ConcatCols(parts) => {
                let (n, total) = node.value.dims2()?;
                let mut offset = 0;
                for &p in parts {
                    let w = self.dims2(p)?.1;
                    let gp = slot(grads, p, n * w);
                    for r in 0..n {
                        let src = &g[r * total + offset..r * total + offset + w];
                        for (o, v) in gp[r * w..(r + 1) * w].iter_mut().zip(src) {
                            *o += v;
                        }
                    }
                    offset += w;
                }
            }
            Op::TakeRows(x) => {
                let len = self.value(*x).len();
                for (o, v) in slot(grads, *x, len).iter_mut().zip(g) {
                    *o += v;
                }
            }
            Op::MaskedSoftmax(x) => {
                let (r, c) = node.value.dims2()?;
                let y = node.value.data();
                let gx = slot(grads, *x, r * c);
                for i in 0..r {
                    let yr = &y[i * c..(i + 1) * c];
                    let gr = &g[i * c..(i + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        gx[i * c + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let (n, d) = node.value.dims2()?;
                let gam = self.value(*gamma).data();
                {
                    let gg = slot(grads, *gamma, d);
                    for r in 0..n {
                        for c in 0..d {
                            gg[c] += g[r * d + c] * xhat[r * d + c];
                        }
                    }
                }
                {
                    let gb = slot(grads, *beta, d);
                    for r in 0..n {
                        for c in 0..d {
                            gb[c] += g[r * d + c];
                        }
                    }
                }
                let gx = slot(grads, *x, n * d);
                let df = d as f64;
                for r in 0..n {
                    let mut sum_dh = 0.0;
                    let mut sum_dh_h = 0.0;
                    for c in 0..d {
                        let dh = g[r * d + c] * gam[c];
                        sum_dh += dh;
                        sum_dh_h += dh * xhat[r * d + c];
                    }
                    for c in 0..d {
                        let dh = g[r * d + c] * gam[c];
                        gx[r * d + c] +=
                            inv_std[r] * (dh - sum_dh / df - xhat[r * d + c] * sum_dh_h / df);
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let (v, d) = self.dims2(*table)?;
                let gt = slot(grads, *table, v * d);
                for (r, &id) in ids.iter().enumerate() {
                    for c in 0..d {
                        gt[id * d + c] += g[r * d + c];
                    }
                }
            }
            Op::TableColumn { table, index, col } => {
                let (rows, cols) = self.dims2(*table)?;
                let gt = slot(grads, *table, rows * cols);
                for (&r, v) in index.iter().zip(g) {
                    if r != NO_ROW {
                        gt[r as usize * cols + col] += v;
                    }
                }
            }
            Op::CrossEntropy { logits, labels, weights, probs } => {
                let (n, c) = self.dims2(*logits)?;
                let gl = slot(grads, *logits, n * c);
                let scale = g[0] / n.max(1) as f64;
                for (r, &l) in labels.iter().enumerate() {
                    let w = weights[l] * scale;
                    for k in 0..c {
                        let target = if k == l { 1.0 } else { 0.0 };
                        gl[r * c + k] += w * (probs[r * c + k] - target);
                    }
                }
            }
        }
        Ok(())
    }
}
