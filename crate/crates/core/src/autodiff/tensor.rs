use crate::error::{input, Error, Result};

/// Dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return input(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: Vec::new(), data: vec![value] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return input("ragged rows");
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// `(rows, cols)` of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            s => input(format!("expected a matrix, got shape {s:?}")),
        }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    /// Plain (untaped) matrix product.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2()?;
        let (k2, p) = other.dims2()?;
        if k != k2 {
            return input(format!(
                "matmul inner dimensions differ: {m}x{k} · {k2}x{p}"
            ));
        }
        let mut out = vec![0.0; m * p];
        matmul_into(&self.data, &other.data, &mut out, m, k, p);
        Tensor::new(vec![m, p], out)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `out += a[m×k] · b[k×p]`.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, p: usize) {
    for i in 0..m {
        let out_row = &mut out[i * p..(i + 1) * p];
        for (t, &aik) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = &b[t * p..(t + 1) * p];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
}

/// `out += a[m×k] · b[p×k]ᵀ`.
pub(crate) fn matmul_nt_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, p: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..p {
            let b_row = &b[j * k..(j + 1) * k];
            out[i * p + j] += a_row.iter().zip(b_row).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out += a[k×m]ᵀ · b[k×p]`.
pub(crate) fn matmul_tn_into(a: &[f64], b: &[f64], out: &mut [f64], k: usize, m: usize, p: usize) {
    for t in 0..k {
        let b_row = &b[t * p..(t + 1) * p];
        for i in 0..m {
            let ati = a[t * m + i];
            if ati == 0.0 {
                continue;
            }
            let out_row = &mut out[i * p..(i + 1) * p];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += ati * bv;
            }
        }
    }
}

/// Row softmax restricted to the masked support, computed by gathering the
/// in-mask entries. `mask` is row-major `rows × cols`; `None` means all-ones.
pub(crate) fn masked_softmax_forward(
    logits: &[f64],
    mask: Option<&[bool]>,
    rows: usize,
    cols: usize,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        let x = &logits[i * cols..(i + 1) * cols];
        let m = mask.map(|m| &m[i * cols..(i + 1) * cols]);
        let keep = |j: usize| m.is_none_or(|m| m[j]);
        if !(0..cols).any(keep) {
            return Err(Error::Invariant(format!("softmax row {i} has an empty mask")));
        }
        let max = (0..cols)
            .filter(|&j| keep(j))
            .map(|j| x[j])
            .fold(f64::NEG_INFINITY, f64::max);
        let y = &mut out[i * cols..(i + 1) * cols];
        let mut total = 0.0;
        for j in (0..cols).filter(|&j| keep(j)) {
            y[j] = (x[j] - max).exp();
            total += y[j];
        }
        for v in y.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

/// Cross-check for the masked softmax: adds `-1e9` to out-of-mask logits and
/// runs a plain dense softmax.
pub fn masked_softmax_reference(logits: &Tensor, mask: &[bool]) -> Result<Tensor> {
    let (r, c) = logits.dims2()?;
    let biased: Vec<f64> = logits
        .data
        .iter()
        .zip(mask)
        .map(|(&x, &m)| if m { x } else { x - 1e9 })
        .collect();
    Tensor::new(vec![r, c], masked_softmax_forward(&biased, None, r, c)?)
}
