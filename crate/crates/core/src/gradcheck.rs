//! Central-difference gradient checks.
//!
//! Every check builds a scalar by contracting an operation's output with a
//! fixed random weight tensor, then compares the tape gradient with central
//! differences of the forward pass alone.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;

/// Finite-difference step.
pub const FD_EPS: f64 = 1e-5;
/// Pass threshold on the maximum elementwise relative error.
pub const REL_TOL: f64 = 1e-4;
/// Denominator floor so structurally-zero gradients compare on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < REL_TOL
    }
}

/// Compares tape gradients of `f` against central differences for every
/// scalar in `inputs`. `fault`, when set, scales the analytic gradient to
/// provide a negative control.
pub fn check_leaves<F>(inputs: &[Tensor], f: F, fault: Option<f64>) -> Result<(f64, usize)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|x| t.leaf(x.clone())).collect();
        let l = f(&mut t, &vs)?;
        Ok(t.value(l).data()[0])
    };

    let mut worst = 0.0f64;
    let mut count = 0;
    let mut work = inputs.to_vec();
    for (ti, g) in analytic.iter().enumerate() {
        for k in 0..inputs[ti].len() {
            let orig = inputs[ti].data()[k];
            work[ti].data_mut()[k] = orig + FD_EPS;
            let up = eval(&work)?;
            work[ti].data_mut()[k] = orig - FD_EPS;
            let down = eval(&work)?;
            work[ti].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * FD_EPS);
            let a = g.data()[k] * fault.unwrap_or(1.0);
            worst = worst.max(relative_error(a, numeric));
            count += 1;
        }
    }
    Ok((worst, count))
}

pub(crate) fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product")
}

/// Values bounded away from zero so ReLU kinks stay out of the FD stencil.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen::<bool>() { m } else { -m }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape product")
}

/// `sum(out ⊙ w)` with a constant random `w`.
pub(crate) fn contract(tape: &mut Tape, out: Var, w: &Tensor) -> Result<Var> {
    let wv = tape.leaf(w.clone());
    let prod = tape.mul(out, wv)?;
    Ok(tape.sum(prod))
}

fn random_mask(rng: &mut ChaCha8Rng, n: usize) -> Arc<Vec<bool>> {
    let mut m: Vec<bool> = (0..n * n).map(|_| rng.gen_bool(0.5)).collect();
    for i in 0..n {
        m[i * n + i] = true;
    }
    Arc::new(m)
}

type Check = Box<dyn Fn(&mut ChaCha8Rng, Option<f64>) -> Result<(f64, usize)>>;

fn primitive_checks() -> Vec<(&'static str, Check)> {
    let mut checks: Vec<(&'static str, Check)> = Vec::new();
    checks.push(("matmul", Box::new(|rng, fault| {
        let (a, b, w) = (random_tensor(rng, &[3, 4], 1.0), random_tensor(rng, &[4, 2], 1.0), random_tensor(rng, &[3, 2], 1.0));
        check_leaves(&[a, b], |t, v| { let o = t.matmul(v[0], v[1])?; contract(t, o, &w) }, fault)
    })));
    checks.push(("matmul_nt", Box::new(|rng, fault| {
        let (a, b, w) = (random_tensor(rng, &[3, 4], 1.0), random_tensor(rng, &[5, 4], 1.0), random_tensor(rng, &[3, 5], 1.0));
        check_leaves(&[a, b], |t, v| { let o = t.matmul_nt(v[0], v[1])?; contract(t, o, &w) }, fault)
    })));
    checks.push(("add", Box::new(|rng, fault| {
        let (a, b, w) = (random_tensor(rng, &[3, 3], 1.0), random_tensor(rng, &[3, 3], 1.0), random_tensor(rng, &[3, 3], 1.0));
        check_leaves(&[a, b], |t, v| { let o = t.add(v[0], v[1])?; contract(t, o, &w) }, fault)
    })));
    checks.push(("mul", Box::new(|rng, fault| {
        let (a, b, w) = (random_tensor(rng, &[2, 5], 1.0), random_tensor(rng, &[2, 5], 1.0), random_tensor(rng, &[2, 5], 1.0));
        check_leaves(&[a, b], |t, v| { let o = t.mul(v[0], v[1])?; contract(t, o, &w) }, fault)
    })));
    checks.push(("scale", Box::new(|rng, fault| {
        let (a, w) = (random_tensor(rng, &[4, 2], 1.0), random_tensor(rng, &[4, 2], 1.0));
        let s = rng.gen_range(-2.0..2.0);
        check_leaves(&[a], |t, v| { let o = t.scale(v[0], s); contract(t, o, &w) }, fault)
    })));
    checks.push(("relu", Box::new(|rng, fault| {
        let (a, w) = (away_from_zero(rng, &[4, 4]), random_tensor(rng, &[4, 4], 1.0));
        check_leaves(&[a], |t, v| { let o = t.relu(v[0]); contract(t, o, &w) }, fault)
    })));
    checks.push(("linear", Box::new(|rng, fault| {
        let (x, wt, b, w) = (random_tensor(rng, &[5, 3], 1.0), random_tensor(rng, &[3, 4], 1.0), random_tensor(rng, &[4], 1.0), random_tensor(rng, &[5, 4], 1.0));
        check_leaves(&[x, wt, b], |t, v| { let o = t.linear(v[0], v[1], v[2])?; contract(t, o, &w) }, fault)
    })));
    checks.push(("concat_cols", Box::new(|rng, fault| {
        let (a, b, w) = (random_tensor(rng, &[3, 2], 1.0), random_tensor(rng, &[3, 3], 1.0), random_tensor(rng, &[3, 5], 1.0));
        check_leaves(&[a, b], |t, v| { let o = t.concat_cols(&[v[0], v[1]])?; contract(t, o, &w) }, fault)
    })));
    checks.push(("take_rows", Box::new(|rng, fault| {
        let (a, w) = (random_tensor(rng, &[5, 3], 1.0), random_tensor(rng, &[3, 3], 1.0));
        check_leaves(&[a], |t, v| { let o = t.take_rows(v[0], 3)?; contract(t, o, &w) }, fault)
    })));
    checks.push(("masked_row_softmax", Box::new(|rng, fault| {
        let (x, w) = (random_tensor(rng, &[6, 6], 2.0), random_tensor(rng, &[6, 6], 1.0));
        let mask = random_mask(rng, 6);
        check_leaves(&[x], |t, v| { let o = t.masked_row_softmax(v[0], Some(mask.clone()))?; contract(t, o, &w) }, fault)
    })));
    checks.push(("layer_norm", Box::new(|rng, fault| {
        let (x, g, b, w) = (random_tensor(rng, &[4, 5], 1.0), random_tensor(rng, &[5], 1.5), random_tensor(rng, &[5], 1.0), random_tensor(rng, &[4, 5], 1.0));
        check_leaves(&[x, g, b], |t, v| { let o = t.layer_norm(v[0], v[1], v[2])?; contract(t, o, &w) }, fault)
    })));
    checks.push(("embedding_lookup", Box::new(|rng, fault| {
        let (table, w) = (random_tensor(rng, &[4, 3], 1.0), random_tensor(rng, &[6, 3], 1.0));
        let ids: Vec<usize> = (0..6).map(|_| rng.gen_range(0..4)).collect();
        check_leaves(&[table], |t, v| { let o = t.embedding(v[0], &ids)?; contract(t, o, &w) }, fault)
    })));
    checks.push(("table_column", Box::new(|rng, fault| {
        let (table, w) = (random_tensor(rng, &[5, 3], 1.0), random_tensor(rng, &[4, 4], 1.0));
        let index: Arc<Vec<u32>> = Arc::new(
            (0..16).map(|_| if rng.gen_bool(0.8) { rng.gen_range(0..5) } else { crate::autodiff::NO_ROW }).collect(),
        );
        let col = rng.gen_range(0..3);
        check_leaves(&[table], |t, v| { let o = t.table_column(v[0], index.clone(), col, &[4, 4])?; contract(t, o, &w) }, fault)
    })));
    checks.push(("cross_entropy", Box::new(|rng, fault| {
        let logits = random_tensor(rng, &[5, 3], 2.0);
        let labels: Vec<usize> = (0..5).map(|_| rng.gen_range(0..3)).collect();
        let weights: Vec<f64> = (0..3).map(|_| rng.gen_range(0.5..2.0)).collect();
        check_leaves(&[logits], |t, v| t.cross_entropy(v[0], &labels, &weights), fault)
    })));
    checks.push(("sum", Box::new(|rng, fault| {
        let a = random_tensor(rng, &[3, 4], 1.0);
        check_leaves(&[a], |t, v| Ok(t.sum(v[0])), fault)
    })));
    checks
}

/// Names of every check run by [`run_suite`], in order.
pub fn check_names() -> Vec<&'static str> {
    let mut names: Vec<&'static str> = primitive_checks().into_iter().map(|(n, _)| n).collect();
    names.extend(["ffgt_layer", "ffgt_model_2layer"]);
    names
}

/// Runs all primitive checks, a full compound layer and a 2-layer model.
/// `fault` names one check whose analytic gradient is corrupted.
pub fn run_suite(seed: u64, fault: Option<&str>) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (idx, (name, check)) in primitive_checks().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((idx as u64 + 1) << 32));
        let f = (fault == Some(name)).then_some(1.01);
        let (err, checked) = check(&mut rng, f)?;
        out.push(CheckResult { name: name.into(), max_rel_error: err, checked });
    }
    let f = (fault == Some("ffgt_layer")).then_some(1.01);
    let (err, checked) = crate::attention::gradcheck_layer(seed, f)?;
    out.push(CheckResult { name: "ffgt_layer".into(), max_rel_error: err, checked });
    let f = (fault == Some("ffgt_model_2layer")).then_some(1.01);
    let (err, checked) = crate::trainer::gradcheck_model(seed, f)?;
    out.push(CheckResult { name: "ffgt_model_2layer".into(), max_rel_error: err, checked });
    Ok(out)
}
