//! Training loop, evaluation, reports and the focal-length ablation.

use std::fmt::{self, Write as _};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::model::{prepare, ModelConfig, NodeClassifier, PreparedGraph, NUM_CLASSES};
use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::sbm::LabeledSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    /// Graphs per optimizer step.
    pub batch_size: usize,
    /// Linear learning-rate ramp over this many steps; 0 disables it.
    pub warmup_steps: usize,
    /// Inverse-frequency class weights in the loss.
    pub class_weighting: bool,
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            lr: 1e-3,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            epochs: 10,
            batch_size: 8,
            warmup_steps: 0,
            class_weighting: false,
            eval_every: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config("train.lr must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("train.epochs, batch_size and eval_every must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam betas must lie in [0, 1) and adam_eps be positive".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps }
    }
}

/// Accuracy over every real node of a split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// Mean per-class recall over classes present in the split.
    pub balanced_accuracy: f64,
    pub nodes: usize,
}

impl Metrics {
    pub fn from_predictions<'a>(pairs: impl IntoIterator<Item = (&'a [usize], &'a [usize])>) -> Self {
        let mut confusion = [[0usize; NUM_CLASSES]; NUM_CLASSES];
        for (labels, preds) in pairs {
            for (&y, &p) in labels.iter().zip(preds) {
                confusion[y][p] += 1;
            }
        }
        let nodes: usize = confusion.iter().flatten().sum();
        let correct: usize = (0..NUM_CLASSES).map(|c| confusion[c][c]).sum();
        let recalls: Vec<f64> = (0..NUM_CLASSES)
            .filter_map(|c| {
                let support: usize = confusion[c].iter().sum();
                (support > 0).then(|| confusion[c][c] as f64 / support as f64)
            })
            .collect();
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Self {
            accuracy: ratio(correct, nodes),
            balanced_accuracy: if recalls.is_empty() {
                0.0
            } else {
                recalls.iter().sum::<f64>() / recalls.len() as f64
            },
            nodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Option<Metrics>,
}

/// Predicted class of one node in the evaluated split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodePrediction {
    pub graph: usize,
    pub node: usize,
    pub label: usize,
    pub pred: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: Metrics,
    pub test: Metrics,
    /// Graphs whose LapPE has repeated eigenvalues (not identifiable up to sign).
    pub lap_degenerate_graphs: usize,
    /// Seconds spent in [`train`]. Not part of the text or CSV renderings.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

fn fl_label(model: &ModelConfig) -> String {
    if model.focal_heads == 0 {
        "vanilla".into()
    } else {
        model.fl.to_string()
    }
}

impl RunReport {
    /// Rows of `run_id,fl,seed,epoch,split,metric,value`, header excluded.
    pub fn csv_rows(&self) -> Vec<String> {
        let fl = fl_label(&self.model);
        let row = |epoch: usize, split: &str, metric: &str, value: f64| {
            format!("{},{},{},{},{},{},{}", self.run_id, fl, self.seed, epoch, split, metric, value)
        };
        let mut rows = Vec::new();
        for e in &self.epochs {
            rows.push(row(e.epoch, "train", "loss", e.train_loss));
            if let Some(v) = e.val {
                rows.push(row(e.epoch, "val", "accuracy", v.accuracy));
                rows.push(row(e.epoch, "val", "balanced_accuracy", v.balanced_accuracy));
            }
        }
        rows.push(row(self.best_epoch, "test", "accuracy", self.test.accuracy));
        rows.push(row(self.best_epoch, "test", "balanced_accuracy", self.test.balanced_accuracy));
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in self.csv_rows() {
            out.push_str(&r);
            out.push('\n');
        }
        out
    }
}

pub const CSV_HEADER: &str = "run_id,fl,seed,epoch,split,metric,value";

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "run {} (fl = {}, seed = {})", self.run_id, fl_label(&self.model), self.seed)?;
        writeln!(f, "epoch  train_loss  val_acc  val_bal_acc")?;
        for e in &self.epochs {
            match e.val {
                Some(v) => writeln!(
                    f,
                    "{:>5}  {:>10.6}  {:>7.4}  {:>11.4}",
                    e.epoch, e.train_loss, v.accuracy, v.balanced_accuracy
                )?,
                None => writeln!(f, "{:>5}  {:>10.6}", e.epoch, e.train_loss)?,
            }
        }
        writeln!(f, "best epoch: {} (val accuracy {:.4})", self.best_epoch, self.best_val.accuracy)?;
        writeln!(
            f,
            "test accuracy: {:.4}  balanced: {:.4}  ({} nodes)",
            self.test.accuracy, self.test.balanced_accuracy, self.test.nodes
        )?;
        if self.lap_degenerate_graphs > 0 {
            writeln!(f, "graphs with sign-ambiguous LapPE: {}", self.lap_degenerate_graphs)?;
        }
        Ok(())
    }
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: RunReport,
    pub model: NodeClassifier,
    /// Parameters of the best validation epoch.
    pub params: ParamStore,
    pub test_predictions: Vec<NodePrediction>,
}

/// Inputs to one run.
#[derive(Debug, Clone, Copy)]
pub struct Splits<'a> {
    pub train: &'a [LabeledSample],
    pub val: &'a [LabeledSample],
    pub test: &'a [LabeledSample],
    pub feature_vocab: u32,
}

impl<'a> Splits<'a> {
    pub fn from_dataset(ds: &'a crate::sbm::Dataset, feature_vocab: u32) -> Self {
        Self { train: &ds.train, val: &ds.val, test: &ds.test, feature_vocab }
    }
}

pub fn prepare_all(samples: &[LabeledSample], config: &ModelConfig, vocab: u32) -> Result<Vec<PreparedGraph>> {
    samples.par_iter().map(|s| prepare(s, config, vocab)).collect()
}

fn class_weights(train: &[PreparedGraph], enabled: bool) -> Vec<f64> {
    if !enabled {
        return vec![1.0; NUM_CLASSES];
    }
    let mut counts = [0usize; NUM_CLASSES];
    for g in train {
        for &l in &g.labels {
            counts[l] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { total as f64 / (NUM_CLASSES * c) as f64 })
        .collect()
}

pub fn predict_all(model: &NodeClassifier, params: &ParamStore, graphs: &[PreparedGraph]) -> Result<Vec<Vec<usize>>> {
    graphs.par_iter().map(|g| model.predict(params, g)).collect()
}

pub fn evaluate(model: &NodeClassifier, params: &ParamStore, graphs: &[PreparedGraph]) -> Result<Metrics> {
    let preds = predict_all(model, params, graphs)?;
    Ok(Metrics::from_predictions(graphs.iter().zip(&preds).map(|(g, p)| (&g.labels[..], &p[..]))))
}

fn sum_grads(parts: Vec<(f64, Vec<Tensor>)>) -> (f64, Vec<Tensor>) {
    let mut iter = parts.into_iter();
    let (mut loss, mut acc) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss += l;
        for (a, b) in acc.iter_mut().zip(&g) {
            a.add_assign(b);
        }
    }
    (loss, acc)
}

/// Trains one model and evaluates the best-validation parameters on test.
pub fn train(splits: Splits<'_>, model_cfg: &ModelConfig, cfg: &TrainConfig, run_id: &str) -> Result<TrainOutcome> {
    let started = Instant::now();
    cfg.validate()?;
    model_cfg.validate()?;
    if splits.train.is_empty() || splits.val.is_empty() || splits.test.is_empty() {
        return Err(Error::Config("train, val and test splits must be non-empty".into()));
    }
    let vocab = splits.feature_vocab;
    let train_g = prepare_all(splits.train, model_cfg, vocab)?;
    let val_g = prepare_all(splits.val, model_cfg, vocab)?;
    let test_g = prepare_all(splits.test, model_cfg, vocab)?;
    let lap_degenerate_graphs =
        train_g.iter().chain(&val_g).chain(&test_g).filter(|g| g.lap_degenerate).count();

    let (model, mut params) = NodeClassifier::new(model_cfg, vocab, cfg.seed)?;
    let weights = class_weights(&train_g, cfg.class_weighting);
    let adam = cfg.adam();
    let mut state = AdamState::new(&params);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_g.len()).collect();

    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, Metrics, ParamStore)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let parts = batch
                .par_iter()
                .map(|&i| model.loss_and_grads(&params, &train_g[i], &weights))
                .collect::<Result<Vec<_>>>()?;
            let (loss, mut grads) = sum_grads(parts);
            if !loss.is_finite() || grads.iter().any(|g| g.data().iter().any(|v| !v.is_finite())) {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("non-finite loss or gradient (batch loss {loss})"),
                });
            }
            epoch_loss += loss;
            let inv = 1.0 / batch.len() as f64;
            for g in &mut grads {
                g.scale_assign(inv);
            }
            let step = state.step as usize + 1;
            let lr = if cfg.warmup_steps > 0 && step < cfg.warmup_steps {
                cfg.lr * step as f64 / cfg.warmup_steps as f64
            } else {
                cfg.lr
            };
            adam_step(&mut params, &grads, &mut state, lr, &adam)?;
        }
        let train_loss = epoch_loss / train_g.len() as f64;
        let val = if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let m = evaluate(&model, &params, &val_g)?;
            if best.as_ref().is_none_or(|(_, b, _)| m.accuracy > b.accuracy) {
                best = Some((epoch, m, params.clone()));
            }
            Some(m)
        } else {
            None
        };
        epochs.push(EpochRecord { epoch, train_loss, val });
    }
    let (best_epoch, best_val, best_params) = best.expect("final epoch is always evaluated");
    let preds = predict_all(&model, &best_params, &test_g)?;
    let test = Metrics::from_predictions(test_g.iter().zip(&preds).map(|(g, p)| (&g.labels[..], &p[..])));
    let test_predictions = test_g
        .iter()
        .zip(&preds)
        .enumerate()
        .flat_map(|(gi, (g, p))| {
            g.labels.iter().zip(p).enumerate().map(move |(node, (&label, &pred))| NodePrediction {
                graph: gi,
                node,
                label,
                pred,
            })
        })
        .collect();
    let report = RunReport {
        run_id: run_id.to_string(),
        seed: cfg.seed,
        model: model_cfg.clone(),
        train: cfg.clone(),
        epochs,
        best_epoch,
        best_val,
        test,
        lap_degenerate_graphs,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome { report, model, params: best_params, test_predictions })
}

/// `graph,node,label,pred` lines with a header.
pub fn predictions_csv(preds: &[NodePrediction]) -> String {
    let mut out = String::from("graph,node,label,pred\n");
    for p in preds {
        let _ = writeln!(out, "{},{},{},{}", p.graph, p.node, p.label, p.pred);
    }
    out
}

/// Focal length setting of an ablation row; `Vanilla` has no focal heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FlSetting {
    Vanilla,
    Focal(usize),
}

impl FlSetting {
    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        match *self {
            FlSetting::Vanilla => base.vanilla(),
            FlSetting::Focal(fl) => base.with_fl(fl),
        }
    }
}

impl fmt::Display for FlSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FlSetting::Vanilla => f.write_str("vanilla"),
            FlSetting::Focal(fl) => write!(f, "{fl}"),
        }
    }
}

impl std::str::FromStr for FlSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "vanilla" => Ok(FlSetting::Vanilla),
            t => t
                .parse()
                .map(FlSetting::Focal)
                .map_err(|_| Error::Config(format!("fl entry {t:?} is neither \"vanilla\" nor an integer"))),
        }
    }
}

impl Serialize for FlSetting {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            FlSetting::Vanilla => s.serialize_str("vanilla"),
            FlSetting::Focal(fl) => s.serialize_u64(*fl as u64),
        }
    }
}

impl<'de> Deserialize<'de> for FlSetting {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(usize),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(fl) => Ok(FlSetting::Focal(fl)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub fl: FlSetting,
    pub seeds: Vec<u64>,
    pub accuracy: Vec<f64>,
    pub balanced_accuracy: Vec<f64>,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, fl: FlSetting) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.fl == fl)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("fl,runs,mean_accuracy,std_accuracy,mean_balanced_accuracy,std_balanced_accuracy\n");
        for r in &self.rows {
            let (m, s) = mean_std(&r.accuracy);
            let (bm, bs) = mean_std(&r.balanced_accuracy);
            let _ = writeln!(out, "{},{},{},{},{},{}", r.fl, r.accuracy.len(), m, s, bm, bs);
        }
        out
    }
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>8}  {:>18}  {:>18}", "fl", "accuracy", "balanced")?;
        for r in &self.rows {
            let (m, s) = mean_std(&r.accuracy);
            let (bm, bs) = mean_std(&r.balanced_accuracy);
            writeln!(
                f,
                "{:>8}  {:>8.4} ± {:<7.4}  {:>8.4} ± {:<7.4}",
                r.fl.to_string(),
                m,
                s,
                bm,
                bs
            )?;
        }
        Ok(())
    }
}

/// One training run per `(fl, seed)`; `on_run` sees every finished report in order.
pub fn ablate_fl(
    splits: Splits<'_>,
    base: &ModelConfig,
    cfg: &TrainConfig,
    fl_list: &[FlSetting],
    seeds: &[u64],
    mut on_run: impl FnMut(&RunReport),
) -> Result<AblationTable> {
    if fl_list.is_empty() || seeds.is_empty() {
        return Err(Error::Config("ablation needs a non-empty fl_list and seed list".into()));
    }
    let mut rows = Vec::with_capacity(fl_list.len());
    for &fl in fl_list {
        let model_cfg = fl.apply(base);
        let mut row = AblationRow { fl, seeds: seeds.to_vec(), accuracy: Vec::new(), balanced_accuracy: Vec::new() };
        for &seed in seeds {
            let run_cfg = TrainConfig { seed, ..cfg.clone() };
            let run_id = match fl {
                FlSetting::Vanilla => format!("vanilla-s{seed}"),
                FlSetting::Focal(k) => format!("fl{k}-s{seed}"),
            };
            let outcome = train(splits, &model_cfg, &run_cfg, &run_id)?;
            row.accuracy.push(outcome.report.test.accuracy);
            row.balanced_accuracy.push(outcome.report.test.balanced_accuracy);
            on_run(&outcome.report);
        }
        rows.push(row);
    }
    Ok(AblationTable { rows })
}
