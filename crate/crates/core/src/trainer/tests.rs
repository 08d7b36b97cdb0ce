use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::gradcheck::REL_TOL;
use crate::sbm::{generate_dataset, generate_sample, pattern_bank, stream_rng, LabeledSample, SbmPatternParams, Split};

fn small_config() -> ModelConfig {
    ModelConfig { dim: 8, full_heads: 1, focal_heads: 1, mlp_hidden: 16, lap_pe_k: 4, ..ModelConfig::default() }
}

fn one_sample(p: f64, seed: u64) -> LabeledSample {
    let params = SbmPatternParams::controlled(p, seed);
    let bank = pattern_bank(&params);
    generate_sample(&params, &bank, &mut stream_rng(seed, Split::Train, 0)).unwrap()
}

fn tiny_dataset(seed: u64) -> crate::sbm::Dataset {
    let params = SbmPatternParams {
        community_size_range: [5, 9],
        pattern_size: 6,
        ..SbmPatternParams::controlled(0.3, seed)
    };
    generate_dataset(&params, 12, 4, 4).unwrap()
}

#[test]
fn zero_parameters_give_uniform_logits() {
    let cfg = ModelConfig { virtual_node: true, gate_enabled: true, ..small_config() };
    let (model, mut store) = NodeClassifier::new(&cfg, 3, 1).unwrap();
    for t in store.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let g = prepare(&one_sample(0.16, 2), &cfg, 3).unwrap();
    let logits = model.logits(&store, &g).unwrap();
    assert_eq!(logits.shape(), &[g.num_real, NUM_CLASSES]);
    assert!(logits.data().iter().all(|&v| v == 0.0));
}

#[test]
fn feature_outside_vocab_is_a_config_error() {
    let s = one_sample(0.16, 3);
    assert!(matches!(prepare(&s, &small_config(), 2), Err(Error::Config(_))));
}

#[test]
fn virtual_node_is_dropped_from_logits() {
    let cfg = ModelConfig { virtual_node: true, ..small_config() };
    let (model, store) = NodeClassifier::new(&cfg, 3, 4).unwrap();
    let s = one_sample(0.16, 4);
    let g = prepare(&s, &cfg, 3).unwrap();
    assert_eq!(g.feat_ids.len(), s.graph.num_nodes() + 1);
    assert_eq!(g.feat_ids.last(), Some(&3));
    assert_eq!(model.logits(&store, &g).unwrap().dims2().unwrap(), (s.graph.num_nodes(), 2));
    let m = evaluate(&model, &store, &[g]).unwrap();
    assert_eq!(m.nodes, s.graph.num_nodes());
}

fn permuted_sample(s: &LabeledSample, perm: &[usize]) -> LabeledSample {
    let graph = s.graph.permuted(perm).unwrap();
    let mut labels = vec![0; s.labels.len()];
    for (i, &p) in perm.iter().enumerate() {
        labels[p] = s.labels[i];
    }
    LabeledSample { graph, labels }
}

#[test]
fn logits_are_permutation_equivariant() {
    for (seed, virtual_node) in [(5, false), (6, true)] {
        let cfg = ModelConfig { lap_pe_k: 0, virtual_node, gate_enabled: true, ..small_config() };
        let (model, store) = NodeClassifier::new(&cfg, 3, seed).unwrap();
        let s = one_sample(0.16, seed);
        let n = s.graph.num_nodes();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = model.logits(&store, &prepare(&s, &cfg, 3).unwrap()).unwrap();
        let b = model.logits(&store, &prepare(&permuted_sample(&s, &perm), &cfg, 3).unwrap()).unwrap();
        for i in 0..n {
            for c in 0..NUM_CLASSES {
                assert!((a.at(i, c) - b.at(perm[i], c)).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn lap_pe_inputs_permute_up_to_column_sign() {
    let cfg = small_config();
    let s = one_sample(0.16, 7);
    let n = s.graph.num_nodes();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(7));
    let a = prepare(&s, &cfg, 3).unwrap();
    let b = prepare(&permuted_sample(&s, &perm), &cfg, 3).unwrap();
    assert!(!a.lap_degenerate);
    for c in 0..cfg.lap_pe_k {
        let same = (0..n).all(|i| (a.lap.at(i, c) - b.lap.at(perm[i], c)).abs() < 1e-8);
        let flipped = (0..n).all(|i| (a.lap.at(i, c) + b.lap.at(perm[i], c)).abs() < 1e-8);
        assert!(same || flipped, "column {c}");
    }
}

#[test]
fn two_layer_model_gradients_match_finite_differences() {
    for seed in 0..3 {
        let (err, n) = gradcheck_model(seed, None).unwrap();
        assert!(n > 100);
        assert!(err < REL_TOL, "seed {seed}: {err:e}");
    }
    let (err, _) = gradcheck_model(0, Some(1.01)).unwrap();
    assert!(err >= REL_TOL);
}

#[test]
fn metrics_count_confusion() {
    let labels = [0, 0, 0, 1];
    let preds = [0, 0, 1, 1];
    let m = Metrics::from_predictions([(&labels[..], &preds[..])]);
    assert_eq!(m.accuracy, 0.75);
    assert!((m.balanced_accuracy - (2.0 / 3.0 + 1.0) / 2.0).abs() < 1e-15);
    assert_eq!(m.nodes, 4);
}

#[test]
fn single_graph_is_memorised() {
    let s = one_sample(0.16, 11);
    let splits = Splits { train: std::slice::from_ref(&s), val: std::slice::from_ref(&s), test: std::slice::from_ref(&s), feature_vocab: 3 };
    let cfg = TrainConfig { epochs: 200, batch_size: 1, seed: 11, ..TrainConfig::default() };
    let out = train(splits, &ModelConfig::default(), &cfg, "overfit").unwrap();
    let best = out.report.epochs.iter().filter_map(|e| e.val).map(|m| m.accuracy).fold(0.0, f64::max);
    assert_eq!(best, 1.0);
    let losses: Vec<f64> = out.report.epochs.iter().map(|e| e.train_loss).collect();
    let down = losses.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(down as f64 >= 0.9 * (losses.len() - 1) as f64, "{down} of {}", losses.len() - 1);
}

#[test]
fn runs_are_deterministic() {
    let ds = tiny_dataset(12);
    let cfg = TrainConfig { epochs: 3, batch_size: 4, seed: 3, ..TrainConfig::default() };
    let run = || train(Splits::from_dataset(&ds, 3), &small_config(), &cfg, "det").unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.report.to_csv(), b.report.to_csv());
    assert_eq!(a.report.to_string(), b.report.to_string());
    assert_eq!(a.test_predictions, b.test_predictions);
    assert_eq!(
        crate::autodiff::encode_checkpoint(&a.params),
        crate::autodiff::encode_checkpoint(&b.params)
    );
}

#[test]
fn test_accuracy_is_recomputable_from_predictions() {
    let ds = tiny_dataset(13);
    let cfg = TrainConfig { epochs: 2, batch_size: 4, class_weighting: true, ..TrainConfig::default() };
    let out = train(Splits::from_dataset(&ds, 3), &small_config(), &cfg, "dump").unwrap();
    let labels: Vec<usize> = out.test_predictions.iter().map(|p| p.label).collect();
    let preds: Vec<usize> = out.test_predictions.iter().map(|p| p.pred).collect();
    assert_eq!(Metrics::from_predictions([(&labels[..], &preds[..])]), out.report.test);
    let csv = predictions_csv(&out.test_predictions);
    assert_eq!(csv.lines().count(), out.test_predictions.len() + 1);
}

#[test]
fn shuffled_labels_fall_back_to_the_majority_rate() {
    let params = SbmPatternParams::controlled(0.16, 14);
    let mut ds = generate_dataset(&params, 24, 6, 12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for s in ds.train.iter_mut().chain(&mut ds.val).chain(&mut ds.test) {
        s.labels.shuffle(&mut rng);
    }
    let cfg = TrainConfig { epochs: 4, batch_size: 4, ..TrainConfig::default() };
    let out = train(Splits::from_dataset(&ds, 3), &small_config(), &cfg, "null").unwrap();
    let total: usize = ds.test.iter().map(|s| s.labels.len()).sum();
    let ones: usize = ds.test.iter().flat_map(|s| &s.labels).filter(|&&l| l == 1).count();
    let majority = (total - ones).max(ones) as f64 / total as f64;
    assert!((out.report.test.accuracy - majority).abs() < 0.02, "{} vs {majority}", out.report.test.accuracy);
}

#[test]
fn vanilla_ablation_reduces_to_plain_training() {
    let ds = tiny_dataset(15);
    let splits = Splits::from_dataset(&ds, 3);
    let cfg = TrainConfig { epochs: 2, batch_size: 4, seed: 9, ..TrainConfig::default() };
    let mut seen = Vec::new();
    let table = ablate_fl(splits, &small_config(), &cfg, &[FlSetting::Vanilla], &[9], |r| seen.push(r.to_csv())).unwrap();
    let plain = train(splits, &small_config().vanilla(), &cfg, "fl").unwrap();
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.rows[0].accuracy, vec![plain.report.test.accuracy]);
    assert_eq!(seen.len(), 1);
    assert_eq!(table.to_csv().lines().count(), 2);
}

#[test]
fn vanilla_keeps_the_head_budget() {
    let v = ModelConfig::default().vanilla();
    assert_eq!((v.full_heads, v.focal_heads), (4, 0));
    assert_eq!("vanilla".parse::<FlSetting>().unwrap(), FlSetting::Vanilla);
    assert_eq!("3".parse::<FlSetting>().unwrap(), FlSetting::Focal(3));
    assert!("x".parse::<FlSetting>().is_err());
    assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 2f64.sqrt()));
}

#[test]
fn exploding_updates_report_divergence() {
    let ds = tiny_dataset(16);
    let cfg = TrainConfig { epochs: 5, batch_size: 1, lr: 1e300, ..TrainConfig::default() };
    let err = train(Splits::from_dataset(&ds, 3), &small_config(), &cfg, "boom").unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }), "{err}");
}

#[test]
fn invalid_train_config_is_rejected() {
    let ds = tiny_dataset(17);
    for cfg in [
        TrainConfig { lr: 0.0, ..TrainConfig::default() },
        TrainConfig { epochs: 0, ..TrainConfig::default() },
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
    ] {
        assert!(matches!(train(Splits::from_dataset(&ds, 3), &small_config(), &cfg, "x"), Err(Error::Config(_))));
    }
}
