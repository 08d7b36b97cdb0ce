//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::collections::VecDeque;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use ffgt::attention::{
    attention_head, build_bias_matrix, khop_mpnn_reference, sparse_focal_forward, BiasTables,
    BucketScheme, GraphContext, HeadVars, HeadWeights,
};
use ffgt::autodiff::{Tape, Tensor};
use ffgt::gradcheck::{run_suite, REL_TOL};
use ffgt::graph::{focal_mask, hop_matrix, Graph};
use ffgt::sbm::{generate_dataset, generate_sample, pattern_bank, stream_rng, SbmPatternParams, Split};
use ffgt::trainer::{ablate_fl, mean_std, train, FlSetting, ModelConfig, Splits, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MASK_GRAPHS: usize = 200;
const MASK_BUDGET: Duration = Duration::from_secs(10);
const GRAD_SEEDS: u64 = 10;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const COINCIDENCE_GRAPHS: u64 = 50;
const COINCIDENCE_TOL: f64 = 1e-12;
const MPNN_GRAPHS: u64 = 50;
const MPNN_TOL: f64 = 1e-10;
const SPARSE_TOL: f64 = 1e-12;
const CHAIN_NODES: usize = 200;
const STATS_GRAPHS: usize = 1000;
const STATS_BUDGET: Duration = Duration::from_secs(120);
const TREND_SEEDS: [u64; 3] = [0, 1, 2];
const TREND_SPLIT: (usize, usize, usize) = (2000, 400, 400);
const TREND_BUDGET: Duration = Duration::from_secs(2 * 3600);
const OVERFIT_EPOCHS: usize = 200;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64, connected: bool) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen_bool(p) {
                edges.push((i, j));
            }
        }
    }
    if connected {
        for i in 1..n {
            let j = rng.gen_range(0..i);
            edges.push((j, i));
        }
    }
    edges.sort_unstable();
    edges.dedup();
    Graph::new(n, edges, vec![0; n], None, None).unwrap()
}

/// Hop counts from `s` by breadth-first search over an adjacency matrix.
fn oracle_hops(n: usize, adj: &[Vec<bool>], s: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; n];
    dist[s] = Some(0);
    let mut queue = VecDeque::from([s]);
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if adj[u][v] && dist[v].is_none() {
                dist[v] = Some(dist[u].unwrap() + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

fn mask_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for _ in 0..MASK_GRAPHS {
        let n = rng.gen_range(1..=60);
        let p = [0.02, 0.05, 0.1, 0.3, 0.7][rng.gen_range(0..5)];
        let g = random_graph(&mut rng, n, p, false);
        let mut adj = vec![vec![false; n]; n];
        for &(u, v) in g.edges() {
            adj[u][v] = true;
            adj[v][u] = true;
        }
        let oracle: Vec<Vec<Option<usize>>> = (0..n).map(|s| oracle_hops(n, &adj, s)).collect();
        let hops = hop_matrix(&g);
        for fl in 0..=3 {
            let dense = focal_mask(&hops, fl).dense();
            for i in 0..n {
                for j in 0..n {
                    let want = oracle[i][j].is_some_and(|d| d <= fl);
                    if dense[i * n + j] != want {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    let t = start.elapsed();
    outcome(
        mismatches == 0 && t < MASK_BUDGET,
        format!("{MASK_GRAPHS} graphs, fl 0..=3, {mismatches} mismatching entries, {:.2} s", t.as_secs_f64()),
    )
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut failing = Vec::new();
    for seed in 0..GRAD_SEEDS {
        for r in run_suite(seed, None).unwrap() {
            worst = worst.max(r.max_rel_error);
            if !r.passed() {
                failing.push(format!("{}@{seed}", r.name));
            }
        }
    }
    let t = start.elapsed();
    outcome(
        failing.is_empty() && t < GRAD_BUDGET,
        format!(
            "{GRAD_SEEDS} seeds, worst relative error {worst:.2e} (tol {REL_TOL:e}), failing [{}], {:.1} s",
            failing.join(" "),
            t.as_secs_f64()
        ),
    )
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn run_head(x: &Tensor, w: &HeadWeights, bias: &Tensor, mask: Option<Arc<Vec<bool>>>) -> Tensor {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let hv = HeadVars {
        w_q: tape.leaf(w.w_q.clone()),
        w_k: tape.leaf(w.w_k.clone()),
        w_v: tape.leaf(w.w_v.clone()),
    };
    let b = tape.leaf(bias.clone());
    let out = attention_head(&mut tape, xv, &hv, b, None, mask).unwrap();
    tape.value(out).clone()
}

fn random_head(rng: &mut ChaCha8Rng, d: usize, d_h: usize) -> HeadWeights {
    HeadWeights {
        w_q: random_tensor(rng, &[d, d_h]),
        w_k: random_tensor(rng, &[d, d_h]),
        w_v: random_tensor(rng, &[d, d_h]),
    }
}

fn full_focal_coincidence() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..COINCIDENCE_GRAPHS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let n = rng.gen_range(2..=40);
        let g = random_graph(&mut rng, n, 0.1, true);
        let hops = hop_matrix(&g);
        let fl = hops.diameter() as usize + (seed as usize % 2);
        let scheme = BucketScheme::new(6);
        let tables = BiasTables {
            scheme,
            hop_bias: random_tensor(&mut rng, &[scheme.num_buckets(), 1]),
            edge_bias: random_tensor(&mut rng, &[1, 1]),
        };
        let bias = build_bias_matrix(&hops, &g, &tables, 0).unwrap();
        let x = random_tensor(&mut rng, &[n, 8]);
        let w = random_head(&mut rng, 8, 4);
        let focal = run_head(&x, &w, &bias, Some(Arc::new(focal_mask(&hops, fl).dense())));
        let full = run_head(&x, &w, &bias, None);
        worst = worst.max(focal.max_abs_diff(&full));
    }
    outcome(
        worst <= COINCIDENCE_TOL,
        format!("{COINCIDENCE_GRAPHS} connected graphs, fl >= diameter, max |focal - full| = {worst:.2e}"),
    )
}

fn khop_degeneration() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..MPNN_GRAPHS {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let n = rng.gen_range(2..=40);
        let p = rng.gen_range(0.03..0.3);
        let g = random_graph(&mut rng, n, p, false);
        let hops = hop_matrix(&g);
        let fl = rng.gen_range(0..=3);
        let scheme = BucketScheme::new(fl as u32 + 2);
        let weights: Vec<f64> = (0..=fl).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut hop_bias = Tensor::zeros(&[scheme.num_buckets(), 1]);
        hop_bias.data_mut()[..=fl].copy_from_slice(&weights);
        let tables = BiasTables { scheme, hop_bias, edge_bias: Tensor::zeros(&[1, 1]) };
        let bias = build_bias_matrix(&hops, &g, &tables, 0).unwrap();
        let x = random_tensor(&mut rng, &[n, 6]);
        let mut w = random_head(&mut rng, 6, 3);
        w.w_q = Tensor::zeros(&[6, 3]);
        w.w_k = Tensor::zeros(&[6, 3]);
        let focal = run_head(&x, &w, &bias, Some(Arc::new(focal_mask(&hops, fl).dense())));
        let mpnn = khop_mpnn_reference(&x, &weights, &w.w_v, &hops, fl).unwrap();
        worst = worst.max(focal.max_abs_diff(&mpnn));
    }
    outcome(
        worst <= MPNN_TOL,
        format!("{MPNN_GRAPHS} graphs, zero Q/K, distance-only bias, max error {worst:.2e}"),
    )
}

fn sparse_dense_equivalence() -> Outcome {
    let n = CHAIN_NODES;
    let g = Graph::new(n, (1..n).map(|i| (i - 1, i)).collect(), vec![0; n], None, None).unwrap();
    let hops = hop_matrix(&g);
    let scheme = BucketScheme::new(4);
    let ctx = GraphContext::new(&g, hops.clone(), scheme, 1, Some(1)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let x = random_tensor(&mut rng, &[n, 8]);
    let w = random_head(&mut rng, 8, 4);
    let tables = BiasTables {
        scheme,
        hop_bias: random_tensor(&mut rng, &[scheme.num_buckets(), 1]),
        edge_bias: random_tensor(&mut rng, &[1, 1]),
    };
    let mask = &ctx.focal.as_ref().unwrap().mask;
    let sparse = sparse_focal_forward(&x, &w, &tables, None, 0, &ctx, mask).unwrap();
    let bias = build_bias_matrix(&hops, &g, &tables, 0).unwrap();
    let dense = run_head(&x, &w, &bias, Some(Arc::new(mask.dense())));
    let err = sparse.out.max_abs_diff(&dense);
    outcome(
        err <= SPARSE_TOL && sparse.touched_pairs < 5 * n,
        format!(
            "{n}-node chain, fl = 1: max error {err:.2e}, touched pairs {} (< {} ; dense {})",
            sparse.touched_pairs,
            5 * n,
            n * n
        ),
    )
}

fn dataset_statistics() -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut ok = true;
    let mut prev: Option<(f64, f64)> = None;
    let (n_val, n_test) = (STATS_GRAPHS / 10, STATS_GRAPHS / 10);
    let n_train = STATS_GRAPHS - n_val - n_test;
    for p in [0.16, 0.14, 0.12, 0.10] {
        let ds = generate_dataset(&SbmPatternParams::controlled(p, 0), n_train, n_val, n_test).unwrap();
        let s = ds.stats;
        let within = |v: f64, target: f64, tol: f64| (v - target).abs() <= tol;
        let row_ok = match p {
            0.16 => within(s.avg_nodes, 125.0, 2.0) && within(s.avg_degree, 6.13, 0.3) && within(s.avg_diameter, 6.15, 0.4),
            0.10 => within(s.avg_nodes, 130.0, 2.0) && within(s.avg_degree, 4.85, 0.3) && within(s.avg_diameter, 7.00, 0.5),
            _ => true,
        };
        let monotone = prev.map_or(true, |(deg, diam)| s.avg_degree < deg && s.avg_diameter > diam);
        ok &= row_ok && monotone && s.n_graphs >= STATS_GRAPHS;
        prev = Some((s.avg_degree, s.avg_diameter));
        lines.push(format!(
            "p={p}: nodes {:.2} degree {:.2} diameter {:.2}",
            s.avg_nodes, s.avg_degree, s.avg_diameter
        ));
    }
    let t = start.elapsed();
    ok &= t < STATS_BUDGET;
    outcome(ok, format!("{STATS_GRAPHS} graphs per p; {}; {:.1} s", lines.join("; "), t.as_secs_f64()))
}

fn seed_mean(seeds: &[f64]) -> f64 {
    mean_std(seeds).0
}

fn trend_reproduction() -> Outcome {
    let start = Instant::now();
    let base = ModelConfig::default();
    let cfg = TrainConfig::default();
    let (n_train, n_val, n_test) = TREND_SPLIT;
    let run = |p: f64, fls: &[FlSetting]| {
        let ds = generate_dataset(&SbmPatternParams::controlled(p, 0), n_train, n_val, n_test).unwrap();
        ablate_fl(Splits::from_dataset(&ds, 3), &base, &cfg, fls, &TREND_SEEDS, |r| {
            eprintln!("  p={p} {} test accuracy {:.4} ({:.0} s)", r.run_id, r.test.accuracy, r.wall_clock_secs)
        })
        .unwrap()
    };
    let sparse = run(0.16, &[FlSetting::Vanilla, FlSetting::Focal(1)]);
    let vanilla = seed_mean(&sparse.row(FlSetting::Vanilla).unwrap().accuracy);
    let fl1 = seed_mean(&sparse.row(FlSetting::Focal(1)).unwrap().accuracy);
    let dense = run(0.10, &[FlSetting::Focal(1), FlSetting::Focal(2)]);
    let d1 = seed_mean(&dense.row(FlSetting::Focal(1)).unwrap().accuracy);
    let d2 = seed_mean(&dense.row(FlSetting::Focal(2)).unwrap().accuracy);
    let t = start.elapsed();
    let warning = if d2 >= d1 { "" } else { " [WARNING: p=0.10 fl=2 below fl=1]" };
    outcome(
        fl1 > vanilla && t < TREND_BUDGET,
        format!(
            "p=0.16 mean test accuracy over {} seeds: fl=1 {fl1:.4} vs vanilla {vanilla:.4}; \
             p=0.10: fl=2 {d2:.4} vs fl=1 {d1:.4}{warning}; {:.0} s",
            TREND_SEEDS.len(),
            t.as_secs_f64()
        ),
    )
}

const DET_CONFIG: &str = r#"
[sbm]
seed = 5
n_train = 8
n_val = 3
n_test = 3

[model]
dim = 8
full_heads = 1
focal_heads = 1
mlp_hidden = 16
lap_pe_k = 4

[train]
epochs = 2
batch_size = 4

[ablate]
fl_list = ["vanilla", 1, 2]
seeds = [0, 1]
"#;

fn ffgt(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_ffgt"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("det.toml");
    fs::write(&cfg, DET_CONFIG).unwrap();
    let cfg = cfg.to_str().unwrap();
    let mut compared = 0;
    let mut identical = true;
    for run in ["a", "b"] {
        let root = tmp.path().join(run);
        let (data, tr, ab) = (root.join("data"), root.join("train"), root.join("ablate"));
        let ok = ffgt(&["gen", "--config", cfg, "--out", data.to_str().unwrap()])
            && ffgt(&["train", "--config", cfg, "--data", data.to_str().unwrap(), "--out", tr.to_str().unwrap()])
            && ffgt(&["ablate", "--config", cfg, "--data", data.to_str().unwrap(), "--out", ab.to_str().unwrap()]);
        if !ok {
            return outcome(false, format!("run {run} failed"));
        }
    }
    for sub in ["data", "train", "ablate"] {
        let a = dir_bytes(&tmp.path().join("a").join(sub));
        let b = dir_bytes(&tmp.path().join("b").join(sub));
        compared += a.len();
        identical &= a == b;
    }
    outcome(identical && compared > 0, format!("gen/train/ablate run twice, {compared} files byte-compared"))
}

fn overfit_sanity() -> Outcome {
    let params = SbmPatternParams::controlled(0.16, 9);
    let bank = pattern_bank(&params);
    let sample = generate_sample(&params, &bank, &mut stream_rng(9, Split::Train, 0)).unwrap();
    let one = std::slice::from_ref(&sample);
    let splits = Splits { train: one, val: one, test: one, feature_vocab: 3 };
    let cfg = TrainConfig { epochs: OVERFIT_EPOCHS, batch_size: 1, ..TrainConfig::default() };
    let out = train(splits, &ModelConfig::default(), &cfg, "overfit").unwrap();
    let first = out.report.epochs.iter().find(|e| e.val.is_some_and(|m| m.accuracy == 1.0)).map(|e| e.epoch);
    outcome(
        first.is_some(),
        format!(
            "{} nodes, train accuracy 1.0 first reached at epoch {}",
            sample.graph.num_nodes(),
            first.map_or("never".to_string(), |e| e.to_string())
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 mask correctness", mask_correctness),
        ("2 gradient suite", gradient_suite),
        ("3 full/focal coincidence", full_focal_coincidence),
        ("4 k-hop MPNN degeneration", khop_degeneration),
        ("5 sparse/dense equivalence", sparse_dense_equivalence),
        ("6 dataset statistics", dataset_statistics),
        ("7 trend reproduction", trend_reproduction),
        ("8 determinism", determinism),
        ("9 overfit sanity", overfit_sanity),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let result = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|_| outcome(false, "panicked"));
        failed += usize::from(!result.pass);
        println!("[{}] {name}: {}", if result.pass { "PASS" } else { "FAIL" }, result.detail);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
