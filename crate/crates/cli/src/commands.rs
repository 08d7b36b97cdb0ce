use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ffgt::autodiff::encode_checkpoint;
use ffgt::gradcheck::{check_names, run_suite, REL_TOL};
use ffgt::graph::{focal_mask, hop_matrix, read_graphs, write_graphs, Graph};
use ffgt::sbm::{dataset_stats, generate_dataset, DatasetStats, LabeledSample};
use ffgt::trainer::{ablate_fl, predictions_csv, train, RunReport, Splits, CSV_HEADER};
use serde::{Deserialize, Serialize};

use crate::config::{Config, SbmSection};
use crate::error::CliError;

pub const SPLITS: [&str; 3] = ["train", "val", "test"];
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataManifest {
    pub sbm: SbmSection,
    pub counts: Counts,
    pub stats: DatasetStats,
    pub config: Config,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn out_dir(out: Option<&Path>) -> Result<PathBuf, CliError> {
    let dir = out.ok_or_else(|| CliError::usage("--out is required for this command"))?;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    Ok(dir.to_path_buf())
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

fn read_graph_file(path: &Path) -> Result<Vec<Graph>, CliError> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    read_graphs(BufReader::new(f)).map_err(|e| io_err(path, e))
}

pub fn gen(cfg: &Config, out: Option<&Path>) -> Result<String, CliError> {
    let dir = out_dir(out)?;
    let s = &cfg.sbm;
    let ds = generate_dataset(&s.params(), s.n_train, s.n_val, s.n_test)?;
    for (name, split) in SPLITS.iter().zip([&ds.train, &ds.val, &ds.test]) {
        let path = dir.join(format!("{name}.jsonl"));
        let f = File::create(&path).map_err(|e| io_err(&path, e))?;
        write_graphs(BufWriter::new(f), split.iter().map(|x| &x.graph)).map_err(|e| io_err(&path, e))?;
    }
    let manifest = DataManifest {
        sbm: s.clone(),
        counts: Counts { train: ds.train.len(), val: ds.val.len(), test: ds.test.len() },
        stats: ds.stats,
        config: cfg.clone(),
    };
    write_file(&dir.join(MANIFEST), &json(&manifest))?;
    Ok(stats_text(&ds.stats))
}

fn stats_text(st: &DatasetStats) -> String {
    format!(
        "graphs: {}\navg nodes: {:.2}\navg degree: {:.2}\navg diameter: {:.2}\n",
        st.n_graphs, st.avg_nodes, st.avg_degree, st.avg_diameter
    )
}

/// Statistics of one graph file, or of every split in a data directory.
pub fn stats(path: &Path) -> Result<String, CliError> {
    let graphs = if path.is_dir() {
        let mut all = Vec::new();
        for name in SPLITS {
            all.extend(read_graph_file(&path.join(format!("{name}.jsonl")))?);
        }
        all
    } else {
        read_graph_file(path)?
    };
    Ok(stats_text(&dataset_stats(&graphs)?))
}

pub struct LoadedData {
    pub train: Vec<LabeledSample>,
    pub val: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

/// Reads a generated data directory, insisting that it was produced by the
/// same `[sbm]` settings.
pub fn load_data(cfg: &Config, dir: &Path) -> Result<LoadedData, CliError> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| io_err(&mpath, e))?;
    let manifest: DataManifest =
        serde_json::from_str(&text).map_err(|e| io_err(&mpath, format!("malformed manifest: {e}")))?;
    if manifest.sbm != cfg.sbm {
        let ours = serde_json::to_value(&cfg.sbm).expect("serializable");
        let theirs = serde_json::to_value(&manifest.sbm).expect("serializable");
        let differing: Vec<&str> = ours
            .as_object()
            .expect("table")
            .iter()
            .filter(|(k, v)| theirs.get(k.as_str()) != Some(*v))
            .map(|(k, _)| k.as_str())
            .collect();
        return Err(CliError::mismatch(format!(
            "data in {} was generated with different [sbm] settings: {}",
            dir.display(),
            differing.join(", ")
        )));
    }
    let mut splits = Vec::with_capacity(3);
    for (name, want) in SPLITS.iter().zip([manifest.counts.train, manifest.counts.val, manifest.counts.test]) {
        let path = dir.join(format!("{name}.jsonl"));
        let graphs = read_graph_file(&path)?;
        if graphs.len() != want {
            return Err(CliError::mismatch(format!(
                "{} holds {} graphs, manifest says {want}",
                path.display(),
                graphs.len()
            )));
        }
        let samples = graphs
            .into_iter()
            .map(LabeledSample::from_graph)
            .collect::<ffgt::Result<Vec<_>>>()
            .map_err(|e| io_err(&path, e))?;
        splits.push(samples);
    }
    let test = splits.pop().expect("three splits");
    let val = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    Ok(LoadedData { train, val, test })
}

#[derive(Serialize)]
struct TrainManifest<'a> {
    config: &'a Config,
    report: &'a RunReport,
}

pub fn train_cmd(cfg: &Config, data: &Path, out: Option<&Path>) -> Result<String, CliError> {
    let dir = out_dir(out)?;
    let d = load_data(cfg, data)?;
    let splits = Splits { train: &d.train, val: &d.val, test: &d.test, feature_vocab: cfg.sbm.feature_vocab };
    let run_id = format!("train-s{}", cfg.train.seed);
    let outcome = train(splits, &cfg.model, &cfg.train, &run_id)?;
    let report = &outcome.report;
    write_file(&dir.join("report.txt"), report.to_string().as_bytes())?;
    write_file(&dir.join("report.csv"), report.to_csv().as_bytes())?;
    write_file(&dir.join("predictions.csv"), predictions_csv(&outcome.test_predictions).as_bytes())?;
    write_file(&dir.join("params.ckpt"), &encode_checkpoint(&outcome.params))?;
    write_file(&dir.join(MANIFEST), &json(&TrainManifest { config: cfg, report }))?;
    eprintln!("wall clock: {:.1} s", report.wall_clock_secs);
    Ok(report.to_string())
}

#[derive(Serialize)]
struct AblateManifest<'a> {
    config: &'a Config,
    table: &'a ffgt::trainer::AblationTable,
}

pub fn ablate_cmd(cfg: &Config, data: &Path, out: Option<&Path>) -> Result<String, CliError> {
    let dir = out_dir(out)?;
    let d = load_data(cfg, data)?;
    let splits = Splits { train: &d.train, val: &d.val, test: &d.test, feature_vocab: cfg.sbm.feature_vocab };
    let mut runs = String::from(CSV_HEADER);
    runs.push('\n');
    let mut wall = 0.0;
    let table = ablate_fl(splits, &cfg.model, &cfg.train, &cfg.ablate.fl_list, &cfg.ablate.seeds, |r| {
        for row in r.csv_rows() {
            runs.push_str(&row);
            runs.push('\n');
        }
        wall += r.wall_clock_secs;
        eprintln!("{}: test accuracy {:.4} ({:.1} s)", r.run_id, r.test.accuracy, r.wall_clock_secs);
    })?;
    write_file(&dir.join("ablation.csv"), table.to_csv().as_bytes())?;
    write_file(&dir.join("ablation.txt"), table.to_string().as_bytes())?;
    write_file(&dir.join("runs.csv"), runs.as_bytes())?;
    write_file(&dir.join(MANIFEST), &json(&AblateManifest { config: cfg, table: &table }))?;
    eprintln!("wall clock: {wall:.1} s");
    Ok(table.to_string())
}

/// Error table and whether every check passed.
pub fn gradcheck(seed: u64, fault: Option<&str>) -> Result<(String, bool), CliError> {
    if let Some(name) = fault {
        if !check_names().contains(&name) {
            return Err(CliError::usage(format!("unknown check {name:?}")));
        }
    }
    let results = run_suite(seed, fault)?;
    let mut out = format!("{:<20} {:>8} {:>14}  status\n", "check", "entries", "max_rel_error");
    let mut ok = true;
    for r in &results {
        ok &= r.passed();
        let _ = writeln!(
            out,
            "{:<20} {:>8} {:>14.3e}  {}",
            r.name,
            r.checked,
            r.max_rel_error,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    let _ = writeln!(out, "tolerance {REL_TOL:e}: {}", if ok { "all passed" } else { "FAILED" });
    Ok((out, ok))
}

pub fn maskdump(file: &Path, index: usize, fl: usize) -> Result<String, CliError> {
    let graphs = read_graph_file(file)?;
    let g = graphs.get(index).ok_or_else(|| {
        CliError::usage(format!("index {index} out of range: {} holds {} graphs", file.display(), graphs.len()))
    })?;
    let mask = focal_mask(&hop_matrix(g), fl);
    let mut out = format!("graph {index}: {} nodes, fl = {fl}\n", g.num_nodes());
    for row in mask.dense_matrix() {
        out.extend(row.iter().map(|&b| if b == 1 { '1' } else { '0' }));
        out.push('\n');
    }
    for (i, row) in mask.rows().iter().enumerate() {
        let members: Vec<String> = row.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "node {i}: {} [{}]", row.len(), members.join(" "));
    }
    Ok(out)
}

/// Writes `text` to stdout and, when an output directory is given, to `name` inside it.
pub fn emit(text: &str, out: Option<&Path>, name: &str) -> Result<(), CliError> {
    if let Some(dir) = out {
        let dir = out_dir(Some(dir))?;
        write_file(&dir.join(name), text.as_bytes())?;
    }
    print(text)
}

pub fn print(text: &str) -> Result<(), CliError> {
    std::io::stdout().write_all(text.as_bytes()).map_err(|e| CliError::io(e.to_string()))
}
