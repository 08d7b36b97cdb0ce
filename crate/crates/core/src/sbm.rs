//! SBM-PATTERN generator: five stochastic-block communities plus one
//! embedded pattern graph drawn from a fixed bank. Nodes of the pattern are
//! labelled 1, community nodes 0.

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{hop_matrix, Graph, UNREACHABLE};

/// Attempts per sample before giving up on drawing a connected graph.
pub const MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmPatternParams {
    /// Intra-community link probability.
    pub p: f64,
    /// Inter-community link probability.
    pub q: f64,
    /// Intra-pattern link probability.
    pub p_p: f64,
    /// Community–pattern link probability, per node pair.
    pub q_p: f64,
    pub n_communities: usize,
    /// Community sizes are drawn uniformly from `lo..hi` (upper bound
    /// exclusive); `lo == hi` fixes the size.
    pub community_size_range: [usize; 2],
    pub pattern_size: usize,
    pub n_patterns: usize,
    pub feature_vocab: u32,
    pub seed: u64,
    /// Redraw until the whole graph is connected.
    pub connected_only: bool,
}

impl Default for SbmPatternParams {
    fn default() -> Self {
        Self::controlled(0.16, 0)
    }
}

impl SbmPatternParams {
    /// Sparse controlled setting: `q = 0.01`, `q_p = 0.05`, `p_p = p`.
    pub fn controlled(p: f64, seed: u64) -> Self {
        Self {
            p,
            q: 0.01,
            p_p: p,
            q_p: 0.05,
            n_communities: 5,
            community_size_range: [5, 35],
            pattern_size: 20,
            n_patterns: 100,
            feature_vocab: 3,
            seed,
            connected_only: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("p", self.p), ("q", self.q), ("p_p", self.p_p), ("q_p", self.q_p)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} is not a probability")));
            }
        }
        let [lo, hi] = self.community_size_range;
        if lo < 1 || hi < lo {
            return Err(Error::Config(format!("bad community_size_range [{lo}, {hi}]")));
        }
        if self.feature_vocab == 0 {
            return Err(Error::Config("feature_vocab must be positive".into()));
        }
        Ok(())
    }
}

/// Which random stream a draw belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Bank = 0,
    Train = 1,
    Val = 2,
    Test = 3,
}

/// Disjoint ChaCha stream id for `(split, index)`.
pub fn stream_id(split: Split, index: u64) -> u64 {
    debug_assert!(index < 1 << 56);
    ((split as u64) << 56) | index
}

pub fn stream_rng(seed: u64, split: Split, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(split, index));
    rng
}

/// One pattern's internal edges over local ids `0..pattern_size`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    pub edges: Vec<(usize, usize)>,
}

pub fn pattern_bank(params: &SbmPatternParams) -> Vec<Pattern> {
    let mut rng = stream_rng(params.seed, Split::Bank, 0);
    let s = params.pattern_size;
    (0..params.n_patterns)
        .map(|_| {
            let mut edges = Vec::new();
            for i in 0..s {
                for j in i + 1..s {
                    if rng.gen::<f64>() < params.p_p {
                        edges.push((i, j));
                    }
                }
            }
            Pattern { edges }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub graph: Graph,
    pub labels: Vec<u32>,
}

impl LabeledSample {
    pub fn from_graph(graph: Graph) -> Result<Self> {
        let labels = graph
            .node_labels()
            .ok_or_else(|| Error::Input("graph has no node labels".into()))?
            .to_vec();
        Ok(Self { graph, labels })
    }
}

/// Sample plus the block id of every node (`n_communities` marks the pattern).
#[derive(Debug, Clone)]
pub(crate) struct BlockSample {
    pub sample: LabeledSample,
    #[cfg_attr(not(test), allow(dead_code))]
    pub blocks: Vec<usize>,
}

pub(crate) fn generate_blocks(
    params: &SbmPatternParams,
    bank: &[Pattern],
    rng: &mut ChaCha8Rng,
) -> Result<BlockSample> {
    if bank.is_empty() {
        return Err(Error::Config("pattern bank is empty".into()));
    }
    params.validate()?;
    let [lo, hi] = params.community_size_range;
    for _ in 0..MAX_ATTEMPTS {
        let mut blocks = Vec::new();
        for c in 0..params.n_communities {
            let size = if lo == hi { lo } else { rng.gen_range(lo..hi) };
            blocks.extend(std::iter::repeat_n(c, size));
        }
        let n_comm = blocks.len();
        blocks.extend(std::iter::repeat_n(params.n_communities, params.pattern_size));
        let n = blocks.len();

        let mut edges = Vec::new();
        for i in 0..n_comm {
            for j in i + 1..n_comm {
                let prob = if blocks[i] == blocks[j] { params.p } else { params.q };
                if rng.gen::<f64>() < prob {
                    edges.push((i, j));
                }
            }
        }
        let pattern = &bank[rng.gen_range(0..bank.len())];
        edges.extend(pattern.edges.iter().map(|&(u, v)| (n_comm + u, n_comm + v)));
        for i in 0..n_comm {
            for j in n_comm..n {
                if rng.gen::<f64>() < params.q_p {
                    edges.push((i, j));
                }
            }
        }
        let feats: Vec<u32> = (0..n).map(|_| rng.gen_range(0..params.feature_vocab)).collect();
        let labels: Vec<u32> = blocks.iter().map(|&b| u32::from(b == params.n_communities)).collect();

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        let graph = Graph::new(n, edges, feats, Some(labels), None)?.permuted(&perm)?;
        if params.connected_only && !graph.is_connected() {
            continue;
        }
        let mut shuffled_blocks = vec![0; n];
        for (i, &b) in blocks.iter().enumerate() {
            shuffled_blocks[perm[i]] = b;
        }
        return Ok(BlockSample { sample: LabeledSample::from_graph(graph)?, blocks: shuffled_blocks });
    }
    Err(Error::Config(format!(
        "no connected sample after {MAX_ATTEMPTS} attempts; relax the probabilities or disable connected_only"
    )))
}

/// Draws one labelled graph from `rng` using a pattern picked uniformly from `bank`.
pub fn generate_sample(
    params: &SbmPatternParams,
    bank: &[Pattern],
    rng: &mut ChaCha8Rng,
) -> Result<LabeledSample> {
    generate_blocks(params, bank, rng).map(|b| b.sample)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_graphs: usize,
    pub avg_nodes: f64,
    pub avg_degree: f64,
    /// Diameter of each graph's largest connected component, averaged.
    pub avg_diameter: f64,
}

/// Diameter of the largest connected component (ties: lowest component id).
pub fn largest_component_diameter(graph: &Graph) -> u32 {
    let comp = graph.components();
    let n_comp = comp.iter().max().map_or(0, |&c| c + 1);
    let mut sizes = vec![0usize; n_comp];
    for &c in &comp {
        sizes[c] += 1;
    }
    let Some(big) = (0..n_comp).max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a))) else {
        return 0;
    };
    let hops = hop_matrix(graph);
    let mut diam = 0;
    for i in (0..graph.num_nodes()).filter(|&i| comp[i] == big) {
        for &h in hops.row(i) {
            if h != UNREACHABLE {
                diam = diam.max(h);
            }
        }
    }
    diam
}

pub fn dataset_stats<'a>(graphs: impl IntoIterator<Item = &'a Graph>) -> Result<DatasetStats> {
    let graphs: Vec<&Graph> = graphs.into_iter().collect();
    if graphs.is_empty() {
        return Err(Error::Input("dataset_stats of an empty dataset".into()));
    }
    let per_graph: Vec<(f64, f64, f64)> = graphs
        .par_iter()
        .map(|g| {
            let n = g.num_nodes() as f64;
            let deg = if n > 0.0 { 2.0 * g.num_edges() as f64 / n } else { 0.0 };
            (n, deg, f64::from(largest_component_diameter(g)))
        })
        .collect();
    let count = per_graph.len() as f64;
    let mean = |f: fn(&(f64, f64, f64)) -> f64| per_graph.iter().map(f).sum::<f64>() / count;
    Ok(DatasetStats {
        n_graphs: per_graph.len(),
        avg_nodes: mean(|t| t.0),
        avg_degree: mean(|t| t.1),
        avg_diameter: mean(|t| t.2),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<LabeledSample>,
    pub val: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
    /// Statistics over all three splits together.
    pub stats: DatasetStats,
}

impl Dataset {
    pub fn all(&self) -> impl Iterator<Item = &LabeledSample> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

fn generate_split(
    params: &SbmPatternParams,
    bank: &[Pattern],
    split: Split,
    count: usize,
) -> Result<Vec<LabeledSample>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| generate_sample(params, bank, &mut stream_rng(params.seed, split, i)))
        .collect()
}

/// Generates the three splits, each sample on its own `(split, index)` stream.
pub fn generate_dataset(
    params: &SbmPatternParams,
    n_train: usize,
    n_val: usize,
    n_test: usize,
) -> Result<Dataset> {
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Config("every split needs at least one graph".into()));
    }
    params.validate()?;
    let bank = pattern_bank(params);
    let train = generate_split(params, &bank, Split::Train, n_train)?;
    let val = generate_split(params, &bank, Split::Val, n_val)?;
    let test = generate_split(params, &bank, Split::Test, n_test)?;
    let stats = dataset_stats(train.iter().chain(&val).chain(&test).map(|s| &s.graph))?;
    Ok(Dataset { train, val, test, stats })
}
