//! Node classifier: feature embedding plus projected LapPE, a stack of
//! compound layers, and a per-node linear head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{xavier, FfgtLayer, GraphContext, LayerConfig};
use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{add_virtual_node, hop_matrix, lap_pe};
use crate::sbm::LabeledSample;

pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub dim: usize,
    pub layers: usize,
    pub full_heads: usize,
    pub focal_heads: usize,
    pub fl: usize,
    pub mlp_hidden: usize,
    pub gate_enabled: bool,
    pub max_hop_bucket: u32,
    /// Number of Laplacian eigenvectors fed to the input; 0 disables them.
    pub lap_pe_k: usize,
    pub virtual_node: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            layers: 2,
            full_heads: 2,
            focal_heads: 2,
            fl: 1,
            mlp_hidden: 64,
            gate_enabled: false,
            max_hop_bucket: 10,
            lap_pe_k: 8,
            virtual_node: false,
        }
    }
}

impl ModelConfig {
    pub fn layer_config(&self) -> LayerConfig {
        LayerConfig {
            dim: self.dim,
            full_heads: self.full_heads,
            focal_heads: self.focal_heads,
            fl: self.fl,
            mlp_hidden: self.mlp_hidden,
            gate_enabled: self.gate_enabled,
            max_hop_bucket: self.max_hop_bucket,
            num_edge_types: 1,
        }
    }

    /// Same head budget with every head full-range.
    pub fn vanilla(&self) -> Self {
        Self { full_heads: self.full_heads + self.focal_heads, focal_heads: 0, ..self.clone() }
    }

    pub fn with_fl(&self, fl: usize) -> Self {
        Self { fl, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("model.layers must be positive".into()));
        }
        self.layer_config().validate()
    }
}

/// Per-graph inputs computed once and reused every epoch.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub ctx: GraphContext,
    /// Embedding row per node, virtual node last when present.
    pub feat_ids: Vec<usize>,
    /// `n × lap_pe_k`, zero rows for the virtual node.
    pub lap: Tensor,
    pub num_real: usize,
    pub labels: Vec<usize>,
    /// True when some LapPE column has a repeated eigenvalue on the largest
    /// component, so the encoding is not unique up to sign.
    pub lap_degenerate: bool,
}

const DEGENERATE_GAP: f64 = 1e-8;

/// Precomputes hop contexts, masks and LapPE for one sample.
pub fn prepare(sample: &LabeledSample, config: &ModelConfig, vocab: u32) -> Result<PreparedGraph> {
    let graph = &sample.graph;
    let n = graph.num_nodes();
    if sample.labels.len() != n {
        return Err(Error::Input(format!("{} labels for {n} nodes", sample.labels.len())));
    }
    if let Some(&bad) = graph.node_feats().iter().find(|&&f| f >= vocab) {
        return Err(Error::Config(format!("node feature {bad} outside feature_vocab = {vocab}")));
    }
    if let Some(&bad) = sample.labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
        return Err(Error::Input(format!("label {bad} is not binary")));
    }
    let k = config.lap_pe_k;
    let mut lap = Tensor::zeros(&[n, k]);
    let mut lap_degenerate = false;
    if k > 0 && n > 1 {
        let cols = k.min(n - 1);
        let pe = lap_pe(graph, cols)?;
        for v in 0..n {
            for c in 0..cols {
                lap.data_mut()[v * k + c] = pe.get(v, c);
            }
        }
        lap_degenerate = pe.eigenvalues.windows(2).any(|w| (w[1] - w[0]).abs() < DEGENERATE_GAP);
    }
    let hops = hop_matrix(graph);
    let scheme = config.layer_config().scheme();
    let fl = (config.focal_heads > 0).then_some(config.fl);
    let mut feat_ids: Vec<usize> = graph.node_feats().iter().map(|&f| f as usize).collect();
    let ctx = if config.virtual_node {
        let (g, h) = add_virtual_node(graph, &hops);
        feat_ids.push(vocab as usize);
        let mut padded = Tensor::zeros(&[n + 1, k]);
        padded.data_mut()[..n * k].copy_from_slice(lap.data());
        lap = padded;
        GraphContext::new(&g, h, scheme, 1, fl)?
    } else {
        GraphContext::new(graph, hops, scheme, 1, fl)?
    };
    Ok(PreparedGraph {
        ctx,
        feat_ids,
        lap,
        num_real: n,
        labels: sample.labels.iter().map(|&l| l as usize).collect(),
        lap_degenerate,
    })
}

/// Parameter layout of the classifier inside a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct NodeClassifier {
    pub config: ModelConfig,
    pub vocab: u32,
    pub embed: ParamId,
    pub pe: Option<(ParamId, ParamId)>,
    pub layers: Vec<FfgtLayer>,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

impl NodeClassifier {
    /// Builds a freshly initialised model; the embedding has one extra row
    /// for the virtual node.
    pub fn new(config: &ModelConfig, vocab: u32, seed: u64) -> Result<(Self, ParamStore)> {
        config.validate()?;
        if vocab == 0 {
            return Err(Error::Config("feature_vocab must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.dim;
        let embed = store.add("embed", xavier(&mut rng, vocab as usize + 1, d));
        let pe = (config.lap_pe_k > 0).then(|| {
            (
                store.add("pe.w", xavier(&mut rng, config.lap_pe_k, d)),
                store.add("pe.b", Tensor::zeros(&[d])),
            )
        });
        let layers = (0..config.layers)
            .map(|l| FfgtLayer::new(&mut store, &format!("layer{l}"), config.layer_config(), &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let head_w = store.add("head.w", xavier(&mut rng, d, NUM_CLASSES));
        let head_b = store.add("head.b", Tensor::zeros(&[NUM_CLASSES]));
        let model = Self { config: config.clone(), vocab, embed, pe, layers, head_w, head_b };
        Ok((model, store))
    }

    /// `num_real × 2` logits; the virtual node row is dropped.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], g: &PreparedGraph) -> Result<Var> {
        if g.lap.shape()[1] != self.config.lap_pe_k {
            return Err(Error::Config("prepared graph was built for another lap_pe_k".into()));
        }
        let mut h = tape.embedding(params[self.embed.0], &g.feat_ids)?;
        if let Some((w, b)) = self.pe {
            let lap = tape.leaf(g.lap.clone());
            let proj = tape.linear(lap, params[w.0], params[b.0])?;
            h = tape.add(h, proj)?;
        }
        for layer in &self.layers {
            h = layer.forward(tape, params, h, &g.ctx)?;
        }
        let h = tape.take_rows(h, g.num_real)?;
        tape.linear(h, params[self.head_w.0], params[self.head_b.0])
    }

    /// Loss and per-parameter gradients for one graph.
    pub fn loss_and_grads(
        &self,
        store: &ParamStore,
        g: &PreparedGraph,
        class_weights: &[f64],
    ) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let params = tape.bind(store);
        let logits = self.forward(&mut tape, &params, g)?;
        let loss = tape.cross_entropy(logits, &g.labels, class_weights)?;
        let value = tape.value(loss).data()[0];
        let grads = tape.backward(loss)?;
        Ok((value, params.iter().map(|&p| grads.wrt(p)).collect()))
    }

    /// Argmax class per real node, ties resolved to class 0.
    pub fn predict(&self, store: &ParamStore, g: &PreparedGraph) -> Result<Vec<usize>> {
        let logits = self.logits(store, g)?;
        Ok((0..g.num_real)
            .map(|i| {
                let row = logits.row(i);
                (1..row.len()).fold(0, |best, c| if row[c] > row[best] { c } else { best })
            })
            .collect())
    }

    pub fn logits(&self, store: &ParamStore, g: &PreparedGraph) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params = tape.bind(store);
        let out = self.forward(&mut tape, &params, g)?;
        Ok(tape.value(out).clone())
    }
}

/// Finite-difference check of a small two-layer classifier on a random graph
/// with a virtual node, through the weighted cross-entropy loss.
pub(crate) fn gradcheck_model(seed: u64, fault: Option<f64>) -> Result<(f64, usize)> {
    use crate::gradcheck::{check_leaves, random_tensor};
    use crate::graph::Graph;
    use rand::Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x30DE_15EE);
    let n = 6;
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.gen_range(0..i), i)).collect();
    edges.push((0, n - 1));
    edges.sort_unstable();
    edges.dedup();
    let feats = (0..n).map(|_| rng.gen_range(0..3)).collect();
    let labels: Vec<u32> = (0..n).map(|i| (i % 2) as u32).collect();
    let graph = Graph::new(n, edges, feats, Some(labels.clone()), None)?;
    let sample = LabeledSample { graph, labels };
    let config = ModelConfig {
        dim: 4,
        layers: 2,
        full_heads: 1,
        focal_heads: 1,
        fl: 1,
        mlp_hidden: 4,
        gate_enabled: true,
        max_hop_bucket: 2,
        lap_pe_k: 2,
        virtual_node: true,
    };
    let (model, mut store) = NodeClassifier::new(&config, 3, seed)?;
    for t in store.tensors_mut() {
        let noise = random_tensor(&mut rng, t.shape(), 0.5);
        t.add_assign(&noise);
    }
    let prepared = prepare(&sample, &config, 3)?;
    let weights = [1.0, 2.0];
    check_leaves(
        store.tensors(),
        |tape, vars| {
            let logits = model.forward(tape, vars, &prepared)?;
            tape.cross_entropy(logits, &prepared.labels, &weights)
        },
        fault,
    )
}
