//! Line-delimited JSON graph files: one object per line.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};

/// On-disk form of a [`Graph`]. Field order is the serialized key order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphRecord {
    pub num_nodes: usize,
    pub edges: Vec<[usize; 2]>,
    pub node_feats: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_labels: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_types: Option<Vec<u32>>,
}

impl From<&Graph> for GraphRecord {
    fn from(g: &Graph) -> Self {
        Self {
            num_nodes: g.num_nodes(),
            edges: g.edges().iter().map(|&(u, v)| [u, v]).collect(),
            node_feats: g.node_feats().to_vec(),
            node_labels: g.node_labels().map(<[u32]>::to_vec),
            edge_types: g.edge_types().map(<[u32]>::to_vec),
        }
    }
}

impl TryFrom<GraphRecord> for Graph {
    type Error = Error;

    fn try_from(r: GraphRecord) -> Result<Self> {
        if let Some(&[u, v]) = r.edges.iter().find(|[u, v]| u >= v) {
            return Err(Error::Parse(format!("edge [{u}, {v}] must satisfy u < v")));
        }
        Graph::new(
            r.num_nodes,
            r.edges.into_iter().map(|[u, v]| (u, v)).collect(),
            r.node_feats,
            r.node_labels,
            r.edge_types,
        )
    }
}

impl Graph {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&GraphRecord::from(self)).expect("graph record serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let rec: GraphRecord =
            serde_json::from_str(line).map_err(|e| Error::Parse(e.to_string()))?;
        Graph::try_from(rec)
    }
}

pub fn write_graphs<'a, W: Write>(
    mut out: W,
    graphs: impl IntoIterator<Item = &'a Graph>,
) -> Result<()> {
    for g in graphs {
        out.write_all(g.to_json_line().as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads every non-empty line as a graph.
pub fn read_graphs<R: BufRead>(input: R) -> Result<Vec<Graph>> {
    let mut graphs = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let g = Graph::from_json_line(&line)
            .map_err(|e| Error::Parse(format!("line {}: {e}", idx + 1)))?;
        graphs.push(g);
    }
    Ok(graphs)
}
