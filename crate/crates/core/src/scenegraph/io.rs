//! Scene-graph JSON:
//!
//! ```json
//! {"low_levels": [...], "high_levels": [...],
//!  "nodes": [{"pos": [x, y, z], "hist": [...], "label": 0, "split": "train"}],
//!  "edges": [[u, v], ...]}
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PlaceNode, SceneGraph, Split};
use crate::error::{Error, Result};
use crate::jsonio::{read_json, write_json};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeFile {
    pos: [f64; 3],
    hist: Vec<u32>,
    label: Option<usize>,
    split: Split,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    low_levels: Vec<String>,
    high_levels: Vec<String>,
    nodes: Vec<NodeFile>,
    edges: Vec<[usize; 2]>,
}

impl From<&SceneGraph> for GraphFile {
    fn from(g: &SceneGraph) -> Self {
        Self {
            low_levels: g.low_levels.clone(),
            high_levels: g.high_levels.clone(),
            nodes: g
                .nodes
                .iter()
                .map(|n| NodeFile {
                    pos: n.position,
                    hist: n.histogram.clone(),
                    label: n.label,
                    split: n.split,
                })
                .collect(),
            edges: g.edges.iter().map(|&(u, v)| [u, v]).collect(),
        }
    }
}

pub fn save(graph: &SceneGraph, path: &Path) -> Result<()> {
    write_json(path, &GraphFile::from(graph))
}

pub fn load(path: &Path) -> Result<SceneGraph> {
    let file: GraphFile = read_json(path)?;
    let graph = SceneGraph {
        low_levels: file.low_levels,
        high_levels: file.high_levels,
        nodes: file
            .nodes
            .into_iter()
            .map(|n| PlaceNode {
                position: n.pos,
                histogram: n.hist,
                label: n.label,
                split: n.split,
            })
            .collect(),
        edges: file.edges.into_iter().map(|[u, v]| (u, v)).collect(),
    };
    graph
        .validate()
        .map_err(|e| Error::Graph(format!("{}: {e}", path.display())))?;
    Ok(graph)
}
