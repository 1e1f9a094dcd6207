//! Graphviz rendering of a places layer colored by region class.

use std::fmt::Write;

use ontoplace::scenegraph::SceneGraph;

const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    "#aec7e8", "#ffbb78",
];
const UNLABELED: &str = "#d9d9d9";

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Undirected DOT graph with nodes pinned at their x/y position (scaled by
/// `scale`) and filled by `labels[v]` (one per node; `None` is gray).
pub fn to_dot(graph: &SceneGraph, labels: &[Option<usize>], scale: f64) -> String {
    let mut out = String::new();
    out.push_str("graph places {\n");
    out.push_str("  node [shape=circle, style=filled, width=0.15, fixedsize=true, label=\"\"];\n");
    out.push_str("  edge [color=\"#999999\"];\n");
    for (c, name) in graph.high_levels.iter().enumerate() {
        let _ = writeln!(out, "  // {} = {}", PALETTE[c % PALETTE.len()], name);
    }
    for (v, node) in graph.nodes.iter().enumerate() {
        let (color, tooltip) = match labels[v] {
            Some(c) => (PALETTE[c % PALETTE.len()], graph.high_levels[c].as_str()),
            None => (UNLABELED, "unlabeled"),
        };
        let _ = writeln!(
            out,
            "  {v} [pos=\"{},{}!\", fillcolor=\"{color}\", tooltip={}];",
            node.position[0] * scale,
            node.position[1] * scale,
            quote(tooltip)
        );
    }
    for &(u, v) in &graph.edges {
        let _ = writeln!(out, "  {u} -- {v};");
    }
    out.push_str("}\n");
    out
}
