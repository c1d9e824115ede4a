use std::fmt::Write;

use super::network::{EdgeTag, NetworkGraph};

/// Renders the graph as a DOT digraph. Node labels carry
/// `channels×resolution²`; coupling edges are dashed and red.
pub fn to_dot(g: &NetworkGraph) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "digraph \"{}\" {{", g.arch.as_str());
    let _ = writeln!(out, "  rankdir=TB;");
    let _ = writeln!(out, "  node [shape=box, fontsize=10];");
    for node in g.nodes() {
        let _ = writeln!(
            out,
            "  n{} [label=\"{}\\n{}\\n{}×{}²\"];",
            node.id,
            escape(&node.name),
            escape(&node.kind.label()),
            node.out_channels,
            node.resolution
        );
    }
    for e in g.edges() {
        let style = match e.tag {
            EdgeTag::Coupling => ", style=dashed, color=red",
            EdgeTag::Skip => ", style=dotted",
            EdgeTag::Head => ", color=blue",
            EdgeTag::MainFlow => "",
        };
        let _ = writeln!(
            out,
            "  n{} -> n{} [label=\"{}\", tooltip=\"{} ch\"{}];",
            e.from,
            e.to,
            e.tag.as_str(),
            e.channels,
            style
        );
    }
    out.push_str("}\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}
