//! Oracles shared by the integration test targets.
#![allow(dead_code)]

use cunet::graph::{CUNetConfig, DenseUNetConfig};

fn conv(cin: usize, cout: usize, k: usize) -> usize {
    cin * cout * k * k + cout
}

fn bn(c: usize) -> usize {
    2 * c
}

fn stem(in_channels: usize, m: usize) -> usize {
    conv(in_channels, m, 7) + bn(m)
}

fn head(m: usize, keypoints: usize) -> usize {
    bn(m) + conv(m, keypoints, 1)
}

/// Closed-form parameter count of a coupled or stacked cascade, written from
/// the channel arithmetic alone and never walking a graph.
pub fn analytic_cu_params(c: &CUNetConfig) -> usize {
    let (m, n) = (c.m, c.n);
    let blocks = 2 * c.depth + 1;
    let mut total = stem(c.in_channels, m) + c.supervisions * head(m, c.keypoints);
    for i in 0..c.unets {
        let cin = if c.coupling { m + n * i } else { m };
        let block = bn(cin) + conv(cin, 4 * m, 1) + bn(4 * m) + conv(4 * m, n, 3) + bn(cin + n) + conv(cin + n, m, 1);
        total += blocks * block;
    }
    total
}

pub fn analytic_dense_params(c: &DenseUNetConfig) -> usize {
    let (m, k, b) = (c.m, c.growth, c.bottleneck);
    let mut block = 0;
    for j in 0..c.layers {
        let cin = m + j * k;
        block += bn(cin) + conv(cin, b, 1) + bn(b) + conv(b, k, 3);
    }
    let cl = m + c.layers * k;
    block += bn(cl) + conv(cl, m, 1);
    stem(c.in_channels, m) + (2 * c.depth + 1) * block + head(m, c.keypoints)
}

/// Minimal DOT grammar check: a single `digraph` whose body lines are node
/// statements `id [..];`, edge statements `a -> b [..];` or graph
/// attributes, with balanced quoting and every edge endpoint declared.
pub fn check_dot(text: &str) -> Result<(usize, usize), String> {
    let mut lines = text.lines();
    let first = lines.next().ok_or("empty")?;
    if !(first.starts_with("digraph ") && first.ends_with('{')) {
        return Err(format!("bad header: {first}"));
    }
    let mut nodes = std::collections::HashSet::new();
    let mut edges = Vec::new();
    let mut closed = false;
    for line in lines {
        let l = line.trim();
        if closed {
            if l.is_empty() {
                continue;
            }
            return Err(format!("content after closing brace: {l}"));
        }
        if l == "}" {
            closed = true;
            continue;
        }
        if !l.ends_with(';') {
            return Err(format!("statement without semicolon: {l}"));
        }
        let mut quotes = 0;
        let mut escaped = false;
        for ch in l.chars() {
            match ch {
                '\\' if !escaped => {
                    escaped = true;
                    continue;
                }
                '"' if !escaped => quotes += 1,
                _ => {}
            }
            escaped = false;
        }
        if quotes % 2 != 0 {
            return Err(format!("unbalanced quotes: {l}"));
        }
        let head = l.split('[').next().unwrap().trim().trim_end_matches(';').trim();
        if l.contains('[') && !l.trim_end_matches(';').ends_with(']') {
            return Err(format!("unterminated attribute list: {l}"));
        }
        if let Some((a, b)) = head.split_once("->") {
            edges.push((a.trim().to_string(), b.trim().to_string()));
        } else if head.contains('=') || head == "node" || head == "edge" || head == "graph" {
            continue;
        } else {
            let ident_ok = head.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
            if head.is_empty() || !ident_ok {
                return Err(format!("bad node id: {head}"));
            }
            nodes.insert(head.to_string());
        }
    }
    if !closed {
        return Err("missing closing brace".into());
    }
    for (a, b) in &edges {
        if !nodes.contains(a) || !nodes.contains(b) {
            return Err(format!("edge {a} -> {b} references an undeclared node"));
        }
    }
    Ok((nodes.len(), edges.len()))
}
