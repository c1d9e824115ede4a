//! Annotated layer graphs for the naive dense U-Net, stacked U-Nets and
//! coupled U-Nets.

use std::collections::BTreeMap;
use std::fmt;

use super::config::{CUNetConfig, DenseUNetConfig};
use crate::error::{Error, Result};
use crate::supervision::place_supervisions;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockPath {
    Down,
    Bottom,
    Up,
}

/// Position of a semantic block. Blocks in different U-Nets with equal
/// `(path, level)` are the same semantic block and get coupled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SemanticBlockId {
    pub unet: usize,
    pub path: BlockPath,
    /// Resolution level; always 0 for the bottom block.
    pub level: usize,
}

impl SemanticBlockId {
    pub fn position(&self) -> (BlockPath, usize) {
        (self.path, self.level)
    }

    fn local_name(&self) -> String {
        match self.path {
            BlockPath::Down => format!("down{}", self.level),
            BlockPath::Bottom => "bottom".to_string(),
            BlockPath::Up => format!("up{}", self.level),
        }
    }

    fn prefix(&self) -> String {
        format!("u{}.{}", self.unet, self.local_name())
    }
}

impl fmt::Display for SemanticBlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.prefix())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeTag {
    MainFlow,
    Skip,
    Coupling,
    Head,
}

impl EdgeTag {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeTag::MainFlow => "main_flow",
            EdgeTag::Skip => "skip",
            EdgeTag::Coupling => "coupling",
            EdgeTag::Head => "head",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    ConvBias,
    BnGamma,
    BnBeta,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Fan-in of a convolution weight (`Cin·kh·kw`).
    pub fn fan_in(&self) -> usize {
        self.shape[1..].iter().product()
    }
}

/// A batch-norm layer's running statistics slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BnSpec {
    pub name: String,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerKind {
    Input,
    Conv {
        weight: usize,
        bias: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        gamma: usize,
        beta: usize,
        stats: usize,
    },
    Relu,
    MaxPool2,
    Upsample2,
    Concat,
    Add,
}

impl LayerKind {
    pub fn label(&self) -> String {
        match self {
            LayerKind::Input => "input".into(),
            LayerKind::Conv {
                kernel, stride, pad, ..
            } => format!("conv{kernel}x{kernel} s{stride} p{pad}"),
            LayerKind::BatchNorm { .. } => "batch_norm".into(),
            LayerKind::Relu => "relu".into(),
            LayerKind::MaxPool2 => "max_pool2".into(),
            LayerKind::Upsample2 => "upsample2".into(),
            LayerKind::Concat => "concat".into(),
            LayerKind::Add => "add".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNode {
    pub id: NodeId,
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<NodeId>,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Side of the square output feature map.
    pub resolution: usize,
    pub unet: Option<usize>,
    pub block: Option<SemanticBlockId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub tag: EdgeTag,
    pub channels: usize,
}

/// Node ids of one coupled semantic block's internal layer sequence.
#[derive(Debug, Clone)]
pub struct BlockRecord {
    pub id: SemanticBlockId,
    /// Concatenation of the main flow and all coupled inputs (`m + n·i`).
    pub input_concat: NodeId,
    /// 1×1 conv to `4m`.
    pub bottleneck: NodeId,
    /// 3×3 conv producing the `n` new (and exported) features.
    pub generate: NodeId,
    /// Concatenation of the block input and the new features.
    pub output_concat: NodeId,
    /// 1×1 conv back to `m`.
    pub compress: NodeId,
    /// Sources of the incoming coupling edges, ordered by U-Net.
    pub coupling_inputs: Vec<NodeId>,
}

/// Node ids of a dense block in the naive dense U-Net.
#[derive(Debug, Clone)]
pub struct DenseBlockRecord {
    pub position: (BlockPath, usize),
    /// Input concatenation of each dense layer.
    pub layer_inputs: Vec<NodeId>,
    pub compress_input: NodeId,
    pub compress: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadRecord {
    /// 1-based index of the supervised U-Net.
    pub unet: usize,
    pub output: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Coupled,
    Stacked,
    Dense,
}

impl Architecture {
    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Coupled => "coupled",
            Architecture::Stacked => "stacked",
            Architecture::Dense => "dense",
        }
    }
}

/// A built network: layer nodes in topological order, tagged edges, named
/// parameter slots and the ordered list of supervision heads (final last).
#[derive(Debug, Clone)]
pub struct NetworkGraph {
    pub arch: Architecture,
    pub unets: usize,
    pub in_channels: usize,
    pub input_res: usize,
    pub heatmap_res: usize,
    pub keypoints: usize,
    nodes: Vec<LayerNode>,
    edges: Vec<Edge>,
    params: Vec<ParamSpec>,
    bns: Vec<BnSpec>,
    blocks: Vec<BlockRecord>,
    dense_blocks: Vec<DenseBlockRecord>,
    heads: Vec<HeadRecord>,
}

impl NetworkGraph {
    pub fn nodes(&self) -> &[LayerNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &LayerNode {
        &self.nodes[id]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn batch_norms(&self) -> &[BnSpec] {
        &self.bns
    }

    pub fn blocks(&self) -> &[BlockRecord] {
        &self.blocks
    }

    pub fn dense_blocks(&self) -> &[DenseBlockRecord] {
        &self.dense_blocks
    }

    pub fn heads(&self) -> &[HeadRecord] {
        &self.heads
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Total scalar parameters: conv weights and biases plus BN affine terms.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(ParamSpec::numel).sum()
    }

    /// Parameter counts grouped by top-level component (`stem`, `u0`, …, `head2`, `dense`).
    pub fn param_count_by_component(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for p in &self.params {
            let group = p.name.split('.').next().unwrap_or("").to_string();
            *out.entry(group).or_insert(0) += p.numel();
        }
        out
    }

    /// Parameters owned by U-Net `unet` (0-based), heads excluded.
    pub fn unet_param_count(&self, unet: usize) -> usize {
        let prefix = format!("u{unet}.");
        self.params
            .iter()
            .filter(|p| p.name.starts_with(&prefix))
            .map(ParamSpec::numel)
            .sum()
    }

    pub fn coupling_edge_count(&self) -> usize {
        self.edges.iter().filter(|e| e.tag == EdgeTag::Coupling).count()
    }

    /// Channel trace `[m+n·i, 4m, n, m+n·i+n, m]` of a coupled block.
    pub fn block_trace(&self, block: &BlockRecord) -> [usize; 5] {
        [
            self.nodes[block.input_concat].out_channels,
            self.nodes[block.bottleneck].out_channels,
            self.nodes[block.generate].out_channels,
            self.nodes[block.output_concat].out_channels,
            self.nodes[block.compress].out_channels,
        ]
    }

    /// Verifies acyclicity (every edge points forward in node order, which
    /// is a topological order) and the per-node channel annotations.
    pub fn check_invariants(&self) -> Result<()> {
        for e in &self.edges {
            if e.from >= e.to {
                return Err(Error::Connectivity(format!("edge {} -> {} is not forward", e.from, e.to)));
            }
            if e.channels != self.nodes[e.from].out_channels {
                return Err(Error::Connectivity(format!(
                    "edge {} -> {} carries {} channels, source has {}",
                    e.from, e.to, e.channels, self.nodes[e.from].out_channels
                )));
            }
            if e.tag == EdgeTag::Coupling {
                let (src, dst) = (self.nodes[e.from].block, self.nodes[e.to].block);
                match (src, dst) {
                    (Some(s), Some(d)) if s.position() == d.position() && s.unet < d.unet => {}
                    _ => {
                        return Err(Error::Connectivity(format!(
                            "coupling edge {} -> {} joins different semantic blocks",
                            self.nodes[e.from].name, self.nodes[e.to].name
                        )))
                    }
                }
            }
        }
        for node in &self.nodes {
            let ins: Vec<&Edge> = self.edges.iter().filter(|e| e.to == node.id).collect();
            let expected = match node.kind {
                LayerKind::Input => continue,
                LayerKind::Concat => ins.iter().map(|e| e.channels).sum(),
                LayerKind::Add => {
                    if ins.iter().any(|e| e.channels != ins[0].channels) {
                        return Err(Error::Connectivity(format!("add node {} has unequal inputs", node.name)));
                    }
                    ins[0].channels
                }
                _ => {
                    if ins.len() != 1 {
                        return Err(Error::Connectivity(format!("{} expects one input", node.name)));
                    }
                    ins[0].channels
                }
            };
            if expected != node.in_channels {
                return Err(Error::Connectivity(format!(
                    "{}: annotated input {} != {} from edges",
                    node.name, node.in_channels, expected
                )));
            }
        }
        Ok(())
    }
}

/// Channel arithmetic of one coupled semantic block in U-Net `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SemanticBlockSpec {
    pub unet: usize,
    pub m: usize,
    pub n: usize,
    pub extra_in: usize,
}

impl SemanticBlockSpec {
    /// Rejects `extra_in != n·i`: a block in U-Net `i` must receive exactly
    /// one `n`-channel coupling input from each earlier U-Net.
    pub fn new(unet: usize, m: usize, n: usize, extra_in: usize) -> Result<Self> {
        if extra_in != n * unet {
            return Err(Error::Connectivity(format!(
                "block in U-Net {unet} receives {extra_in} coupled channels, expected n·i = {}",
                n * unet
            )));
        }
        Ok(SemanticBlockSpec { unet, m, n, extra_in })
    }

    /// `[input concat, bottleneck, generated, output concat, main output]`.
    pub fn channel_trace(&self) -> [usize; 5] {
        let input = self.m + self.extra_in;
        [input, 4 * self.m, self.n, input + self.n, self.m]
    }
}

struct Builder {
    g: NetworkGraph,
}

impl Builder {
    fn new(arch: Architecture, unets: usize, in_channels: usize, input_res: usize, keypoints: usize) -> Self {
        Builder {
            g: NetworkGraph {
                arch,
                unets,
                in_channels,
                input_res,
                heatmap_res: input_res / 4,
                keypoints,
                nodes: Vec::new(),
                edges: Vec::new(),
                params: Vec::new(),
                bns: Vec::new(),
                blocks: Vec::new(),
                dense_blocks: Vec::new(),
                heads: Vec::new(),
            },
        }
    }

    fn ctx_of(&self, id: NodeId) -> (Option<usize>, Option<SemanticBlockId>) {
        (self.g.nodes[id].unet, self.g.nodes[id].block)
    }

    fn add_node(
        &mut self,
        name: String,
        kind: LayerKind,
        inputs: &[(NodeId, EdgeTag)],
        out_channels: usize,
        resolution: usize,
    ) -> NodeId {
        let id = self.g.nodes.len();
        let in_channels = match kind {
            LayerKind::Input => 0,
            LayerKind::Concat => inputs.iter().map(|&(i, _)| self.g.nodes[i].out_channels).sum(),
            _ => self.g.nodes[inputs[0].0].out_channels,
        };
        let (unet, block) = inputs.first().map(|&(i, _)| self.ctx_of(i)).unwrap_or((None, None));
        for &(from, tag) in inputs {
            self.g.edges.push(Edge {
                from,
                to: id,
                tag,
                channels: self.g.nodes[from].out_channels,
            });
        }
        self.g.nodes.push(LayerNode {
            id,
            name,
            kind,
            inputs: inputs.iter().map(|&(i, _)| i).collect(),
            in_channels,
            out_channels,
            resolution,
            unet,
            block,
        });
        id
    }

    fn param(&mut self, name: String, shape: Vec<usize>, kind: ParamKind) -> usize {
        self.g.params.push(ParamSpec { name, shape, kind });
        self.g.params.len() - 1
    }

    fn res(&self, id: NodeId) -> usize {
        self.g.nodes[id].resolution
    }

    fn conv(&mut self, name: &str, x: NodeId, tag: EdgeTag, cout: usize, kernel: usize, stride: usize, pad: usize) -> NodeId {
        let cin = self.g.nodes[x].out_channels;
        let weight = self.param(format!("{name}.weight"), vec![cout, cin, kernel, kernel], ParamKind::ConvWeight);
        let bias = self.param(format!("{name}.bias"), vec![cout], ParamKind::ConvBias);
        let res = (self.res(x) + 2 * pad - kernel) / stride + 1;
        self.add_node(
            name.to_string(),
            LayerKind::Conv {
                weight,
                bias,
                kernel,
                stride,
                pad,
            },
            &[(x, tag)],
            cout,
            res,
        )
    }

    fn bn(&mut self, name: &str, x: NodeId, tag: EdgeTag) -> NodeId {
        let c = self.g.nodes[x].out_channels;
        let gamma = self.param(format!("{name}.gamma"), vec![c], ParamKind::BnGamma);
        let beta = self.param(format!("{name}.beta"), vec![c], ParamKind::BnBeta);
        self.g.bns.push(BnSpec {
            name: name.to_string(),
            channels: c,
        });
        let stats = self.g.bns.len() - 1;
        let res = self.res(x);
        self.add_node(name.to_string(), LayerKind::BatchNorm { gamma, beta, stats }, &[(x, tag)], c, res)
    }

    fn unary(&mut self, name: String, kind: LayerKind, x: NodeId, tag: EdgeTag) -> NodeId {
        let res = match kind {
            LayerKind::MaxPool2 => self.res(x) / 2,
            LayerKind::Upsample2 => self.res(x) * 2,
            _ => self.res(x),
        };
        let c = self.g.nodes[x].out_channels;
        self.add_node(name, kind, &[(x, tag)], c, res)
    }

    /// BN → ReLU → conv, the pre-activation unit used everywhere past the stem.
    fn preact_conv(&mut self, bn_name: &str, conv_name: &str, x: NodeId, tag: EdgeTag, cout: usize, kernel: usize) -> NodeId {
        let b = self.bn(bn_name, x, tag);
        let r = self.unary(format!("{bn_name}.relu"), LayerKind::Relu, b, tag);
        self.conv(conv_name, r, tag, cout, kernel, 1, kernel / 2)
    }

    fn concat(&mut self, name: String, inputs: &[(NodeId, EdgeTag)]) -> NodeId {
        let res = self.res(inputs[0].0);
        let c = inputs.iter().map(|&(i, _)| self.g.nodes[i].out_channels).sum();
        self.add_node(name, LayerKind::Concat, inputs, c, res)
    }

    fn set_context(&mut self, from: NodeId, unet: Option<usize>, block: Option<SemanticBlockId>) {
        for node in &mut self.g.nodes[from..] {
            node.unet = unet;
            node.block = block;
        }
    }

    fn input(&mut self) -> NodeId {
        let (c, r) = (self.g.in_channels, self.g.input_res);
        self.add_node("input".into(), LayerKind::Input, &[], c, r)
    }

    /// conv7×7 (stride 1, pad 3) → BN → ReLU → two 2×2 max pools: `R = input_res / 4`.
    fn stem(&mut self, x: NodeId, m: usize) -> NodeId {
        let t = EdgeTag::MainFlow;
        let c = self.conv("stem.conv", x, t, m, 7, 1, 3);
        let b = self.bn("stem.bn", c, t);
        let r = self.unary("stem.relu".into(), LayerKind::Relu, b, t);
        let p = self.unary("stem.pool0".into(), LayerKind::MaxPool2, r, t);
        self.unary("stem.pool1".into(), LayerKind::MaxPool2, p, t)
    }

    fn head(&mut self, unet_one_based: usize, x: NodeId, keypoints: usize) {
        let start = self.g.nodes.len();
        let name = format!("head{unet_one_based}");
        let b = self.bn(&format!("{name}.bn"), x, EdgeTag::Head);
        let r = self.unary(format!("{name}.bn.relu"), LayerKind::Relu, b, EdgeTag::Head);
        let out = self.conv(&format!("{name}.conv"), r, EdgeTag::Head, keypoints, 1, 1, 0);
        self.set_context(start, None, None);
        self.g.heads.push(HeadRecord {
            unet: unet_one_based,
            output: out,
        });
    }

    fn semantic_block(
        &mut self,
        id: SemanticBlockId,
        spec: SemanticBlockSpec,
        main: NodeId,
        main_tag: EdgeTag,
        coupling: &[NodeId],
    ) -> Result<BlockRecord> {
        let start = self.g.nodes.len();
        let p = id.prefix();
        let mut inputs = vec![(main, main_tag)];
        inputs.extend(coupling.iter().map(|&c| (c, EdgeTag::Coupling)));
        let input_concat = self.concat(format!("{p}.concat_in"), &inputs);
        let t = EdgeTag::MainFlow;
        let bottleneck = self.preact_conv(&format!("{p}.bn_in"), &format!("{p}.reduce"), input_concat, t, 4 * spec.m, 1);
        let generate = self.preact_conv(&format!("{p}.bn_mid"), &format!("{p}.generate"), bottleneck, t, spec.n, 3);
        let output_concat = self.concat(format!("{p}.concat_out"), &[(input_concat, t), (generate, t)]);
        let compress = self.preact_conv(&format!("{p}.bn_out"), &format!("{p}.compress"), output_concat, t, spec.m, 1);
        self.set_context(start, Some(id.unet), Some(id));
        let record = BlockRecord {
            id,
            input_concat,
            bottleneck,
            generate,
            output_concat,
            compress,
            coupling_inputs: coupling.to_vec(),
        };
        if self.g.block_trace(&record) != spec.channel_trace() {
            return Err(Error::Connectivity(format!("{id}: channel trace mismatch")));
        }
        Ok(record)
    }

    fn dense_block(&mut self, prefix: &str, position: (BlockPath, usize), x: NodeId, x_tag: EdgeTag, cfg: &DenseUNetConfig) -> DenseBlockRecord {
        let start = self.g.nodes.len();
        let t = EdgeTag::MainFlow;
        let mut features = vec![(x, x_tag)];
        let mut layer_inputs = Vec::with_capacity(cfg.layers);
        for j in 0..cfg.layers {
            let lp = format!("{prefix}.layer{j}");
            let cin = self.concat(format!("{lp}.concat"), &features);
            layer_inputs.push(cin);
            let b = self.preact_conv(&format!("{lp}.bn_in"), &format!("{lp}.reduce"), cin, t, cfg.bottleneck, 1);
            let out = self.preact_conv(&format!("{lp}.bn_mid"), &format!("{lp}.generate"), b, t, cfg.growth, 3);
            features.push((out, t));
        }
        let compress_input = self.concat(format!("{prefix}.concat_out"), &features);
        let compress = self.preact_conv(&format!("{prefix}.bn_out"), &format!("{prefix}.compress"), compress_input, t, cfg.m, 1);
        self.set_context(start, Some(0), None);
        DenseBlockRecord {
            position,
            layer_inputs,
            compress_input,
            compress,
        }
    }

    /// Runs one U-Net skeleton, calling `block` at each of the 2D+1 semantic positions.
    fn unet<F>(&mut self, depth: usize, mut x: NodeId, mut in_tag: EdgeTag, mut block: F) -> Result<NodeId>
    where
        F: FnMut(&mut Self, BlockPath, usize, NodeId, EdgeTag) -> Result<NodeId>,
    {
        let mut skips = Vec::with_capacity(depth);
        for level in 0..depth {
            let out = block(self, BlockPath::Down, level, x, in_tag)?;
            skips.push(out);
            let name = format!("{}.pool", self.g.nodes[out].name.rsplit_once('.').map_or("", |s| s.0));
            let (unet, blk) = self.ctx_of(out);
            x = self.unary(name, LayerKind::MaxPool2, out, EdgeTag::MainFlow);
            self.g.nodes[x].unet = unet;
            self.g.nodes[x].block = blk;
            in_tag = EdgeTag::MainFlow;
        }
        x = block(self, BlockPath::Bottom, 0, x, in_tag)?;
        for level in (0..depth).rev() {
            let (unet, _) = self.ctx_of(x);
            let base = self.g.nodes[x].name.rsplit_once('.').map_or("", |s| s.0).to_string();
            let up = self.unary(format!("{base}.upsample"), LayerKind::Upsample2, x, EdgeTag::MainFlow);
            let merged = self.add_node(
                format!("{base}.skip_add"),
                LayerKind::Add,
                &[(up, EdgeTag::MainFlow), (skips[level], EdgeTag::Skip)],
                self.g.nodes[up].out_channels,
                self.res(up),
            );
            for id in [up, merged] {
                self.g.nodes[id].unet = unet;
                self.g.nodes[id].block = None;
            }
            x = block(self, BlockPath::Up, level, merged, EdgeTag::MainFlow)?;
        }
        Ok(x)
    }
}

/// Builds coupled U-Nets, or stacked U-Nets when `cfg.coupling` is off.
pub fn build_cu_net(cfg: &CUNetConfig) -> Result<NetworkGraph> {
    cfg.validate()?;
    let arch = if cfg.coupling {
        Architecture::Coupled
    } else {
        Architecture::Stacked
    };
    let plan = place_supervisions(cfg.supervisions, cfg.unets)?;
    let mut b = Builder::new(arch, cfg.unets, cfg.in_channels, cfg.input_res, cfg.keypoints);
    let input = b.input();
    let mut x = b.stem(input, cfg.m);
    // generated-feature outputs of earlier U-Nets, per semantic position
    let mut exports: BTreeMap<(BlockPath, usize), Vec<NodeId>> = BTreeMap::new();
    for i in 0..cfg.unets {
        let mut records = Vec::new();
        x = b.unet(cfg.depth, x, EdgeTag::MainFlow, |b, path, level, main, tag| {
            let id = SemanticBlockId { unet: i, path, level };
            let sources: Vec<NodeId> = if cfg.coupling {
                exports.get(&(path, level)).cloned().unwrap_or_default()
            } else {
                Vec::new()
            };
            let extra: usize = sources.iter().map(|&s| b.g.nodes[s].out_channels).sum();
            let effective_unet = if cfg.coupling { i } else { 0 };
            let spec = SemanticBlockSpec::new(effective_unet, cfg.m, cfg.n, extra)?;
            let rec = b.semantic_block(id, spec, main, tag, &sources)?;
            let out = rec.compress;
            records.push(rec);
            Ok(out)
        })?;
        for rec in records {
            exports.entry(rec.id.position()).or_default().push(rec.generate);
            b.g.blocks.push(rec);
        }
        if plan.contains(i + 1) {
            b.head(i + 1, x, cfg.keypoints);
        }
    }
    let g = b.g;
    g.check_invariants()?;
    Ok(g)
}

/// Builds a single U-Net whose semantic positions are dense blocks
/// followed by a 1×1 compression back to `m` channels.
pub fn build_dense_unet(cfg: &DenseUNetConfig) -> Result<NetworkGraph> {
    cfg.validate()?;
    let mut b = Builder::new(Architecture::Dense, 1, cfg.in_channels, cfg.input_res, cfg.keypoints);
    let input = b.input();
    let x = b.stem(input, cfg.m);
    let mut records = Vec::new();
    let out = b.unet(cfg.depth, x, EdgeTag::MainFlow, |b, path, level, main, tag| {
        let id = SemanticBlockId { unet: 0, path, level };
        let prefix = format!("dense.{}", id.local_name());
        let rec = b.dense_block(&prefix, (path, level), main, tag, cfg);
        let out = rec.compress;
        records.push(rec);
        Ok(out)
    })?;
    b.g.dense_blocks = records;
    b.head(1, out, cfg.keypoints);
    let g = b.g;
    g.check_invariants()?;
    Ok(g)
}
