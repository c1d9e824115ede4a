use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::network::{LayerKind, NetworkGraph, ParamKind};
use crate::error::{Error, Result};
use crate::tensor::{BatchNormMode, RunningStats, Scalar, Tape, Tensor, Var};

/// Parameter values and batch-norm running statistics for one graph,
/// aligned with `NetworkGraph::params()` and `NetworkGraph::batch_norms()`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    pub tensors: Vec<Tensor<T>>,
    pub running: Vec<RunningStats<T>>,
}

impl<T: Scalar> ParamStore<T> {
    /// He-normal conv weights (variance 2/fan_in), zero biases, BN γ=1, β=0.
    pub fn init(g: &NetworkGraph, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = g
            .params()
            .iter()
            .map(|p| match p.kind {
                ParamKind::ConvWeight => {
                    let normal = Normal::new(0.0, (2.0 / p.fan_in() as f64).sqrt()).expect("finite std");
                    let data = (0..p.numel()).map(|_| T::from_f64(normal.sample(&mut rng))).collect();
                    Tensor::from_vec(p.shape.clone(), data).expect("shape matches")
                }
                ParamKind::ConvBias | ParamKind::BnBeta => Tensor::zeros(p.shape.clone()),
                ParamKind::BnGamma => Tensor::ones(p.shape.clone()),
            })
            .collect();
        let running = g.batch_norms().iter().map(|b| RunningStats::new(b.channels)).collect();
        ParamStore { tensors, running }
    }

    pub fn check_matches(&self, g: &NetworkGraph) -> Result<()> {
        if self.tensors.len() != g.params().len() {
            return Err(Error::Params(format!(
                "graph has {} parameters, store has {}",
                g.params().len(),
                self.tensors.len()
            )));
        }
        for (spec, t) in g.params().iter().zip(&self.tensors) {
            if spec.shape != t.shape() {
                return Err(Error::Params(format!(
                    "{}: expected shape {:?}, found {:?}",
                    spec.name,
                    spec.shape,
                    t.shape()
                )));
            }
        }
        if self.running.len() != g.batch_norms().len()
            || g.batch_norms().iter().zip(&self.running).any(|(b, r)| b.channels != r.channels())
        {
            return Err(Error::Params("batch-norm running statistics do not match".into()));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            running: self.running.iter().map(RunningStats::cast).collect(),
        }
    }

    /// Copies every parameter of `dst` from the equally named one in `src`.
    pub fn transfer(dst: &NetworkGraph, src: &NetworkGraph, values: &ParamStore<T>) -> Result<Self> {
        let mut tensors = Vec::with_capacity(dst.params().len());
        for p in dst.params() {
            let i = src
                .param_index(&p.name)
                .ok_or_else(|| Error::Params(format!("no source parameter named {}", p.name)))?;
            if values.tensors[i].shape() != p.shape {
                return Err(Error::Params(format!("{}: shape differs between graphs", p.name)));
            }
            tensors.push(values.tensors[i].clone());
        }
        let mut running = Vec::with_capacity(dst.batch_norms().len());
        for b in dst.batch_norms() {
            let i = src
                .batch_norms()
                .iter()
                .position(|s| s.name == b.name)
                .ok_or_else(|| Error::Params(format!("no source batch norm named {}", b.name)))?;
            running.push(values.running[i].clone());
        }
        Ok(ParamStore { tensors, running })
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}

/// Tape handles produced by one forward pass.
pub struct ForwardPass<T> {
    /// One `N×K×R×R` output per supervision head, final head last.
    pub heads: Vec<Var>,
    /// Leaf handle of every parameter, aligned with `NetworkGraph::params()`.
    pub params: Vec<Var>,
    /// Output handle of every layer node.
    pub nodes: Vec<Var>,
    /// Running statistics after this pass (updated in train mode).
    pub running: Vec<RunningStats<T>>,
}

/// Executes `g` on `input` (`N×in_channels×input_res×input_res`).
///
/// Parameters become tape leaves that require grad when `track_grads` is set.
pub fn forward<T: Scalar>(
    g: &NetworkGraph,
    store: &ParamStore<T>,
    tape: &mut Tape<T>,
    input: &Tensor<T>,
    mode: BatchNormMode,
    track_grads: bool,
) -> Result<ForwardPass<T>> {
    store.check_matches(g)?;
    let [_, c, h, w] = input.dims4("forward")?;
    if c != g.in_channels || h != g.input_res || w != g.input_res {
        return Err(Error::ShapeMismatch {
            op: "forward",
            lhs: input.shape().to_vec(),
            rhs: vec![0, g.in_channels, g.input_res, g.input_res],
        });
    }
    let params: Vec<Var> = store
        .tensors
        .iter()
        .map(|t| tape.leaf(t.clone(), track_grads))
        .collect();
    let mut running = store.running.clone();
    let mut vars: Vec<Var> = Vec::with_capacity(g.nodes().len());
    let mut input_var = Some(tape.constant(input.clone()));
    for node in g.nodes() {
        let arg = |k: usize| vars[node.inputs[k]];
        let v = match &node.kind {
            LayerKind::Input => input_var
                .take()
                .ok_or_else(|| Error::Connectivity("graph has more than one input".into()))?,
            LayerKind::Conv {
                weight,
                bias,
                stride,
                pad,
                ..
            } => tape.conv2d(arg(0), params[*weight], params[*bias], *stride, *pad)?,
            LayerKind::BatchNorm { gamma, beta, stats } => {
                tape.batch_norm(arg(0), params[*gamma], params[*beta], &mut running[*stats], mode)?
            }
            LayerKind::Relu => tape.relu(arg(0)),
            LayerKind::MaxPool2 => tape.max_pool2(arg(0))?,
            LayerKind::Upsample2 => tape.upsample_nearest2(arg(0))?,
            LayerKind::Concat => {
                let xs: Vec<Var> = node.inputs.iter().map(|&i| vars[i]).collect();
                tape.concat_channels(&xs)?
            }
            LayerKind::Add => tape.add(arg(0), arg(1))?,
        };
        vars.push(v);
    }
    let heads = g.heads().iter().map(|h| vars[h.output]).collect();
    Ok(ForwardPass {
        heads,
        params,
        nodes: vars,
        running,
    })
}

/// Eval-mode prediction of the final head, without gradient tracking.
pub fn predict<T: Scalar>(g: &NetworkGraph, store: &ParamStore<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let pass = forward(g, store, &mut tape, input, BatchNormMode::Eval, false)?;
    let last = *pass.heads.last().ok_or_else(|| Error::Connectivity("graph has no heads".into()))?;
    Ok(tape.value(last).clone())
}
