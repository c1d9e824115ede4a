use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::forward::{forward, ParamStore};
use super::network::NetworkGraph;
use crate::error::Result;
use crate::supervision::total_loss;
use crate::tensor::{
    finite_diff_check, BatchNormMode, Evaluation, GradCheckConfig, GradCheckReport, Tape, Tensor,
};

/// Batch size of the random probe input.
const BATCH: usize = 2;
/// Train-mode passes used to settle the batch-norm running statistics.
const WARMUP: usize = 3;

fn uniform(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random::<f64>()).collect()).expect("sized")
}

/// Gradient check of the total multi-head loss over every parameter of `g`
/// in binary64.
///
/// Batch norm runs in eval mode with running statistics warmed on random
/// inputs, so every parameter (conv biases included) has a non-degenerate
/// gradient and the loss is a fixed piecewise-smooth function of the weights.
pub fn check_graph_gradients(g: &NetworkGraph, seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut store = ParamStore::<f64>::init(g, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164);
    let in_shape = [BATCH, g.in_channels, g.input_res, g.input_res];
    for _ in 0..WARMUP {
        let x = uniform(&mut rng, in_shape);
        let mut tape = Tape::new();
        let pass = forward(g, &store, &mut tape, &x, BatchNormMode::Train, false)?;
        store.running = pass.running;
    }
    let x = uniform(&mut rng, in_shape);
    let target = uniform(&mut rng, [BATCH, g.keypoints, g.heatmap_res, g.heatmap_res]);

    let running = store.running.clone();
    let eval = |params: &[Tensor<f64>]| -> Result<(Tape<f64>, crate::tensor::Var, Vec<crate::tensor::Var>)> {
        let s = ParamStore {
            tensors: params.to_vec(),
            running: running.clone(),
        };
        let mut tape = Tape::new();
        let pass = forward(g, &s, &mut tape, &x, BatchNormMode::Eval, true)?;
        let t = tape.constant(target.clone());
        let loss = total_loss(&mut tape, &pass.heads, t)?;
        Ok((tape, loss, pass.params))
    };

    let (tape, loss, vars) = eval(&store.tensors)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = store
        .tensors
        .iter()
        .zip(&vars)
        .map(|(p, &v)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape().to_vec())))
        .collect();
    let names: Vec<String> = g.params().iter().map(|p| p.name.clone()).collect();
    let f = |params: &[Tensor<f64>]| match eval(params) {
        Ok((tape, loss, _)) => Evaluation {
            value: tape.value(loss).item(),
            signature: tape.kink_signature(),
        },
        Err(_) => Evaluation::smooth(f64::NAN),
    };
    Ok(finite_diff_check(&names, &mut store.tensors, &analytic, f, cfg))
}
