//! Binary checkpoint: magic `CUNC`, version, the model's key-value config
//! document, the training state, then named little-endian binary32 arrays
//! (parameters, batch-norm running statistics, RMSProp accumulators).

use std::path::Path;

use super::optim::RmsProp;
use super::schedule::TrainState;
use crate::error::{Error, Result};
use crate::graph::{ModelSpec, NetworkGraph, ParamStore};
use crate::io::{self, ByteReader};
use crate::tensor::{RunningStats, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CUNC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Array names in file order for graph `g`.
pub fn entry_names(g: &NetworkGraph) -> Vec<String> {
    let mut names: Vec<String> = g.params().iter().map(|p| p.name.clone()).collect();
    for b in g.batch_norms() {
        names.push(format!("{}.running_mean", b.name));
        names.push(format!("{}.running_var", b.name));
    }
    names.extend(g.params().iter().map(|p| format!("{}.rms", p.name)));
    names
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub state: TrainState,
    pub params: ParamStore<f32>,
    pub optimizer: RmsProp<f32>,
}

pub fn encode_checkpoint(
    g: &NetworkGraph,
    spec: &ModelSpec,
    state: &TrainState,
    params: &ParamStore<f32>,
    optimizer: &RmsProp<f32>,
) -> Result<Vec<u8>> {
    params.check_matches(g)?;
    if optimizer.accum.len() != params.tensors.len() {
        return Err(Error::Params("optimizer state does not mirror parameters".into()));
    }
    let mut arrays: Vec<(&[usize], &[f32])> = params.tensors.iter().map(|t| (t.shape(), t.data())).collect();
    let channels: Vec<[usize; 1]> = params.running.iter().map(|r| [r.mean.len()]).collect();
    for (r, c) in params.running.iter().zip(&channels) {
        arrays.push((c, &r.mean));
        arrays.push((c, &r.var));
    }
    arrays.extend(optimizer.accum.iter().map(|t| (t.shape(), t.data())));

    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    io::put_u32(&mut out, CHECKPOINT_VERSION);
    io::put_string(&mut out, &spec.to_kv());
    io::put_u64(&mut out, state.epoch as u64);
    io::put_f64(&mut out, state.lr);
    io::put_u64(&mut out, state.epochs_since_best as u64);
    io::put_f64(&mut out, state.best_metric);
    io::put_u64(&mut out, state.seed);
    io::put_f64(&mut out, optimizer.alpha as f64);
    io::put_f64(&mut out, optimizer.eps as f64);
    let names = entry_names(g);
    io::put_u32(&mut out, names.len() as u32);
    for (name, (shape, data)) in names.iter().zip(arrays) {
        io::put_string(&mut out, name);
        io::put_u32(&mut out, shape.len() as u32);
        for &d in shape {
            io::put_u32(&mut out, d as u32);
        }
        io::put_f32s(&mut out, data);
    }
    Ok(out)
}

pub fn save_checkpoint(
    path: &Path,
    g: &NetworkGraph,
    spec: &ModelSpec,
    state: &TrainState,
    params: &ParamStore<f32>,
    optimizer: &RmsProp<f32>,
) -> Result<()> {
    io::write_atomic(path, &encode_checkpoint(g, spec, state, params, optimizer)?)
}

/// Reads the config document stored in a checkpoint, so the matching graph
/// can be built before the full load.
pub fn read_checkpoint_spec(path: &Path) -> Result<ModelSpec> {
    let bytes = io::read_file(path)?;
    let mut r = ByteReader::new(path, &bytes);
    read_header(&mut r)
}

fn read_header(r: &mut ByteReader<'_>) -> Result<ModelSpec> {
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(r.fail("not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(r.fail(format!("unsupported checkpoint version {version}")));
    }
    let doc = r.string()?;
    ModelSpec::from_kv(&doc).map_err(|e| r.fail(format!("bad config block: {e}")))
}

/// Loads a checkpoint written for a graph shaped like `g`. The whole file is
/// validated before anything is returned, so a rejected file leaves the
/// caller's state untouched.
pub fn load_checkpoint(path: &Path, g: &NetworkGraph) -> Result<Checkpoint> {
    let bytes = io::read_file(path)?;
    let mut r = ByteReader::new(path, &bytes);
    let spec = read_header(&mut r)?;
    let state = TrainState {
        epoch: r.u64()? as usize,
        lr: r.f64()?,
        epochs_since_best: r.u64()? as usize,
        best_metric: r.f64()?,
        seed: r.u64()?,
    };
    let alpha = r.f64()? as f32;
    let eps = r.f64()? as f32;

    let expected = entry_names(g);
    let shapes: Vec<Vec<usize>> = {
        let mut s: Vec<Vec<usize>> = g.params().iter().map(|p| p.shape.clone()).collect();
        for b in g.batch_norms() {
            s.push(vec![b.channels]);
            s.push(vec![b.channels]);
        }
        s.extend(g.params().iter().map(|p| p.shape.clone()));
        s
    };
    let count = r.u32()? as usize;
    let mut arrays = Vec::with_capacity(count);
    for i in 0..count {
        let name = r.string()?;
        match expected.get(i) {
            Some(want) if *want == name => {}
            Some(want) => {
                return Err(r.fail(format!(
                    "first mismatched parameter: expected `{want}`, found `{name}`"
                )))
            }
            None => return Err(r.fail(format!("first mismatched parameter: unexpected `{name}`"))),
        }
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if shape != shapes[i] {
            return Err(r.fail(format!(
                "first mismatched parameter: `{name}` has shape {shape:?}, graph expects {:?}",
                shapes[i]
            )));
        }
        let numel = shape.iter().product();
        arrays.push(Tensor::from_vec(shape, r.f32s(numel)?)?);
    }
    if count < expected.len() {
        return Err(r.fail(format!("first mismatched parameter: missing `{}`", expected[count])));
    }
    if r.remaining() != 0 {
        return Err(r.fail(format!("{} trailing bytes", r.remaining())));
    }

    let np = g.params().len();
    let mut it = arrays.into_iter();
    let tensors: Vec<Tensor<f32>> = it.by_ref().take(np).collect();
    let running = (0..g.batch_norms().len())
        .map(|_| RunningStats {
            mean: it.next().expect("counted").into_data(),
            var: it.next().expect("counted").into_data(),
        })
        .collect();
    let accum = it.collect();
    Ok(Checkpoint {
        spec,
        state,
        params: ParamStore { tensors, running },
        optimizer: RmsProp { alpha, eps, accum },
    })
}
