use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::save_checkpoint;
use super::optim::RmsProp;
use super::schedule::{lr_schedule, TrainState};
use crate::data::{augment, derive_seed, Sample};
use crate::error::{Error, Result};
use crate::graph::{forward, ModelSpec, NetworkGraph, ParamStore};
use crate::io;
use crate::metrics::{decode_keypoints, pck, EvalResult, GroundTruth, RefLength};
use crate::supervision::total_loss;
use crate::tensor::{BatchNormMode, Tape, Tensor};

pub const LOG_HEADER: &str = "epoch,train_loss,val_pck,lr,seconds";
pub const LOG_FILE: &str = "train_log.csv";
pub const CHECKPOINT_FILE: &str = "best.ckpt";

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Random scale, rotation and flip on training samples.
    pub augment: bool,
    /// Heatmap Gaussian width used when re-rendering augmented targets.
    pub sigma: f64,
    pub alpha: f64,
    pub reference: RefLength,
    /// Write wall-clock seconds to the log; when off the column is 0 so logs
    /// of identical runs compare equal byte for byte.
    pub record_time: bool,
    /// Stop after the first epoch whose validation metric reaches this value.
    pub stop_at: Option<f64>,
    /// Threads assembling batches ahead of the optimisation loop.
    pub workers: usize,
    pub eval_batch: usize,
    pub verbose: bool,
}

impl TrainConfig {
    pub fn new(epochs: usize, sigma: f64) -> Self {
        TrainConfig {
            epochs,
            batch_size: 8,
            augment: true,
            sigma,
            alpha: 0.5,
            reference: RefLength::Head,
            record_time: true,
            stop_at: None,
            workers: 1,
            eval_batch: 32,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_pck: f64,
    pub lr: f64,
    pub seconds: f64,
}

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.8},{:.6},{:e},{:.3}",
            self.epoch, self.train_loss, self.val_pck, self.lr, self.seconds
        )
    }
}

pub fn log_csv(rows: &[EpochLog]) -> String {
    let mut out = format!("{LOG_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub log: Vec<EpochLog>,
    /// Validation metric of the untrained network.
    pub initial_val: f64,
    /// Validation result after the last completed epoch.
    pub final_val: EvalResult,
    pub params: ParamStore<f32>,
    pub optimizer: RmsProp<f32>,
    pub checkpoint: PathBuf,
}

/// Checks that samples match the graph's input and output resolutions.
pub fn check_dataset(g: &NetworkGraph, samples: &[Sample]) -> Result<()> {
    let s = samples
        .first()
        .ok_or_else(|| Error::invalid("train", "dataset is empty"))?;
    let want_img = [g.in_channels, g.input_res, g.input_res];
    let want_hm = [g.keypoints, g.heatmap_res, g.heatmap_res];
    if s.image.shape() != want_img {
        return Err(Error::ShapeMismatch {
            op: "dataset image",
            lhs: s.image.shape().to_vec(),
            rhs: want_img.to_vec(),
        });
    }
    if s.heatmaps.shape() != want_hm {
        return Err(Error::ShapeMismatch {
            op: "dataset heatmaps",
            lhs: s.heatmaps.shape().to_vec(),
            rhs: want_hm.to_vec(),
        });
    }
    Ok(())
}

fn stack<'a>(items: impl Iterator<Item = &'a Tensor<f32>>) -> Tensor<f32> {
    let items: Vec<&Tensor<f32>> = items.collect();
    let mut shape = vec![items.len()];
    shape.extend_from_slice(items[0].shape());
    let mut data = Vec::with_capacity(items.len() * items[0].numel());
    for t in items {
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec(shape, data).expect("equal shapes")
}

struct Batch {
    images: Tensor<f32>,
    targets: Tensor<f32>,
}

fn assemble(samples: &[Sample], indices: &[usize], seeds: Option<&[u64]>, sigma: f64) -> Batch {
    match seeds {
        Some(seeds) => {
            let aug: Vec<Sample> = indices
                .iter()
                .zip(seeds)
                .map(|(&i, &s)| augment(&samples[i], s, sigma))
                .collect();
            Batch {
                images: stack(aug.iter().map(|s| &s.image)),
                targets: stack(aug.iter().map(|s| &s.heatmaps)),
            }
        }
        None => Batch {
            images: stack(indices.iter().map(|&i| &samples[i].image)),
            targets: stack(indices.iter().map(|&i| &samples[i].heatmaps)),
        },
    }
}

/// Eval-mode accuracy of the final head on `samples`.
pub fn evaluate(
    g: &NetworkGraph,
    store: &ParamStore<f32>,
    samples: &[Sample],
    alpha: f64,
    reference: RefLength,
    batch: usize,
) -> Result<EvalResult> {
    let stride = g.input_res as f64 / g.heatmap_res as f64;
    let mut preds = Vec::with_capacity(samples.len());
    let all: Vec<usize> = (0..samples.len()).collect();
    for chunk in all.chunks(batch.max(1)) {
        let b = assemble(samples, chunk, None, 1.0);
        let out = crate::graph::predict(g, store, &b.images)?;
        preds.extend(decode_keypoints(&out)?);
    }
    let gt: Vec<GroundTruth> = samples
        .iter()
        .map(|s| GroundTruth::from_pose(&s.pose, stride))
        .collect();
    pck(&preds, &gt, alpha, reference)
}

/// One optimisation step; returns the batch loss.
fn train_step(
    g: &NetworkGraph,
    store: &mut ParamStore<f32>,
    opt: &mut RmsProp<f32>,
    batch: &Batch,
    lr: f32,
) -> Result<f64> {
    let mut tape = Tape::new();
    let pass = forward(g, store, &mut tape, &batch.images, BatchNormMode::Train, true)?;
    let target = tape.constant(batch.targets.clone());
    let loss = total_loss(&mut tape, &pass.heads, target)?;
    let value = tape.value(loss).item() as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("training loss is {value}")));
    }
    let grads = tape.backward(loss)?;
    let report = opt.step(&mut store.tensors, &pass.params, &grads, lr);
    if !report.non_finite.is_empty() {
        let names: Vec<&str> = report
            .non_finite
            .iter()
            .map(|&i| g.params()[i].name.as_str())
            .collect();
        eprintln!("skipped optimizer step: non-finite gradient in {}", names.join(", "));
    }
    store.running = pass.running;
    Ok(value)
}

/// Per-epoch batches with their augmentation seeds, in consumption order.
fn epoch_plan(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<(Vec<usize>, Vec<u64>)> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch as u64, 2)));
    order
        .chunks(batch)
        .enumerate()
        .map(|(b, idx)| {
            let seeds = (0..idx.len())
                .map(|j| derive_seed(seed, (epoch * n + b * batch + j) as u64, 3))
                .collect();
            (idx.to_vec(), seeds)
        })
        .collect()
}

/// Trains `spec` from its seeded initialisation.
///
/// Writes `best.ckpt` (initially and whenever validation improves) and
/// `train_log.csv` into `out_dir`. A non-finite loss aborts the run, leaving
/// the last checkpoint in place.
pub fn train(
    spec: &ModelSpec,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    if cfg.batch_size == 0 {
        return Err(Error::invalid("train", "batch size must be positive"));
    }
    let g = spec.build()?;
    check_dataset(&g, train_set)?;
    check_dataset(&g, val_set)?;
    io::create_dir(out_dir)?;
    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    let log_path = out_dir.join(LOG_FILE);

    let mut store = ParamStore::<f32>::init(&g, spec.seed());
    let mut opt = RmsProp::new(&store.tensors);
    let mut state = TrainState::new(spec.seed());
    let initial = evaluate(&g, &store, val_set, cfg.alpha, cfg.reference, cfg.eval_batch)?;
    let initial_val = initial.aggregate();
    state = lr_schedule(&state, initial_val);
    save_checkpoint(&ckpt_path, &g, spec, &state, &store, &opt)?;
    let mut log = Vec::new();
    io::write_atomic(&log_path, log_csv(&log).as_bytes())?;
    let mut final_val = initial;

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let plan = epoch_plan(train_set.len(), cfg.batch_size, state.seed, epoch);
        let lr = state.lr as f32;
        let mut loss_sum = 0.0;
        let workers = cfg.workers.clamp(1, plan.len().max(1));
        let outcome: Result<()> = std::thread::scope(|scope| {
            // worker w assembles batches w, w+workers, ...; reading the
            // channels round-robin restores the planned order
            let mut receivers = Vec::with_capacity(workers);
            for w in 0..workers {
                let (tx, rx) = mpsc::sync_channel::<Batch>(2);
                receivers.push(rx);
                let plan = &plan;
                scope.spawn(move || {
                    for (idx, seeds) in plan.iter().skip(w).step_by(workers) {
                        let aug = cfg.augment.then_some(seeds.as_slice());
                        if tx.send(assemble(train_set, idx, aug, cfg.sigma)).is_err() {
                            return;
                        }
                    }
                });
            }
            for b in 0..plan.len() {
                let batch = receivers[b % workers]
                    .recv()
                    .map_err(|_| Error::invalid("train", "batch worker stopped early"))?;
                loss_sum += train_step(&g, &mut store, &mut opt, &batch, lr)?;
            }
            Ok(())
        });
        outcome?;
        let val = evaluate(&g, &store, val_set, cfg.alpha, cfg.reference, cfg.eval_batch)?;
        let metric = val.aggregate();
        let improved = state.improves(metric);
        let row = EpochLog {
            epoch,
            train_loss: loss_sum / plan.len() as f64,
            val_pck: metric,
            lr: state.lr,
            seconds: if cfg.record_time {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        state = lr_schedule(&state, metric);
        state.epoch = epoch;
        if improved {
            save_checkpoint(&ckpt_path, &g, spec, &state, &store, &opt)?;
        }
        if cfg.verbose {
            eprintln!("{}", row.csv_row());
        }
        log.push(row);
        io::write_atomic(&log_path, log_csv(&log).as_bytes())?;
        final_val = val;
        if cfg.stop_at.is_some_and(|t| metric >= t) {
            break;
        }
    }
    Ok(TrainOutcome {
        state,
        log,
        initial_val,
        final_val,
        params: store,
        optimizer: opt,
        checkpoint: ckpt_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_covers_every_sample_once() {
        let plan = epoch_plan(21, 8, 3, 1);
        assert_eq!(plan.len(), 3);
        let mut seen: Vec<usize> = plan.iter().flat_map(|(i, _)| i.clone()).collect();
        seen.sort();
        assert_eq!(seen, (0..21).collect::<Vec<_>>());
        assert_ne!(epoch_plan(21, 8, 3, 1)[0].0, epoch_plan(21, 8, 3, 2)[0].0);
    }

    #[test]
    fn log_header_only_when_empty() {
        assert_eq!(log_csv(&[]), "epoch,train_loss,val_pck,lr,seconds\n");
    }
}
