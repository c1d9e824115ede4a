use std::path::Path;

use cunet::data::{default_sigma, Manifest, Sample};
use cunet::graph::{predict, CUNetConfig, ModelSpec, ParamStore};
use cunet::tensor::{Tape, Tensor};
use cunet::train::{
    load_checkpoint, lr_schedule, rmsprop_step, save_checkpoint, train, RmsProp, TrainConfig, TrainState,
    CHECKPOINT_FILE, LOG_FILE, LOG_HEADER, LR_DECAYED, LR_INITIAL, RMS_ALPHA, RMS_EPS,
};
use cunet::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny16() -> CUNetConfig {
    CUNetConfig {
        keypoints: 16,
        ..CUNetConfig::tiny()
    }
}

fn samples(seed: u64, count: usize, res: usize) -> Vec<Sample> {
    let m = Manifest::new(seed, count, res, 1).unwrap();
    (0..count).map(|i| m.generate(i)).collect()
}

#[test]
fn rmsprop_single_step_closed_form() {
    let (mut theta, mut s) = ([0.0f64], [0.0f64]);
    assert!(rmsprop_step(&mut theta, &[1.0], &mut s, RMS_ALPHA, RMS_EPS, 1e-3));
    assert!((s[0] - 0.01).abs() < 1e-15);
    let want = -1e-3 / (0.1 + 1e-8);
    assert!((theta[0] - want).abs() < 1e-15);
    assert!((theta[0] + 9.999e-3).abs() < 1e-6);

    let (mut theta, mut s) = ([2.0f64, -1.0], [0.5f64, 0.25]);
    assert!(rmsprop_step(&mut theta, &[0.0, 0.0], &mut s, 0.99, 1e-8, 1e-3));
    assert_eq!(theta, [2.0, -1.0]);
    assert_eq!(s, [0.99 * 0.5, 0.99 * 0.25]);
}

#[test]
fn rmsprop_skips_non_finite_gradients() {
    let (mut theta, mut s) = ([1.0f64, 2.0], [0.1f64, 0.2]);
    assert!(!rmsprop_step(&mut theta, &[0.5, f64::NAN], &mut s, 0.99, 1e-8, 1e-3));
    assert_eq!((theta, s), ([1.0, 2.0], [0.1, 0.2]));
}

#[test]
fn rmsprop_descends_a_quadratic() {
    let (mut theta, mut s) = ([3.0f64], [0.0f64]);
    let mut prev = theta[0].abs();
    for step in 0..100 {
        let g = 2.0 * theta[0];
        rmsprop_step(&mut theta, &[g], &mut s, RMS_ALPHA, RMS_EPS, 1e-2);
        assert!(theta[0].abs() < prev, "step {step}: {} !< {prev}", theta[0].abs());
        assert!(s[0] >= 0.0);
        prev = theta[0].abs();
    }
}

#[test]
fn optimizer_leaves_unreached_parameters_alone() {
    let params = vec![Tensor::<f64>::full([2], 1.0), Tensor::full([3], 1.0)];
    let mut opt = RmsProp::new(&params);
    assert_eq!(opt.accum.iter().map(|a| a.shape().to_vec()).collect::<Vec<_>>(), vec![vec![2], vec![3]]);
    let mut tape = Tape::new();
    let a = tape.param(params[0].clone());
    let b = tape.param(params[1].clone());
    let loss = tape.sum(a);
    let grads = tape.backward(loss).unwrap();
    let mut updated = params.clone();
    let report = opt.step(&mut updated, &[a, b], &grads, 1e-3);
    assert_eq!((report.updated, report.untouched), (1, 1));
    assert_ne!(updated[0], params[0]);
    assert_eq!(updated[1], params[1]);
    assert!(opt.accum[1].data().iter().all(|&v| v == 0.0));
}

#[test]
fn schedule_decays_once_after_a_plateau() {
    let mut s = TrainState::new(0);
    for e in 1..=20 {
        s = lr_schedule(&s, 0.01 * e as f64);
        assert_eq!(s.lr, LR_INITIAL);
    }

    // epoch 1 sets the best value, epochs 2..=6 are flat
    let mut s = TrainState::new(0);
    let mut rates = Vec::new();
    for _ in 1..=12 {
        s = lr_schedule(&s, 0.5);
        rates.push(s.lr);
    }
    assert!(rates[..5].iter().all(|&r| r == LR_INITIAL));
    assert!(rates[5..].iter().all(|&r| r == LR_DECAYED), "{rates:?}");

    // tiny gains below the threshold do not reset the counter, and a later
    // improvement does not undo the decay
    let mut s = TrainState::new(0);
    s = lr_schedule(&s, 0.5);
    for _ in 1..=5 {
        s = lr_schedule(&s, 0.5 + 5e-5);
    }
    assert_eq!(s.lr, LR_DECAYED);
    s = lr_schedule(&s, 0.9);
    assert_eq!((s.lr, s.epochs_since_best), (LR_DECAYED, 0));
}

fn quick_cfg(epochs: usize) -> TrainConfig {
    let mut cfg = TrainConfig::new(epochs, default_sigma(8));
    cfg.record_time = false;
    cfg
}

#[test]
fn zero_epochs_write_initial_checkpoint_and_empty_log() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ModelSpec::Cu(tiny16());
    let out = train(&spec, &samples(1, 16, 32), &samples(2, 8, 32), &quick_cfg(0), dir.path()).unwrap();
    assert!(out.log.is_empty());
    assert_eq!(std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap(), format!("{LOG_HEADER}\n"));
    let g = spec.build().unwrap();
    let ck = load_checkpoint(&dir.path().join(CHECKPOINT_FILE), &g).unwrap();
    assert_eq!(ck.params, ParamStore::init(&g, spec.seed()));
    assert_eq!(ck.state.epoch, 0);
}

fn run_log(dir: &Path, workers: usize) -> String {
    let mut cfg = quick_cfg(2);
    cfg.workers = workers;
    train(&ModelSpec::Cu(tiny16()), &samples(3, 24, 32), &samples(4, 8, 32), &cfg, dir).unwrap();
    std::fs::read_to_string(dir.join(LOG_FILE)).unwrap()
}

#[test]
fn training_is_deterministic_for_any_worker_count() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_log(a.path(), 1);
    assert_eq!(first.lines().count(), 3);
    assert_eq!(first, run_log(b.path(), 1));
    assert_eq!(first, run_log(c.path(), 3));
    assert_eq!(
        std::fs::read(a.path().join(CHECKPOINT_FILE)).unwrap(),
        std::fs::read(c.path().join(CHECKPOINT_FILE)).unwrap()
    );
}

#[test]
fn tiny_network_overfits_a_small_set() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick_cfg(20);
    cfg.augment = false;
    let train_set = samples(5, 64, 32);
    let out = train(&ModelSpec::Cu(tiny16()), &train_set, &train_set[..16], &cfg, dir.path()).unwrap();
    let first = out.log.first().unwrap().train_loss;
    let last = out.log.last().unwrap().train_loss;
    assert_eq!(out.log.len(), 20);
    assert!(last < 0.5 * first, "loss {first} -> {last}");
    assert!(out.log.iter().all(|r| r.lr == LR_INITIAL || r.lr == LR_DECAYED));
}

#[test]
fn non_finite_loss_aborts_and_keeps_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut bad = samples(6, 16, 32);
    for s in &mut bad {
        s.image.data_mut()[0] = f32::NAN;
    }
    let err = train(&ModelSpec::Cu(tiny16()), &bad, &samples(7, 8, 32), &quick_cfg(2), dir.path()).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)), "{err}");
    let g = tiny16();
    load_checkpoint(&dir.path().join(CHECKPOINT_FILE), &cunet::graph::build_cu_net(&g).unwrap()).unwrap();
}

fn perturbed_state(spec: &ModelSpec, seed: u64) -> (ParamStore<f32>, RmsProp<f32>) {
    let g = spec.build().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f32>::init(&g, seed);
    for t in &mut store.tensors {
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
    }
    for r in &mut store.running {
        r.mean.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        r.var.iter_mut().for_each(|v| *v = rng.random_range(0.5..2.0));
    }
    let mut opt = RmsProp::new(&store.tensors);
    for a in &mut opt.accum {
        a.data_mut().iter_mut().for_each(|v| *v = rng.random_range(0.0..1e-3));
    }
    (store, opt)
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ckpt");
    let spec = ModelSpec::Cu(tiny16());
    let g = spec.build().unwrap();
    let (store, opt) = perturbed_state(&spec, 9);
    let state = TrainState {
        epoch: 7,
        lr: LR_DECAYED,
        epochs_since_best: 2,
        best_metric: 0.625,
        seed: 11,
    };
    save_checkpoint(&path, &g, &spec, &state, &store, &opt).unwrap();
    let ck = load_checkpoint(&path, &g).unwrap();
    assert_eq!(ck.spec.to_kv(), spec.to_kv());
    assert_eq!(ck.state, state);
    assert_eq!(ck.params, store);
    assert_eq!(ck.optimizer, opt);
    let x = samples(8, 2, 32);
    let input = Tensor::stack(&[x[0].image.clone(), x[1].image.clone()]).unwrap();
    let before = predict(&g, &store, &input).unwrap();
    let after = predict(&g, &ck.params, &input).unwrap();
    assert_eq!(
        before.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        after.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn truncated_and_mismatched_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ckpt");
    let spec = ModelSpec::Cu(tiny16());
    let g = spec.build().unwrap();
    let (store, opt) = perturbed_state(&spec, 1);
    save_checkpoint(&path, &g, &spec, &TrainState::new(0), &store, &opt).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    let cut = dir.path().join("cut.ckpt");
    for len in [0, 3, 8, 40, bytes.len() / 2, bytes.len() - 1] {
        std::fs::write(&cut, &bytes[..len]).unwrap();
        assert!(load_checkpoint(&cut, &g).is_err(), "accepted {len} of {} bytes", bytes.len());
    }
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    std::fs::write(&cut, &bad_magic).unwrap();
    assert!(load_checkpoint(&cut, &g).is_err());

    let wider = CUNetConfig { n: 6, ..tiny16() };
    let msg = load_checkpoint(&path, &cunet::graph::build_cu_net(&wider).unwrap())
        .unwrap_err()
        .to_string();
    assert!(msg.contains("u0.down0.generate.weight"), "{msg}");

    let deeper = CUNetConfig { unets: 3, ..tiny16() };
    let msg = load_checkpoint(&path, &cunet::graph::build_cu_net(&deeper).unwrap())
        .unwrap_err()
        .to_string();
    assert!(msg.contains("first mismatched parameter"), "{msg}");
}
