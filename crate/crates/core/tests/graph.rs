mod common;

use common::{analytic_cu_params, analytic_dense_params, check_dot};
use cunet::graph::{
    build_cu_net, build_dense_unet, calibrate_dense, calibrate_to_target, forward, predict, to_dot, BlockPath,
    CUNetConfig, DenseUNetConfig, LayerKind, NetworkGraph, ParamStore, SemanticBlockSpec, CALIBRATION_TOLERANCE,
};
use cunet::supervision::total_loss;
use cunet::tensor::{BatchNormMode, Tape, Tensor};
use cunet::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_config(rng: &mut ChaCha8Rng) -> CUNetConfig {
    let depth = rng.random_range(1..=3);
    let unets = rng.random_range(1..=4);
    let n = rng.random_range(1..=12);
    CUNetConfig {
        unets,
        m: n + rng.random_range(0..20),
        n,
        depth,
        keypoints: rng.random_range(1..=16),
        in_channels: rng.random_range(1..=3),
        input_res: 4 << depth << rng.random_range(0..2),
        coupling: rng.random_bool(0.7),
        supervisions: rng.random_range(1..=unets),
        seed: 0,
    }
}

fn random_input(seed: u64, n: usize, c: usize, res: usize) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * c * res * res).map(|_| rng.random_range(0.0..1.0)).collect();
    Tensor::from_vec(vec![n, c, res, res], data).unwrap()
}

fn cfg(unets: usize, m: usize, n: usize, depth: usize) -> CUNetConfig {
    CUNetConfig {
        unets,
        m,
        n,
        depth,
        supervisions: 1,
        ..CUNetConfig::paper(unets, 1)
    }
}

#[test]
fn param_count_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..20 {
        let c = random_config(&mut rng);
        let g = build_cu_net(&c).unwrap();
        assert_eq!(g.param_count(), analytic_cu_params(&c), "{c:?}");
    }
    for layers in 1..=4 {
        for growth in [1, 5, 12] {
            let d = DenseUNetConfig::new(layers, growth, &CUNetConfig::desk(2));
            assert_eq!(build_dense_unet(&d).unwrap().param_count(), analytic_dense_params(&d));
        }
    }
}

#[test]
fn pointwise_conv_count() {
    // the head is a 1×1 conv from m to K; with m=4, K=8 it owns 4·8 + 8
    let c = CUNetConfig {
        unets: 1,
        m: 4,
        n: 1,
        depth: 1,
        keypoints: 8,
        in_channels: 1,
        input_res: 8,
        coupling: true,
        supervisions: 1,
        seed: 0,
    };
    let g = build_cu_net(&c).unwrap();
    let w = &g.params()[g.param_index("head1.conv.weight").unwrap()];
    let b = &g.params()[g.param_index("head1.conv.bias").unwrap()];
    assert_eq!(w.numel() + b.numel(), 40);
}

#[test]
fn block_channel_traces() {
    let trace = |i| SemanticBlockSpec::new(i, 128, 32, 32 * i).unwrap().channel_trace();
    assert_eq!(trace(0), [128, 512, 32, 160, 128]);
    assert_eq!(trace(2), [192, 512, 32, 224, 128]);
    assert_eq!(trace(7)[0], 352);
    let err = SemanticBlockSpec::new(2, 128, 32, 32).unwrap_err();
    assert!(matches!(err, Error::Connectivity(_)));
}

#[test]
fn last_unet_blocks_read_all_earlier_exports() {
    let g = build_cu_net(&CUNetConfig::paper(8, 4)).unwrap();
    let last: Vec<_> = g.blocks().iter().filter(|b| b.id.unet == 7).collect();
    assert_eq!(last.len(), 9);
    for b in last {
        assert_eq!(g.node(b.input_concat).out_channels, 128 + 7 * 32);
        assert_eq!(b.coupling_inputs.len(), 7);
    }
}

#[test]
fn coupling_edge_count() {
    let g = build_cu_net(&cfg(3, 16, 8, 2)).unwrap();
    assert_eq!(g.coupling_edge_count(), 15);
    let mut off = cfg(3, 16, 8, 2);
    off.coupling = false;
    assert_eq!(build_cu_net(&off).unwrap().coupling_edge_count(), 0);
    assert_eq!(build_cu_net(&cfg(1, 16, 8, 2)).unwrap().coupling_edge_count(), 0);
}

#[test]
fn dot_is_well_formed_and_labels_couplings() {
    let g = build_cu_net(&cfg(3, 16, 8, 2)).unwrap();
    let dot = to_dot(&g);
    let (nodes, edges) = check_dot(&dot).unwrap();
    assert_eq!(nodes, g.nodes().len());
    assert_eq!(edges, g.edges().len());
    assert_eq!(dot.matches("label=\"coupling\"").count(), 15);
    let single = to_dot(&build_cu_net(&cfg(1, 16, 8, 2)).unwrap());
    check_dot(&single).unwrap();
    assert_eq!(single.matches("label=\"coupling\"").count(), 0);
}

#[test]
fn param_count_is_monotone() {
    let base = cfg(2, 32, 16, 3);
    let count = |c: &CUNetConfig| build_cu_net(c).unwrap().param_count();
    let c0 = count(&base);
    assert!(count(&CUNetConfig { m: 40, ..base.clone() }) > c0);
    assert!(count(&CUNetConfig { n: 20, ..base.clone() }) > c0);
    assert!(count(&CUNetConfig { unets: 3, ..base.clone() }) > c0);
    assert!(count(&CUNetConfig { depth: 4, ..base.clone() }) > c0);
    let stacked = CUNetConfig {
        coupling: false,
        ..base.clone()
    };
    assert!(count(&stacked) < c0);

    let d = DenseUNetConfig::new(3, 12, &base);
    let dc = |d: &DenseUNetConfig| build_dense_unet(d).unwrap().param_count();
    assert!(dc(&DenseUNetConfig { layers: 4, ..d.clone() }) > dc(&d));
    assert!(dc(&DenseUNetConfig::new(3, 13, &base)) > dc(&d));
}

#[test]
fn dense_layer_widths() {
    let mut d = DenseUNetConfig::new(3, 16, &CUNetConfig::desk(1));
    d.m = 64;
    let g = build_dense_unet(&d).unwrap();
    for b in g.dense_blocks() {
        let widths: Vec<usize> = b.layer_inputs.iter().map(|&n| g.node(n).out_channels).collect();
        assert_eq!(widths, vec![64, 80, 96]);
        assert_eq!(g.node(b.compress_input).out_channels, 112);
        assert_eq!(g.node(b.compress).out_channels, 64);
    }
    let mut one = d.clone();
    one.layers = 1;
    let g = build_dense_unet(&one).unwrap();
    assert!(g.dense_blocks().iter().all(|b| b.layer_inputs.len() == 1));
}

fn node_signature(g: &NetworkGraph) -> Vec<(String, String, usize, usize, usize)> {
    g.nodes()
        .iter()
        .map(|n| (n.name.clone(), n.kind.label(), n.in_channels, n.out_channels, n.resolution))
        .collect()
}

#[test]
fn single_unet_builds_coincide() {
    let coupled = build_cu_net(&cfg(1, 8, 4, 2)).unwrap();
    let mut off = cfg(1, 8, 4, 2);
    off.coupling = false;
    let stacked = build_cu_net(&off).unwrap();
    assert_eq!(node_signature(&coupled), node_signature(&stacked));
    let edges = |g: &NetworkGraph| g.edges().iter().map(|e| (e.from, e.to, e.tag, e.channels)).collect::<Vec<_>>();
    assert_eq!(edges(&coupled), edges(&stacked));
    assert_eq!(coupled.param_count(), stacked.param_count());

    let mut c = cfg(1, 8, 4, 2);
    c.input_res = 32;
    c.keypoints = 4;
    c.in_channels = 1;
    let a = build_cu_net(&c).unwrap();
    c.coupling = false;
    let b = build_cu_net(&c).unwrap();
    let store = ParamStore::<f64>::init(&a, 3);
    let shared = ParamStore::transfer(&b, &a, &store).unwrap();
    let x = random_input(4, 2, 1, 32);
    let ya = predict(&a, &store, &x).unwrap();
    let yb = predict(&b, &shared, &x).unwrap();
    assert_eq!(ya.data(), yb.data());
}

#[test]
fn head_shapes() {
    let mut c = CUNetConfig::desk(2);
    c.supervisions = 2;
    let g = build_cu_net(&c).unwrap();
    let store = ParamStore::<f32>::init(&g, 0);
    let mut tape = Tape::new();
    let x = random_input(5, 2, 1, 64).cast::<f32>();
    let pass = forward(&g, &store, &mut tape, &x, BatchNormMode::Train, false).unwrap();
    assert_eq!(pass.heads.len(), 2);
    for h in pass.heads {
        assert_eq!(tape.value(h).shape(), &[2, 16, 16, 16]);
    }
}

#[test]
fn supervision_heads_leave_the_trunk_alone() {
    let mut c = CUNetConfig::tiny();
    let with = build_cu_net(&c).unwrap();
    c.supervisions = 1;
    let without = build_cu_net(&c).unwrap();
    assert_eq!(with.param_count() - without.param_count(), 2 * 8 + 8 * 4 + 4);
    let store = ParamStore::<f64>::init(&with, 6);
    let shared = ParamStore::transfer(&without, &with, &store).unwrap();
    let x = random_input(7, 2, 1, 32);
    assert_eq!(predict(&with, &store, &x).unwrap(), predict(&without, &shared, &x).unwrap());

    // a loss on the first head alone reaches nothing in U-Net 2 or head 2
    let mut tape = Tape::new();
    let pass = forward(&with, &store, &mut tape, &x, BatchNormMode::Train, true).unwrap();
    let target = tape.constant(Tensor::zeros([2, 4, 8, 8]));
    let loss = total_loss(&mut tape, &pass.heads[..1], target).unwrap();
    let grads = tape.backward(loss).unwrap();
    for (spec, &v) in with.params().iter().zip(&pass.params) {
        let touched = grads.get(v).is_some_and(|g| g.data().iter().any(|&x| x != 0.0));
        if spec.name.starts_with("u1.") || spec.name.starts_with("head2.") {
            assert!(!touched, "{} received gradient", spec.name);
        }
    }
}

#[test]
fn forward_is_pure() {
    let g = build_cu_net(&CUNetConfig::tiny()).unwrap();
    let store = ParamStore::<f64>::init(&g, 1);
    let x = random_input(8, 2, 1, 32);
    let run = || {
        let mut tape = Tape::new();
        let p = forward(&g, &store, &mut tape, &x, BatchNormMode::Train, false).unwrap();
        (tape.value(*p.heads.last().unwrap()).clone(), p.running)
    };
    assert_eq!(run(), run());
    assert_eq!(ParamStore::<f64>::init(&g, 1), store);
}

#[test]
fn every_block_sits_at_its_level_resolution() {
    let g = build_cu_net(&CUNetConfig::desk(2)).unwrap();
    assert_eq!(g.blocks().len(), 2 * 7);
    for b in g.blocks() {
        let res = g.node(b.compress).resolution;
        let level = match b.id.path {
            BlockPath::Bottom => 3,
            _ => b.id.level,
        };
        assert_eq!(res, 16 >> level, "{}", b.id);
    }
    assert!(g
        .nodes()
        .iter()
        .filter(|n| matches!(n.kind, LayerKind::Add))
        .all(|n| n.out_channels == 32));
}

#[test]
fn calibration_pairs_counts() {
    let cu = CUNetConfig {
        depth: 2,
        ..CUNetConfig::desk(2)
    };
    let template = DenseUNetConfig::new(2, 1, &cu);
    let cal = calibrate_dense(&cu, &template, 2).unwrap();
    let target = build_cu_net(&cu).unwrap().param_count();
    assert_eq!(cal.target_params, target);
    assert_eq!(build_dense_unet(&cal.config).unwrap().param_count(), cal.dense_params);
    assert!(cal.rel_diff <= CALIBRATION_TOLERANCE);
    let rel = (cal.dense_params as f64 - target as f64).abs() / target as f64;
    assert!(rel <= 0.02, "{rel}");

    let four = CUNetConfig {
        depth: 2,
        ..CUNetConfig::desk(4)
    };
    assert_eq!(calibrate_dense(&four, &template, 2).unwrap().config.layers, 4);
}

#[test]
fn calibration_reproduces_an_achievable_target() {
    let d = DenseUNetConfig::new(3, 10, &CUNetConfig::desk(2));
    let target = build_dense_unet(&d).unwrap().param_count();
    let cal = calibrate_to_target(target, &d).unwrap();
    assert_eq!(cal.dense_params, target);
    assert_eq!(cal.rel_diff, 0.0);
}

#[test]
fn invalid_configs_name_the_constraint() {
    let bad = CUNetConfig {
        m: 4,
        n: 8,
        ..CUNetConfig::tiny()
    };
    let msg = build_cu_net(&bad).unwrap_err().to_string();
    assert!(msg.contains("m >= n"), "{msg}");
    let bad = CUNetConfig {
        supervisions: 3,
        ..CUNetConfig::tiny()
    };
    assert!(build_cu_net(&bad).unwrap_err().to_string().contains("supervisions"));
    let bad = CUNetConfig {
        input_res: 36,
        ..CUNetConfig::tiny()
    };
    assert!(build_cu_net(&bad).unwrap_err().to_string().contains("input_res"));
}
