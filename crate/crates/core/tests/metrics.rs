use cunet::data::skeleton::{HEAD, NECK, PELVIS, THORAX};
use cunet::data::{quantize, render_heatmaps, sample_pose, to_heatmap_coords, NUM_JOINTS};
use cunet::metrics::{decode_keypoints, pck, GroundTruth, RefLength};
use cunet::tensor::Tensor;
use proptest::prelude::*;

fn gt_from_seed(seed: u64) -> GroundTruth {
    GroundTruth::from_pose(&sample_pose(seed, 64), 4.0)
}

fn displaced(gt: &GroundTruth, by: f64) -> Vec<[f64; 2]> {
    gt.joints.iter().map(|p| [p[0] + by, p[1]]).collect()
}

#[test]
fn decode_examples() {
    let mut hm = Tensor::<f64>::zeros([1, 1, 8, 8]);
    hm.data_mut()[5 * 8 + 3] = 1.0;
    assert_eq!(decode_keypoints(&hm).unwrap(), vec![vec![[3.0, 5.0]]]);
    let flat = Tensor::<f64>::full([2, 3, 4, 4], 0.7);
    for s in decode_keypoints(&flat).unwrap() {
        assert!(s.iter().all(|&p| p == [0.0, 0.0]));
    }
    assert!(decode_keypoints(&Tensor::<f64>::zeros([1, 1, 4])).is_err());
}

#[test]
fn decode_inverts_rendering() {
    for seed in 0..100 {
        let pose = sample_pose(seed, 64);
        let hm = render_heatmaps(&pose, 64, 16, 1.0).reshape([1, NUM_JOINTS, 16, 16]).unwrap();
        let dec = decode_keypoints(&hm).unwrap();
        for k in 0..NUM_JOINTS {
            let q = quantize(to_heatmap_coords(pose.joints[k], 4.0), 16);
            assert_eq!(dec[0][k], [q[0] as f64, q[1] as f64]);
        }
    }
}

#[test]
fn pck_examples() {
    let gts: Vec<GroundTruth> = (0..10).map(gt_from_seed).collect();
    let exact: Vec<_> = gts.iter().map(|g| g.joints.clone()).collect();
    for alpha in [1e-6, 0.2, 0.5, 3.0] {
        assert_eq!(pck(&exact, &gts, alpha, RefLength::Head).unwrap().aggregate(), 1.0);
    }
    let far: Vec<_> = gts
        .iter()
        .map(|g| displaced(g, 10.0 * RefLength::Head.length(&g.joints, &g.visible).unwrap()))
        .collect();
    assert_eq!(pck(&far, &gts, 0.5, RefLength::Head).unwrap().aggregate(), 0.0);

    let half: Vec<_> = gts
        .iter()
        .map(|g| {
            let d = 10.0 * RefLength::Torso.length(&g.joints, &g.visible).unwrap();
            g.joints
                .iter()
                .enumerate()
                .map(|(k, p)| if k % 2 == 0 { *p } else { [p[0], p[1] + d] })
                .collect()
        })
        .collect();
    let r = pck(&half, &gts, 0.2, RefLength::Torso).unwrap();
    assert_eq!(r.aggregate(), 0.5);
    assert_eq!(r.correct.iter().sum::<usize>(), 80);
}

#[test]
fn threshold_is_inclusive() {
    let g = GroundTruth {
        joints: {
            let mut j = vec![[0.0, 0.0]; NUM_JOINTS];
            j[HEAD] = [0.0, 0.0];
            j[NECK] = [0.0, 4.0];
            j
        },
        visible: vec![true; NUM_JOINTS],
    };
    // alpha·ref = 2 exactly
    let pred = displaced(&g, 2.0);
    assert_eq!(pck(&[pred], &[g.clone()], 0.5, RefLength::Head).unwrap().aggregate(), 1.0);
    let pred = displaced(&g, 2.0 + 1e-9);
    assert_eq!(pck(&[pred], &[g], 0.5, RefLength::Head).unwrap().aggregate(), 0.0);
}

#[test]
fn invisible_joints_and_degenerate_references() {
    let mut g = gt_from_seed(1);
    g.visible[0] = false;
    let mut pred = g.joints.clone();
    pred[0] = [1e6, 1e6];
    let r = pck(&[pred.clone()], &[g.clone()], 0.5, RefLength::Head).unwrap();
    assert_eq!(r.total[0], 0);
    assert_eq!(r.aggregate(), 1.0);

    let mut no_head = g.clone();
    no_head.visible[HEAD] = false;
    let mut zero_torso = g.clone();
    zero_torso.joints[THORAX] = zero_torso.joints[PELVIS];
    let gts = vec![g.clone(), no_head, zero_torso];
    let preds = vec![pred.clone(), pred.clone(), pred];
    assert_eq!(pck(&preds, &gts, 0.5, RefLength::Head).unwrap().excluded, vec![1]);
    assert_eq!(pck(&preds, &gts, 0.5, RefLength::Torso).unwrap().excluded, vec![2]);
    assert!(pck(&preds[..2], &gts, 0.5, RefLength::Head).is_err());
    assert!(pck(&preds, &gts, -1.0, RefLength::Head).is_err());
}

#[test]
fn csv_report() {
    let gts: Vec<GroundTruth> = (0..4).map(gt_from_seed).collect();
    let preds: Vec<_> = gts.iter().map(|g| g.joints.clone()).collect();
    let r = pck(&preds, &gts, 0.5, RefLength::Head).unwrap();
    let csv = r.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "joint,correct,total,pck");
    assert_eq!(lines.len(), NUM_JOINTS + 2);
    assert_eq!(*lines.last().unwrap(), "ALL,64,64,1.000000");
    assert!(lines[1..=NUM_JOINTS].iter().all(|l| l.ends_with(",4,4,1.000000")));
}

fn noisy_preds(gts: &[GroundTruth], offsets: &[f64]) -> Vec<Vec<[f64; 2]>> {
    gts.iter()
        .enumerate()
        .map(|(s, g)| {
            g.joints
                .iter()
                .enumerate()
                .map(|(k, p)| {
                    let o = offsets[(s * NUM_JOINTS + k) % offsets.len()];
                    [p[0] + o, p[1] - 0.5 * o]
                })
                .collect()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pck_is_monotone_in_alpha(
        seed in 0u64..1000,
        offsets in prop::collection::vec(-4.0f64..4.0, 1..40),
        a in 0.01f64..2.0,
        b in 0.01f64..2.0,
    ) {
        let gts: Vec<GroundTruth> = (seed..seed + 5).map(gt_from_seed).collect();
        let preds = noisy_preds(&gts, &offsets);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let p_lo = pck(&preds, &gts, lo, RefLength::Head).unwrap();
        let p_hi = pck(&preds, &gts, hi, RefLength::Head).unwrap();
        prop_assert!(p_lo.aggregate() <= p_hi.aggregate());
        for j in 0..NUM_JOINTS {
            prop_assert!(p_lo.correct[j] <= p_hi.correct[j]);
            prop_assert!(p_hi.joint_pck(j) <= 1.0);
        }
        let total: usize = p_hi.total.iter().sum();
        prop_assert_eq!(p_hi.aggregate(), p_hi.correct.iter().sum::<usize>() as f64 / total as f64);
    }

    #[test]
    fn pck_ignores_translation_and_uniform_scale(
        seed in 0u64..1000,
        // quarter-pixel shifts and power-of-two scales
        tx in -64i32..64,
        ty in -64i32..64,
        scale_exp in -3i32..4,
        offsets in prop::collection::vec(-4.0f64..4.0, 1..40),
    ) {
        let gts: Vec<GroundTruth> = (seed..seed + 5).map(gt_from_seed).collect();
        let preds = noisy_preds(&gts, &offsets);
        let base = pck(&preds, &gts, 0.5, RefLength::Head).unwrap();

        let (dx, dy) = (tx as f64 * 0.25, ty as f64 * 0.25);
        let shift = |p: &[f64; 2]| [p[0] + dx, p[1] + dy];
        let gts_t: Vec<GroundTruth> = gts
            .iter()
            .map(|g| GroundTruth { joints: g.joints.iter().map(shift).collect(), visible: g.visible.clone() })
            .collect();
        let preds_t: Vec<Vec<[f64; 2]>> = preds.iter().map(|p| p.iter().map(shift).collect()).collect();
        let moved = pck(&preds_t, &gts_t, 0.5, RefLength::Head).unwrap();

        let s = 2f64.powi(scale_exp);
        let scale = |p: &[f64; 2]| [p[0] * s, p[1] * s];
        let gts_s: Vec<GroundTruth> = gts
            .iter()
            .map(|g| GroundTruth { joints: g.joints.iter().map(scale).collect(), visible: g.visible.clone() })
            .collect();
        let preds_s: Vec<Vec<[f64; 2]>> = preds.iter().map(|p| p.iter().map(scale).collect()).collect();
        let scaled = pck(&preds_s, &gts_s, 0.5, RefLength::Head).unwrap();

        prop_assert_eq!(&base.correct, &scaled.correct);
        prop_assert_eq!(&base.correct, &moved.correct);
    }
}
