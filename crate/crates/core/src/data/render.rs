use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::pose::Pose;
use super::skeleton::{BONES, NUM_JOINTS};
use crate::tensor::Tensor;

/// Distance from `p` to the segment `a`–`b`.
fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a[0] + t * dx, a[1] + t * dy);
    ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt()
}

/// Draws the figure's bones as anti-aliased strokes.
///
/// Thickness (1–3 px) and intensity (0.5–1.0) are drawn once per image, then
/// uniform noise in `[0, 0.1]` is added and the result clamped to `[0, 1]`.
/// Every channel carries the same grey image.
pub fn render_image(pose: &Pose, seed: u64, in_channels: usize, res: usize) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let thickness: f64 = rng.random_range(1.0..=3.0);
    let intensity: f64 = rng.random_range(0.5..=1.0);
    let mut canvas = vec![0.0f64; res * res];
    for b in BONES {
        let (a, c) = (pose.joints[b.parent], pose.joints[b.child]);
        let half = 0.5 * thickness * b.width;
        // coverage falls linearly from 1 to 0 over the pixel straddling the edge
        let reach = half + 0.5;
        let x0 = (a[0].min(c[0]) - reach).floor().max(0.0) as usize;
        let y0 = (a[1].min(c[1]) - reach).floor().max(0.0) as usize;
        let x1 = ((a[0].max(c[0]) + reach).ceil() as usize).min(res - 1);
        let y1 = ((a[1].max(c[1]) + reach).ceil() as usize).min(res - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = segment_distance([x as f64, y as f64], a, c);
                let cover = (reach - d).clamp(0.0, 1.0) * intensity;
                let px = &mut canvas[y * res + x];
                *px = px.max(cover);
            }
        }
    }
    let mut data = Vec::with_capacity(in_channels * res * res);
    let grey: Vec<f32> = canvas
        .iter()
        .map(|&v| (v + rng.random_range(0.0..=0.1)).clamp(0.0, 1.0) as f32)
        .collect();
    for _ in 0..in_channels {
        data.extend_from_slice(&grey);
    }
    Tensor::from_vec([in_channels, res, res], data).expect("sized above")
}

/// Continuous heatmap coordinate of an image position, aligning pixel centres
/// of the `stride`-times smaller heatmap with the image pixels they cover.
pub fn to_heatmap_coords(p: [f64; 2], stride: f64) -> [f64; 2] {
    [(p[0] + 0.5) / stride - 0.5, (p[1] + 0.5) / stride - 0.5]
}

/// Nearest heatmap pixel to a continuous coordinate, ties going to the lower
/// index so the choice agrees with a row-major-first argmax.
pub fn quantize(q: [f64; 2], r: usize) -> [usize; 2] {
    let snap = |v: f64| ((v - 0.5).ceil().max(0.0) as usize).min(r - 1);
    [snap(q[0]), snap(q[1])]
}

/// Unnormalised Gaussian targets `exp(-‖p − q_k‖² / 2σ²)` on an `r × r` grid
/// for a pose drawn at `input_res`. Invisible joints get all-zero maps.
pub fn render_heatmaps(pose: &Pose, input_res: usize, r: usize, sigma: f64) -> Tensor<f32> {
    assert!(sigma > 0.0, "sigma must be positive");
    let stride = input_res as f64 / r as f64;
    let mut data = vec![0.0f32; NUM_JOINTS * r * r];
    let denom = 2.0 * sigma * sigma;
    for (k, map) in data.chunks_exact_mut(r * r).enumerate() {
        if !pose.visible[k] {
            continue;
        }
        let [qx, qy] = to_heatmap_coords(pose.joints[k], stride);
        for y in 0..r {
            let dy2 = (y as f64 - qy).powi(2);
            for x in 0..r {
                let d2 = (x as f64 - qx).powi(2) + dy2;
                map[y * r + x] = (-d2 / denom).exp() as f32;
            }
        }
    }
    Tensor::from_vec([NUM_JOINTS, r, r], data).expect("sized above")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point_pose(at: [f64; 2]) -> Pose {
        Pose {
            joints: [at; NUM_JOINTS],
            visible: [true; NUM_JOINTS],
        }
    }

    #[test]
    fn segment_distance_cases() {
        assert_eq!(segment_distance([0.0, 1.0], [-1.0, 0.0], [1.0, 0.0]), 1.0);
        assert_eq!(segment_distance([3.0, 0.0], [-1.0, 0.0], [1.0, 0.0]), 2.0);
        assert_eq!(segment_distance([3.0, 4.0], [0.0, 0.0], [0.0, 0.0]), 5.0);
    }

    #[test]
    fn degenerate_pose_energy_stays_near_the_point() {
        let img = render_image(&point_pose([30.0, 20.0]), 3, 1, 64);
        for y in 0..64 {
            for x in 0..64 {
                let d = ((x as f64 - 30.0).powi(2) + (y as f64 - 20.0).powi(2)).sqrt();
                // head bone is twice as wide: radius 3 + 0.5 anti-alias margin
                if d > 3.5 {
                    assert!(img.data()[y * 64 + x] <= 0.1 + 1e-6);
                }
            }
        }
        assert!(img.data()[20 * 64 + 30] >= 0.5);
    }

    #[test]
    fn channels_replicate() {
        let img = render_image(&point_pose([10.0, 10.0]), 1, 3, 16);
        let d = img.data();
        assert_eq!(&d[..256], &d[256..512]);
        assert_eq!(&d[..256], &d[512..]);
    }

    #[test]
    fn heatmap_closed_forms() {
        // (9.5, 13.5) in the image is heatmap pixel centre (2, 3) at stride 4
        let mut pose = point_pose([9.5, 13.5]);
        pose.visible[1] = false;
        let hm = render_heatmaps(&pose, 64, 16, 1.0);
        let map = &hm.data()[..256];
        assert_eq!(map[3 * 16 + 2], 1.0);
        assert!((map[3 * 16 + 3] as f64 - (-0.5f64).exp()).abs() < 1e-7);
        assert!(hm.data()[256..512].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quantize_ties_go_down() {
        assert_eq!(quantize([2.5, 3.49], 16), [2, 3]);
        assert_eq!(quantize([2.51, -0.4], 16), [3, 0]);
        assert_eq!(quantize([15.4, 15.6], 16), [15, 15]);
    }
}
