use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::pose::Pose;
use super::render::render_heatmaps;
use super::skeleton::{MIRROR, NUM_JOINTS};
use super::Sample;
use crate::tensor::Tensor;

pub const SCALE_RANGE: (f64, f64) = (0.75, 1.25);
pub const ROTATION_RANGE: (f64, f64) = (-30.0, 30.0);
pub const FLIP_PROBABILITY: f64 = 0.5;

/// One similarity transform about the image centre, optionally followed by
/// a horizontal flip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub scale: f64,
    /// Degrees, positive turning the image counter-clockwise on screen.
    pub rotation: f64,
    pub flip: bool,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        scale: 1.0,
        rotation: 0.0,
        flip: false,
    };

    pub fn draw<R: Rng>(rng: &mut R) -> Self {
        AugmentParams {
            scale: rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1),
            rotation: rng.random_range(ROTATION_RANGE.0..=ROTATION_RANGE.1),
            flip: rng.random_bool(FLIP_PROBABILITY),
        }
    }

    /// Image position of source point `p` after the transform.
    pub fn apply(&self, p: [f64; 2], res: usize) -> [f64; 2] {
        let c = 0.5 * (res - 1) as f64;
        // skipping the identity similarity keeps untouched coordinates bit-exact
        let [x, y] = if self.scale == 1.0 && self.rotation == 0.0 {
            p
        } else {
            let (sin, cos) = self.rotation.to_radians().sin_cos();
            let (dx, dy) = (p[0] - c, p[1] - c);
            [c + self.scale * (cos * dx + sin * dy), c + self.scale * (-sin * dx + cos * dy)]
        };
        if self.flip {
            [2.0 * c - x, y]
        } else {
            [x, y]
        }
    }

    /// Source position that lands on output position `q`.
    fn invert(&self, q: [f64; 2], res: usize) -> [f64; 2] {
        let c = 0.5 * (res - 1) as f64;
        let x = if self.flip { 2.0 * c - q[0] } else { q[0] };
        let (sin, cos) = self.rotation.to_radians().sin_cos();
        let (dx, dy) = ((x - c) / self.scale, (q[1] - c) / self.scale);
        [c + cos * dx - sin * dy, c + sin * dx + cos * dy]
    }
}

/// Transforms keypoints exactly. A flip also swaps mirror-paired labels;
/// joints that leave the frame become invisible.
pub fn transform_pose(pose: &Pose, params: &AugmentParams, res: usize) -> Pose {
    let mut out = Pose {
        joints: [[0.0; 2]; NUM_JOINTS],
        visible: [false; NUM_JOINTS],
    };
    for k in 0..NUM_JOINTS {
        let dst = if params.flip { MIRROR[k] } else { k };
        let p = params.apply(pose.joints[k], res);
        out.joints[dst] = p;
        out.visible[dst] = pose.visible[k] && Pose::in_frame(p, res);
    }
    out
}

fn bilinear(plane: &[f32], res: usize, p: [f64; 2]) -> f32 {
    let (x0, y0) = (p[0].floor(), p[1].floor());
    let (fx, fy) = (p[0] - x0, p[1] - y0);
    let at = |x: f64, y: f64| -> f64 {
        if x < 0.0 || y < 0.0 || x >= res as f64 || y >= res as f64 {
            0.0
        } else {
            plane[y as usize * res + x as usize] as f64
        }
    };
    let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1.0, y0) * fx;
    let bottom = at(x0, y0 + 1.0) * (1.0 - fx) + at(x0 + 1.0, y0 + 1.0) * fx;
    (top * (1.0 - fy) + bottom * fy) as f32
}

/// Resamples every channel of a `C×res×res` image bilinearly, zero outside.
pub fn transform_image(image: &Tensor<f32>, params: &AugmentParams) -> Tensor<f32> {
    let (c, res) = (image.shape()[0], image.shape()[1]);
    let mut out = Vec::with_capacity(image.numel());
    for plane in image.data().chunks_exact(res * res) {
        for y in 0..res {
            for x in 0..res {
                out.push(bilinear(plane, res, params.invert([x as f64, y as f64], res)));
            }
        }
    }
    Tensor::from_vec([c, res, res], out).expect("same size")
}

/// Applies `params` to image and keypoints and re-renders the heatmaps.
pub fn augment_with(sample: &Sample, params: &AugmentParams, sigma: f64) -> Sample {
    let res = sample.image.shape()[1];
    let r = sample.heatmaps.shape()[1];
    let pose = transform_pose(&sample.pose, params, res);
    Sample {
        image: transform_image(&sample.image, params),
        heatmaps: render_heatmaps(&pose, res, r, sigma),
        pose,
    }
}

/// Random scale, rotation and flip drawn from `seed`.
pub fn augment(sample: &Sample, seed: u64, sigma: f64) -> Sample {
    let params = AugmentParams::draw(&mut ChaCha8Rng::seed_from_u64(seed));
    augment_with(sample, &params, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_maps_points_to_themselves() {
        for p in [[0.0, 0.0], [12.25, 40.5], [63.0, 63.0]] {
            assert_eq!(AugmentParams::IDENTITY.apply(p, 64), p);
        }
    }

    #[test]
    fn invert_undoes_apply() {
        let params = AugmentParams {
            scale: 1.2,
            rotation: 17.0,
            flip: true,
        };
        let p = [10.0, 50.0];
        let q = params.invert(params.apply(p, 64), 64);
        assert!((q[0] - p[0]).abs() < 1e-9 && (q[1] - p[1]).abs() < 1e-9);
    }

    #[test]
    fn bilinear_zero_fills_outside() {
        let plane = vec![1.0f32; 4];
        assert_eq!(bilinear(&plane, 2, [0.0, 0.0]), 1.0);
        assert_eq!(bilinear(&plane, 2, [1.5, 0.0]), 0.5);
        assert_eq!(bilinear(&plane, 2, [-1.0, 0.0]), 0.0);
    }
}
