use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::skeleton::{BONES, HEAD, NUM_JOINTS, PELVIS, ROOT};

const MAX_ATTEMPTS: usize = 100;
/// Whole-body tilt applied on top of the per-bone angles, in degrees.
const TILT: f64 = 15.0;

/// Joint positions in image pixels; pixel `(x, y)` has its centre at
/// integer coordinates, so the frame spans `[0, res-1]` on each axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub joints: [[f64; 2]; NUM_JOINTS],
    pub visible: [bool; NUM_JOINTS],
}

impl Pose {
    pub fn in_frame(p: [f64; 2], res: usize) -> bool {
        let hi = (res - 1) as f64;
        (0.0..=hi).contains(&p[0]) && (0.0..=hi).contains(&p[1])
    }

    /// All coordinates finite and the head and pelvis inside the frame.
    pub fn is_valid(&self, res: usize) -> bool {
        self.joints.iter().flatten().all(|v| v.is_finite())
            && Self::in_frame(self.joints[HEAD], res)
            && Self::in_frame(self.joints[PELVIS], res)
    }

    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|&&v| v).count()
    }
}

fn place(rng: &mut ChaCha8Rng, res: usize) -> [[f64; 2]; NUM_JOINTS] {
    let side = res as f64;
    let mut joints = [[0.0; 2]; NUM_JOINTS];
    let lo = 0.25 * (side - 1.0);
    let hi = 0.75 * (side - 1.0);
    joints[ROOT] = [rng.random_range(lo..=hi), rng.random_range(lo..=hi)];
    let tilt = rng.random_range(-TILT..=TILT);
    for b in BONES {
        let len = rng.random_range(b.length.0..=b.length.1) * side;
        let angle = (rng.random_range(b.angle.0..=b.angle.1) + tilt).to_radians();
        let [px, py] = joints[b.parent];
        joints[b.child] = [px + len * angle.sin(), py - len * angle.cos()];
    }
    joints
}

/// Draws a random front-facing pose for a `res × res` image.
///
/// Up to 100 draws are made until every joint lies inside the frame; if none
/// succeeds the last draw is clamped into it. All joints are visible.
pub fn sample_pose(seed: u64, res: usize) -> Pose {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hi = (res - 1) as f64;
    let mut joints = place(&mut rng, res);
    for _ in 1..MAX_ATTEMPTS {
        if joints.iter().all(|&p| Pose::in_frame(p, res)) {
            break;
        }
        joints = place(&mut rng, res);
    }
    for p in &mut joints {
        p[0] = p[0].clamp(0.0, hi);
        p[1] = p[1].clamp(0.0, hi);
    }
    Pose {
        joints,
        visible: [true; NUM_JOINTS],
    }
}
