//! The 16-joint articulated figure used by the synthetic dataset.
//!
//! Joint order and naming follow the MPII convention. The figure always
//! faces the camera, so the person's left side is on the image's right.

pub const NUM_JOINTS: usize = 16;

pub const R_ANKLE: usize = 0;
pub const R_KNEE: usize = 1;
pub const R_HIP: usize = 2;
pub const L_HIP: usize = 3;
pub const L_KNEE: usize = 4;
pub const L_ANKLE: usize = 5;
pub const PELVIS: usize = 6;
pub const THORAX: usize = 7;
pub const NECK: usize = 8;
pub const HEAD: usize = 9;
pub const R_WRIST: usize = 10;
pub const R_ELBOW: usize = 11;
pub const R_SHOULDER: usize = 12;
pub const L_SHOULDER: usize = 13;
pub const L_ELBOW: usize = 14;
pub const L_WRIST: usize = 15;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "r_ankle",
    "r_knee",
    "r_hip",
    "l_hip",
    "l_knee",
    "l_ankle",
    "pelvis",
    "thorax",
    "neck",
    "head",
    "r_wrist",
    "r_elbow",
    "r_shoulder",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
];

/// Label of each joint after a left-right flip.
pub const MIRROR: [usize; NUM_JOINTS] = [
    L_ANKLE, L_KNEE, L_HIP, R_HIP, R_KNEE, R_ANKLE, PELVIS, THORAX, NECK, HEAD, L_WRIST, L_ELBOW, L_SHOULDER,
    R_SHOULDER, R_ELBOW, R_WRIST,
];

/// A parent→child segment. Angles are degrees clockwise from image-up
/// (0 = up, 90 = image right), measured before the global body tilt.
#[derive(Debug, Clone, Copy)]
pub struct Bone {
    pub parent: usize,
    pub child: usize,
    /// Length range as a fraction of the image side.
    pub length: (f64, f64),
    pub angle: (f64, f64),
    /// Stroke width multiplier when rendering.
    pub width: f64,
}

const fn bone(parent: usize, child: usize, length: (f64, f64), angle: (f64, f64), width: f64) -> Bone {
    Bone {
        parent,
        child,
        length,
        angle,
        width,
    }
}

/// Bones in an order where every parent is placed before its children.
/// Right-side bones mirror the left-side angle ranges.
pub const BONES: [Bone; 15] = [
    bone(PELVIS, THORAX, (0.20, 0.23), (-8.0, 8.0), 1.0),
    bone(THORAX, NECK, (0.05, 0.07), (-10.0, 10.0), 1.0),
    bone(NECK, HEAD, (0.16, 0.19), (-12.0, 12.0), 2.0),
    bone(THORAX, L_SHOULDER, (0.09, 0.11), (80.0, 100.0), 1.0),
    bone(L_SHOULDER, L_ELBOW, (0.12, 0.15), (30.0, 170.0), 1.0),
    bone(L_ELBOW, L_WRIST, (0.11, 0.14), (0.0, 180.0), 1.0),
    bone(THORAX, R_SHOULDER, (0.09, 0.11), (-100.0, -80.0), 1.0),
    bone(R_SHOULDER, R_ELBOW, (0.12, 0.15), (-170.0, -30.0), 1.0),
    bone(R_ELBOW, R_WRIST, (0.11, 0.14), (-180.0, 0.0), 1.0),
    bone(PELVIS, L_HIP, (0.06, 0.08), (80.0, 100.0), 1.0),
    bone(L_HIP, L_KNEE, (0.15, 0.18), (145.0, 185.0), 1.0),
    bone(L_KNEE, L_ANKLE, (0.14, 0.17), (150.0, 195.0), 1.0),
    bone(PELVIS, R_HIP, (0.06, 0.08), (-100.0, -80.0), 1.0),
    bone(R_HIP, R_KNEE, (0.15, 0.18), (-185.0, -145.0), 1.0),
    bone(R_KNEE, R_ANKLE, (0.14, 0.17), (-195.0, -150.0), 1.0),
];

pub const ROOT: usize = PELVIS;
