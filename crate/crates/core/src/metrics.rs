//! Argmax heatmap decoding and PCK / PCKh accuracy.

use std::fmt;

use crate::data::skeleton::{HEAD, NECK, PELVIS, THORAX};
use crate::data::{Pose, JOINT_NAMES, NUM_JOINTS};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Per-joint location `[x, y]` in heatmap pixels of the first (row-major)
/// maximum of each `N×K×R×R` map.
pub fn decode_keypoints<T: Scalar>(heatmaps: &Tensor<T>) -> Result<Vec<Vec<[f64; 2]>>> {
    let [n, k, h, w] = heatmaps.dims4("decode_keypoints")?;
    if h == 0 || w == 0 {
        return Err(Error::invalid("decode_keypoints", "empty heatmaps"));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n);
    for s in 0..n {
        let mut joints = Vec::with_capacity(k);
        for j in 0..k {
            let map = &heatmaps.data()[(s * k + j) * plane..][..plane];
            let mut best = 0;
            for (i, &v) in map.iter().enumerate() {
                if v > map[best] {
                    best = i;
                }
            }
            joints.push([(best % w) as f64, (best / w) as f64]);
        }
        out.push(joints);
    }
    Ok(out)
}

/// Which segment normalises the distance threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefLength {
    /// Head-to-neck segment (PCKh).
    Head,
    /// Pelvis-to-thorax segment (PCK).
    Torso,
}

impl RefLength {
    pub fn tag(self) -> &'static str {
        match self {
            RefLength::Head => "pckh",
            RefLength::Torso => "pck",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pckh" => Some(RefLength::Head),
            "pck" => Some(RefLength::Torso),
            _ => None,
        }
    }

    fn joints(self) -> (usize, usize) {
        match self {
            RefLength::Head => (HEAD, NECK),
            RefLength::Torso => (PELVIS, THORAX),
        }
    }

    /// Segment length, or `None` if either end is invisible.
    pub fn length(self, gt: &[[f64; 2]], visible: &[bool]) -> Option<f64> {
        let (a, b) = self.joints();
        if !(visible[a] && visible[b]) {
            return None;
        }
        Some(((gt[a][0] - gt[b][0]).powi(2) + (gt[a][1] - gt[b][1]).powi(2)).sqrt())
    }
}

/// Ground truth for one sample, in the same coordinates as the predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub joints: Vec<[f64; 2]>,
    pub visible: Vec<bool>,
}

impl GroundTruth {
    /// Continuous heatmap coordinates of an image-space pose.
    pub fn from_pose(pose: &Pose, stride: f64) -> Self {
        GroundTruth {
            joints: pose
                .joints
                .iter()
                .map(|&p| crate::data::to_heatmap_coords(p, stride))
                .collect(),
            visible: pose.visible.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub correct: Vec<usize>,
    pub total: Vec<usize>,
    pub alpha: f64,
    pub reference: RefLength,
    /// Indices of samples dropped because their reference length was zero
    /// or undefined.
    pub excluded: Vec<usize>,
}

impl EvalResult {
    /// `Σcorrect / Σtotal`, zero when nothing was evaluated.
    pub fn aggregate(&self) -> f64 {
        let total: usize = self.total.iter().sum();
        if total == 0 {
            return 0.0;
        }
        self.correct.iter().sum::<usize>() as f64 / total as f64
    }

    pub fn joint_pck(&self, j: usize) -> f64 {
        if self.total[j] == 0 {
            0.0
        } else {
            self.correct[j] as f64 / self.total[j] as f64
        }
    }

    /// `joint,correct,total,pck` rows plus an `ALL` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("joint,correct,total,pck\n");
        for j in 0..self.correct.len() {
            let name = JOINT_NAMES.get(j).map_or_else(|| format!("joint{j}"), |s| s.to_string());
            out.push_str(&format!(
                "{name},{},{},{:.6}\n",
                self.correct[j],
                self.total[j],
                self.joint_pck(j)
            ));
        }
        out.push_str(&format!(
            "ALL,{},{},{:.6}\n",
            self.correct.iter().sum::<usize>(),
            self.total.iter().sum::<usize>(),
            self.aggregate()
        ));
        out
    }
}

impl fmt::Display for EvalResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}@{}: {:.4} ({} samples excluded)",
            self.reference.tag(),
            self.alpha,
            self.aggregate(),
            self.excluded.len()
        )
    }
}

/// A visible joint is correct when it lies within `alpha · ref` of ground
/// truth. Invisible joints count in neither numerator nor denominator.
pub fn pck(pred: &[Vec<[f64; 2]>], gt: &[GroundTruth], alpha: f64, reference: RefLength) -> Result<EvalResult> {
    if !(alpha > 0.0) {
        return Err(Error::invalid("pck", format!("alpha must be positive, got {alpha}")));
    }
    if pred.len() != gt.len() {
        return Err(Error::invalid(
            "pck",
            format!("{} predictions for {} ground truths", pred.len(), gt.len()),
        ));
    }
    let k = gt.first().map_or(NUM_JOINTS, |g| g.joints.len());
    let mut res = EvalResult {
        correct: vec![0; k],
        total: vec![0; k],
        alpha,
        reference,
        excluded: Vec::new(),
    };
    for (s, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.len() != k || g.joints.len() != k || g.visible.len() != k {
            return Err(Error::invalid("pck", format!("sample {s} does not have {k} joints")));
        }
        let threshold = match reference.length(&g.joints, &g.visible) {
            Some(len) if len > 0.0 => alpha * len,
            _ => {
                res.excluded.push(s);
                continue;
            }
        };
        for j in 0..k {
            if !g.visible[j] {
                continue;
            }
            res.total[j] += 1;
            let d = ((p[j][0] - g.joints[j][0]).powi(2) + (p[j][1] - g.joints[j][1]).powi(2)).sqrt();
            if d <= threshold {
                res.correct[j] += 1;
            }
        }
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt_line() -> GroundTruth {
        GroundTruth {
            joints: (0..NUM_JOINTS).map(|j| [j as f64, 0.0]).collect(),
            visible: vec![true; NUM_JOINTS],
        }
    }

    #[test]
    fn decode_single_peak_and_ties() {
        let mut hm = Tensor::<f32>::zeros([1, 2, 8, 8]);
        hm.data_mut()[5 * 8 + 3] = 1.0;
        let d = decode_keypoints(&hm).unwrap();
        assert_eq!(d[0][0], [3.0, 5.0]);
        assert_eq!(d[0][1], [0.0, 0.0]);
    }

    #[test]
    fn exact_predictions_score_one() {
        let g = gt_line();
        let r = pck(&[g.joints.clone()], &[g], 0.01, RefLength::Head).unwrap();
        assert_eq!(r.aggregate(), 1.0);
    }

    #[test]
    fn zero_reference_samples_are_excluded() {
        let mut g = gt_line();
        g.joints[NECK] = g.joints[HEAD];
        let r = pck(&[g.joints.clone()], &[g], 0.5, RefLength::Head).unwrap();
        assert_eq!(r.excluded, vec![0]);
        assert_eq!(r.total.iter().sum::<usize>(), 0);
    }

    #[test]
    fn csv_has_all_row() {
        let g = gt_line();
        let csv = pck(&[g.joints.clone()], &[g], 0.5, RefLength::Torso).unwrap().to_csv();
        assert!(csv.starts_with("joint,correct,total,pck\nr_ankle,1,1,1.000000\n"));
        assert!(csv.ends_with("ALL,16,16,1.000000\n"));
    }

    #[test]
    fn rejects_bad_alpha() {
        assert!(pck(&[], &[], 0.0, RefLength::Head).is_err());
    }
}
