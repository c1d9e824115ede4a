//! Parameter-matched dense U-Net for comparisons against a CU-Net.

use super::config::{CUNetConfig, DenseUNetConfig};
use super::network::{build_cu_net, build_dense_unet};
use crate::error::{Error, Result};

/// Largest accepted `|dense − target| / target`.
pub const CALIBRATION_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct Calibration {
    pub config: DenseUNetConfig,
    pub dense_params: usize,
    pub target_params: usize,
    pub rel_diff: f64,
}

fn dense_count(cfg: &DenseUNetConfig) -> Result<usize> {
    Ok(build_dense_unet(cfg)?.param_count())
}

fn rel(count: usize, target: usize) -> f64 {
    (count as f64 - target as f64).abs() / target as f64
}

/// Dense U-Net matching the parameter count of `cu`.
///
/// The layer count follows the one-layer-per-extra-U-Net rule,
/// `L = template.layers + (U − base_unets)`. The growth rate `k` is then
/// searched over `[1, 4m]` with the usual `4k` bottleneck; when no `k`
/// lands within [`CALIBRATION_TOLERANCE`], the bottleneck width of the best
/// candidates is searched as well, since one step of `k` moves the count by
/// several percent at desk scale.
pub fn calibrate_dense(cu: &CUNetConfig, template: &DenseUNetConfig, base_unets: usize) -> Result<Calibration> {
    let layers = template.layers as isize + cu.unets as isize - base_unets as isize;
    if layers < 1 {
        return Err(Error::Config(format!(
            "calibrated layer count {layers} < 1 (template L={}, U={}, base U={base_unets})",
            template.layers, cu.unets
        )));
    }
    let target = build_cu_net(cu)?.param_count();
    let mut base = template.clone();
    base.layers = layers as usize;
    calibrate_to_target(target, &base)
}

/// Searches `growth` (and, if needed, `bottleneck`) of `template` with its
/// layer count fixed so the dense parameter count approaches `target`.
pub fn calibrate_to_target(target: usize, template: &DenseUNetConfig) -> Result<Calibration> {
    let mut scored = Vec::with_capacity(4 * template.m);
    for k in 1..=4 * template.m {
        let mut cfg = template.clone();
        cfg.growth = k;
        cfg.bottleneck = 4 * k;
        let count = dense_count(&cfg)?;
        scored.push((rel(count, target), cfg, count));
        if count > target {
            // counts grow with k; one candidate past the target is enough
            break;
        }
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (best_rel, best_cfg, best_count) = scored[0].clone();
    if best_rel <= CALIBRATION_TOLERANCE {
        return Ok(Calibration {
            config: best_cfg,
            dense_params: best_count,
            target_params: target,
            rel_diff: best_rel,
        });
    }
    let mut best = (best_rel, best_cfg, best_count);
    for (_, cfg, _) in scored.iter().take(2) {
        for width in 1..=8 * cfg.growth {
            let mut c = cfg.clone();
            c.bottleneck = width;
            let count = dense_count(&c)?;
            let r = rel(count, target);
            if r < best.0 {
                best = (r, c, count);
            }
            if count > target {
                break;
            }
        }
    }
    if best.0 <= CALIBRATION_TOLERANCE {
        Ok(Calibration {
            config: best.1,
            dense_params: best.2,
            target_params: target,
            rel_diff: best.0,
        })
    } else {
        Err(Error::Calibration {
            ratio: best.0,
            layers: best.1.layers,
            growth: best.1.growth,
        })
    }
}
