//! Central-difference gradient checking in binary64.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Tensor;

/// Step sizes tried per coordinate: `ε`, `ε/10`, `ε/100`.
const KINK_RETRIES: usize = 3;

/// One evaluation of the checked scalar function.
#[derive(Debug, Clone, Copy)]
pub struct Evaluation {
    pub value: f64,
    /// Piecewise-linear regime of the evaluation (see [`super::Tape::kink_signature`]).
    /// Smooth functions report a constant.
    pub signature: u64,
}

impl Evaluation {
    pub fn smooth(value: f64) -> Self {
        Evaluation { value, signature: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    pub tol: f64,
    /// Coordinates checked per parameter group (all of them for smaller groups).
    pub samples_per_group: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-5,
            tol: 1e-5,
            samples_per_group: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GroupReport {
    pub name: String,
    pub checked: usize,
    /// Coordinates whose probes crossed a ReLU/max-pool kink at every step size
    /// tried and were redrawn.
    pub kink_skips: usize,
    pub max_rel_err: f64,
    pub pass: bool,
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.groups.iter().all(|g| g.pass)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }

    pub fn min_checked(&self) -> usize {
        self.groups.iter().map(|g| g.checked).min().unwrap_or(0)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` gradients against central differences of `f`.
///
/// `params` is perturbed in place and restored. Coordinates whose probes
/// change the evaluation signature are skipped and replaced by fresh draws.
pub fn finite_diff_check<F>(
    names: &[String],
    params: &mut [Tensor<f64>],
    analytic: &[Tensor<f64>],
    mut f: F,
    cfg: &GradCheckConfig,
) -> GradCheckReport
where
    F: FnMut(&[Tensor<f64>]) -> Evaluation,
{
    assert_eq!(names.len(), params.len());
    assert_eq!(analytic.len(), params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base = f(params);
    let mut groups = Vec::with_capacity(params.len());
    for gi in 0..params.len() {
        let name = names[gi].clone();
        let numel = params[gi].numel();
        let mut report = GroupReport {
            name: name.clone(),
            checked: 0,
            kink_skips: 0,
            max_rel_err: 0.0,
            pass: true,
            failure: None,
        };
        if !base.value.is_finite() {
            report.pass = false;
            report.failure = Some(format!("{name}: non-finite objective {}", base.value));
            groups.push(report);
            continue;
        }
        // candidate order: a random permutation, so redraws stay distinct
        let order: Vec<usize> = sample(&mut rng, numel, numel).into_iter().collect();
        let want = cfg.samples_per_group.min(numel);
        for &idx in &order {
            if report.checked >= want {
                break;
            }
            let orig = params[gi].data()[idx];
            // a probe that crosses a kink is retried with smaller steps
            // before the coordinate is given up
            let mut probe = None;
            let mut eps = cfg.epsilon;
            for _ in 0..KINK_RETRIES {
                params[gi].data_mut()[idx] = orig + eps;
                let plus = f(params);
                params[gi].data_mut()[idx] = orig - eps;
                let minus = f(params);
                params[gi].data_mut()[idx] = orig;
                if !plus.value.is_finite() || !minus.value.is_finite() {
                    probe = Some(Err(()));
                    break;
                }
                if plus.signature == base.signature && minus.signature == base.signature {
                    probe = Some(Ok((plus.value - minus.value) / (2.0 * eps)));
                    break;
                }
                eps *= 0.1;
            }
            let numeric = match probe {
                None => {
                    report.kink_skips += 1;
                    continue;
                }
                Some(Err(())) => {
                    report.pass = false;
                    report.failure = Some(format!("{name}[{idx}]: non-finite objective under perturbation"));
                    break;
                }
                Some(Ok(v)) => v,
            };
            let a = analytic[gi].data()[idx];
            if !a.is_finite() {
                report.pass = false;
                report.failure = Some(format!("{name}[{idx}]: non-finite analytic gradient"));
                break;
            }
            let err = relative_error(a, numeric);
            report.max_rel_err = report.max_rel_err.max(err);
            report.checked += 1;
            if err >= cfg.tol && report.failure.is_none() {
                report.failure = Some(format!(
                    "{name}[{idx}]: analytic {a:.6e} vs numeric {numeric:.6e} (rel err {err:.3e})"
                ));
            }
        }
        report.pass = report.failure.is_none() && report.max_rel_err < cfg.tol;
        groups.push(report);
    }
    GradCheckReport { groups }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_at_three() {
        let mut params = vec![Tensor::from_vec([1], vec![3.0]).unwrap()];
        let analytic = vec![Tensor::from_vec([1], vec![6.0]).unwrap()];
        let names = vec!["theta".to_string()];
        let f = |p: &[Tensor<f64>]| Evaluation::smooth(p[0].data()[0].powi(2));
        let report = finite_diff_check(&names, &mut params, &analytic, f, &GradCheckConfig::default());
        assert!(report.pass());
        // numeric derivative of θ² is exact up to round-off
        assert!(report.max_rel_err() * 6.0 < 1e-9);
        assert_eq!(params[0].data()[0], 3.0);
    }

    #[test]
    fn wrong_gradient_is_reported_with_name() {
        let mut params = vec![Tensor::from_vec([2], vec![1.0, 2.0]).unwrap()];
        let analytic = vec![Tensor::from_vec([2], vec![2.0, 5.0]).unwrap()];
        let names = vec!["w".to_string()];
        let f = |p: &[Tensor<f64>]| Evaluation::smooth(p[0].data().iter().map(|v| v * v).sum());
        let report = finite_diff_check(&names, &mut params, &analytic, f, &GradCheckConfig::default());
        assert!(!report.pass());
        assert!(report.groups[0].failure.as_ref().unwrap().starts_with("w["));
    }

    #[test]
    fn non_finite_is_a_failure() {
        let mut params = vec![Tensor::from_vec([1], vec![0.0]).unwrap()];
        let analytic = vec![Tensor::from_vec([1], vec![0.0]).unwrap()];
        let names = vec!["bad".to_string()];
        let f = |_: &[Tensor<f64>]| Evaluation::smooth(f64::NAN);
        let report = finite_diff_check(&names, &mut params, &analytic, f, &GradCheckConfig::default());
        assert!(!report.pass());
        assert!(report.groups[0].failure.as_ref().unwrap().contains("bad"));
    }
}
