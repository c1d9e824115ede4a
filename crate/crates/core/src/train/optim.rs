use crate::tensor::{Gradients, Scalar, Tensor, Var};

pub const RMS_ALPHA: f64 = 0.99;
pub const RMS_EPS: f64 = 1e-8;

/// One RMSProp update in place:
/// `s ← α·s + (1−α)·g²`, `θ ← θ − lr·g / (√s + eps)`.
///
/// Returns `false` and leaves both `param` and `s` untouched when any
/// gradient entry is non-finite.
pub fn rmsprop_step<T: Scalar>(param: &mut [T], grad: &[T], s: &mut [T], alpha: T, eps: T, lr: T) -> bool {
    assert_eq!(param.len(), grad.len(), "gradient length differs from parameter");
    assert_eq!(param.len(), s.len(), "accumulator length differs from parameter");
    if !grad.iter().all(|g| g.is_finite()) {
        return false;
    }
    let keep = T::one() - alpha;
    for ((p, &g), acc) in param.iter_mut().zip(grad).zip(s.iter_mut()) {
        *acc = alpha * *acc + keep * g * g;
        *p = *p - lr * g / (acc.sqrt() + eps);
    }
    true
}

/// Mean-square accumulators for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp<T> {
    pub alpha: T,
    pub eps: T,
    pub accum: Vec<Tensor<T>>,
}

/// What a full optimizer step did.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StepReport {
    pub updated: usize,
    /// Parameters without a gradient in this step.
    pub untouched: usize,
    /// Indices of parameters whose gradient contained NaN or infinity.
    pub non_finite: Vec<usize>,
}

impl<T: Scalar> RmsProp<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        RmsProp {
            alpha: T::from_f64(RMS_ALPHA),
            eps: T::from_f64(RMS_EPS),
            accum: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
        }
    }

    /// Updates every parameter that received a gradient. If any gradient is
    /// non-finite, no parameter is touched.
    pub fn step(&mut self, params: &mut [Tensor<T>], vars: &[Var], grads: &Gradients<T>, lr: T) -> StepReport {
        let mut report = StepReport::default();
        for (i, &v) in vars.iter().enumerate() {
            if let Some(g) = grads.get(v) {
                if !g.all_finite() {
                    report.non_finite.push(i);
                }
            }
        }
        if !report.non_finite.is_empty() {
            return report;
        }
        for (i, &v) in vars.iter().enumerate() {
            match grads.get(v) {
                Some(g) => {
                    let applied = rmsprop_step(
                        params[i].data_mut(),
                        g.data(),
                        self.accum[i].data_mut(),
                        self.alpha,
                        self.eps,
                        lr,
                    );
                    debug_assert!(applied);
                    report.updated += 1;
                }
                None => report.untouched += 1,
            }
        }
        report
    }
}
