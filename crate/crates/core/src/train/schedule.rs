pub const LR_INITIAL: f64 = 2.5e-4;
pub const LR_DECAYED: f64 = 5e-5;
/// Epochs without improvement before the single decay.
pub const PATIENCE: usize = 5;
/// Smallest absolute gain that counts as an improvement.
pub const MIN_IMPROVEMENT: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub lr: f64,
    pub epochs_since_best: usize,
    /// Best validation metric so far, `-inf` before the first evaluation.
    pub best_metric: f64,
    pub seed: u64,
}

impl TrainState {
    pub fn new(seed: u64) -> Self {
        TrainState {
            epoch: 0,
            lr: LR_INITIAL,
            epochs_since_best: 0,
            best_metric: f64::NEG_INFINITY,
            seed,
        }
    }

    pub fn improves(&self, metric: f64) -> bool {
        metric > self.best_metric + MIN_IMPROVEMENT
    }
}

/// Records `val_metric`; after `PATIENCE` consecutive epochs without an
/// improvement the learning rate drops to `LR_DECAYED`, once.
pub fn lr_schedule(state: &TrainState, val_metric: f64) -> TrainState {
    let mut next = *state;
    if state.improves(val_metric) {
        next.best_metric = val_metric;
        next.epochs_since_best = 0;
    } else {
        next.epochs_since_best += 1;
        if next.epochs_since_best >= PATIENCE && next.lr == LR_INITIAL {
            next.lr = LR_DECAYED;
        }
    }
    next
}
