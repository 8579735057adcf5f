use super::TrainConfig;

/// Improvements smaller than this do not reset the plateau or early-stop
/// counters.
pub const IMPROVEMENT_TOL: f64 = 1e-6;

/// Learning-rate and stopping bookkeeping, advanced once per validation
/// evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleState {
    /// Epochs completed so far.
    pub epoch: usize,
    pub best_val: f64,
    /// Evaluations without improvement since warmup ended; drives decay.
    pub since_improvement: usize,
    /// Evaluations without improvement overall; drives early stopping.
    pub stale: usize,
    /// Decay steps taken, once the plateau detector has fired.
    pub decay_step: Option<usize>,
}

impl Default for ScheduleState {
    fn default() -> Self {
        ScheduleState {
            epoch: 0,
            best_val: f64::INFINITY,
            since_improvement: 0,
            stale: 0,
            decay_step: None,
        }
    }
}

impl ScheduleState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records the validation loss of the epoch just finished. Returns
    /// whether it counted as an improvement.
    pub fn observe(&mut self, val_loss: f64, cfg: &TrainConfig) -> bool {
        let improved = val_loss < self.best_val - IMPROVEMENT_TOL;
        if improved {
            self.best_val = val_loss;
            self.stale = 0;
            self.since_improvement = 0;
        } else {
            self.stale += 1;
            if self.epoch >= cfg.warmup_epochs {
                self.since_improvement += 1;
            }
        }
        self.epoch += 1;
        match self.decay_step {
            Some(k) => self.decay_step = Some((k + 1).min(cfg.decay_steps)),
            None if self.since_improvement >= cfg.plateau_patience => self.decay_step = Some(1),
            None => {}
        }
        improved
    }

    pub fn should_stop(&self, cfg: &TrainConfig) -> bool {
        self.stale >= cfg.early_stop_patience || self.epoch >= cfg.max_epochs
    }
}

/// Learning rate for the upcoming epoch.
pub fn lr_at(state: &ScheduleState, cfg: &TrainConfig) -> f64 {
    let (lo, hi) = (cfg.lr_min, cfg.lr_max);
    if let Some(k) = state.decay_step {
        if k >= cfg.decay_steps {
            return lo;
        }
        let frac = k as f64 / cfg.decay_steps as f64;
        return (hi * (lo / hi).powf(frac)).clamp(lo, hi);
    }
    if state.epoch < cfg.warmup_epochs {
        return lo + (hi - lo) * state.epoch as f64 / cfg.warmup_epochs as f64;
    }
    hi
}
