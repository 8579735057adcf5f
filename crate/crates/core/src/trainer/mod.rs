//! Optimization and cross-validation.

mod adamw;
mod cv;
mod sampler;
mod schedule;
mod train;

pub use adamw::{adamw_step, AdamState};
pub use cv::{derive_seed, run_cv, score_checkpoint, train_fold, CvResult, FoldResult, MetricSummary, PooledScore};
pub use sampler::stratified_batches;
pub use schedule::{lr_at, ScheduleState, IMPROVEMENT_TOL};
pub use train::{train_stage, EpochRecord, Outcomes, Stage, StageOutcome};

use crate::error::{Error, Result};
use crate::kv::KvDocument;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub lr_min: f64,
    pub lr_max: f64,
    pub warmup_epochs: usize,
    pub plateau_patience: usize,
    pub decay_steps: usize,
    /// Multiplier on the encoder learning rate during joint fine-tuning.
    pub encoder_lr_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 500,
            early_stop_patience: 50,
            batch_size: 32,
            weight_decay: 1e-5,
            lr_min: 1e-8,
            lr_max: 1e-5,
            warmup_epochs: 50,
            plateau_patience: 20,
            decay_steps: 12,
            encoder_lr_factor: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// A short schedule with a larger peak rate for small synthetic cohorts
    /// and CPU time budgets. Same shape as the default, compressed.
    pub fn desk() -> Self {
        TrainConfig {
            max_epochs: 60,
            early_stop_patience: 15,
            lr_min: 1e-6,
            lr_max: 3e-3,
            warmup_epochs: 5,
            plateau_patience: 6,
            decay_steps: 12,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_min > 0.0 && self.lr_min < self.lr_max && self.lr_max.is_finite()) {
            return Err(Error::config(format!(
                "need 0 < lr_min < lr_max, got {} and {}",
                self.lr_min, self.lr_max
            )));
        }
        let counts = [
            ("max_epochs", self.max_epochs),
            ("early_stop_patience", self.early_stop_patience),
            ("batch_size", self.batch_size),
            ("warmup_epochs", self.warmup_epochs),
            ("plateau_patience", self.plateau_patience),
            ("decay_steps", self.decay_steps),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be positive")));
        }
        if !(self.weight_decay >= 0.0) || !(self.encoder_lr_factor > 0.0) || !(self.eps > 0.0) {
            return Err(Error::config("weight_decay, encoder_lr_factor and eps must be nonnegative, positive, positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("adam betas must lie in [0, 1)"));
        }
        Ok(())
    }

    pub const SECTION: &'static str = "train";

    pub fn to_kv(&self, doc: &mut KvDocument) {
        let s = Self::SECTION;
        doc.set(s, "max_epochs", self.max_epochs);
        doc.set(s, "early_stop_patience", self.early_stop_patience);
        doc.set(s, "batch_size", self.batch_size);
        doc.set(s, "weight_decay", self.weight_decay);
        doc.set(s, "lr_min", self.lr_min);
        doc.set(s, "lr_max", self.lr_max);
        doc.set(s, "warmup_epochs", self.warmup_epochs);
        doc.set(s, "plateau_patience", self.plateau_patience);
        doc.set(s, "decay_steps", self.decay_steps);
        doc.set(s, "encoder_lr_factor", self.encoder_lr_factor);
        doc.set(s, "beta1", self.beta1);
        doc.set(s, "beta2", self.beta2);
        doc.set(s, "eps", self.eps);
        doc.set(s, "seed", self.seed);
    }

    /// Overrides fields of `base` with the keys present in `[train]`.
    pub fn from_kv(doc: &KvDocument, base: TrainConfig) -> Result<Self> {
        let s = Self::SECTION;
        let c = TrainConfig {
            max_epochs: doc.value_or(s, "max_epochs", base.max_epochs)?,
            early_stop_patience: doc.value_or(s, "early_stop_patience", base.early_stop_patience)?,
            batch_size: doc.value_or(s, "batch_size", base.batch_size)?,
            weight_decay: doc.value_or(s, "weight_decay", base.weight_decay)?,
            lr_min: doc.value_or(s, "lr_min", base.lr_min)?,
            lr_max: doc.value_or(s, "lr_max", base.lr_max)?,
            warmup_epochs: doc.value_or(s, "warmup_epochs", base.warmup_epochs)?,
            plateau_patience: doc.value_or(s, "plateau_patience", base.plateau_patience)?,
            decay_steps: doc.value_or(s, "decay_steps", base.decay_steps)?,
            encoder_lr_factor: doc.value_or(s, "encoder_lr_factor", base.encoder_lr_factor)?,
            beta1: doc.value_or(s, "beta1", base.beta1)?,
            beta2: doc.value_or(s, "beta2", base.beta2)?,
            eps: doc.value_or(s, "eps", base.eps)?,
            seed: doc.value_or(s, "seed", base.seed)?,
        };
        c.validate()?;
        Ok(c)
    }
}
