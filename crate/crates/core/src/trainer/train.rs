use log::debug;
use rand::Rng;

use crate::diffcore::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::params::{Binder, ParamStore};
use crate::survloss::{cox_nll, BatchOutcome, CoxLossOp};

use super::adamw::{adamw_step, AdamState};
use super::sampler::stratified_batches;
use super::schedule::{lr_at, ScheduleState};
use super::TrainConfig;

/// One trainable objective: a scoring network over cohort rows.
pub trait Stage {
    fn name(&self) -> &str;

    /// Risk scores `[rows, 1]` with parameters bound through `p`.
    fn forward(&self, g: &mut Graph, p: &mut Binder, rows: &[usize]) -> Result<NodeId>;

    /// Gradient-free scores, used for the validation loss.
    fn score(&self, store: &ParamStore, rows: &[usize]) -> Result<Vec<f64>>;

    fn lr_factor(&self, _name: &str) -> f64 {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub stage: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub log: Vec<EpochRecord>,
    /// Validation loss of the parameters before any update.
    pub initial_val: f64,
    pub best_val: f64,
    /// 1-based epoch whose parameters were kept; 0 if none beat the start.
    pub best_epoch: usize,
}

/// Outcome arrays of the whole cohort, indexed by row.
#[derive(Debug, Clone, Copy)]
pub struct Outcomes<'a> {
    pub times: &'a [f64],
    pub events: &'a [bool],
}

impl Outcomes<'_> {
    fn select(&self, rows: &[usize]) -> (Vec<f64>, Vec<bool>) {
        (rows.iter().map(|&i| self.times[i]).collect(), rows.iter().map(|&i| self.events[i]).collect())
    }

    pub fn cox_loss(&self, scores: &[f64], rows: &[usize]) -> Result<f64> {
        let (t, e) = self.select(rows);
        cox_nll(&BatchOutcome::new(scores, &t, &e)?)
    }
}

/// Trains `stage` and leaves `store` holding the parameters with the lowest
/// validation loss seen, including the starting point.
pub fn train_stage(
    stage: &dyn Stage,
    store: &mut ParamStore,
    outcomes: Outcomes<'_>,
    train_rows: &[usize],
    val_rows: &[usize],
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<StageOutcome> {
    cfg.validate()?;
    if !train_rows.iter().any(|&i| outcomes.events[i]) {
        return Err(Error::config(format!("stage `{}`: training split has no events", stage.name())));
    }
    if !val_rows.iter().any(|&i| outcomes.events[i]) {
        return Err(Error::config(format!("stage `{}`: validation split has no events", stage.name())));
    }
    let val_loss = |s: &ParamStore| outcomes.cox_loss(&stage.score(s, val_rows)?, val_rows);

    let initial_val = val_loss(store)?;
    let mut best = (initial_val, 0usize, store.clone());
    let mut sched = ScheduleState::new();
    let mut adam = AdamState::new();
    let mut log = Vec::new();
    let factor = |n: &str| stage.lr_factor(n);
    while !sched.should_stop(cfg) {
        let lr = lr_at(&sched, cfg);
        let batches = stratified_batches(train_rows, outcomes.events, cfg.batch_size, rng)?;
        let mut total = 0.0;
        for rows in &batches {
            let (loss, grads) = {
                let mut g = Graph::new();
                let mut p = Binder::new(store);
                let y = stage.forward(&mut g, &mut p, rows)?;
                let (t, e) = outcomes.select(rows);
                let loss = CoxLossOp::new(t, e)?.attach(&mut g, y)?;
                (g.value(loss).item()?, g.backward(loss)?.into_named())
            };
            if !loss.is_finite() {
                return Err(Error::contract(format!("stage `{}`: non-finite training loss", stage.name())));
            }
            total += loss;
            adamw_step(store, &grads, lr, cfg, &mut adam, &factor)?;
        }
        let v = val_loss(store)?;
        sched.observe(v, cfg);
        if v < best.0 {
            best = (v, sched.epoch, store.clone());
        }
        let rec = EpochRecord {
            stage: stage.name().to_string(),
            epoch: sched.epoch,
            train_loss: total / batches.len() as f64,
            val_loss: v,
            lr,
        };
        debug!("{} epoch {} train {:.5} val {:.5} lr {:.3e}", rec.stage, rec.epoch, rec.train_loss, v, lr);
        log.push(rec);
    }
    let (best_val, best_epoch, params) = best;
    *store = params;
    Ok(StageOutcome {
        log,
        initial_val,
        best_val,
        best_epoch,
    })
}
