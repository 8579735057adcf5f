//! Cox negative log partial likelihood with Breslow ties.
//!
//! For a batch with `N_ob` observed events,
//! `L = -(1/N_ob) * sum_{i: C_i} [ y_i - log sum_{j: T_j >= T_i} exp(y_j) ]`.
//! Risk sets are inclusive and local to the batch, so losses of separate
//! batches are not additive.

use std::cmp::Ordering;
use std::sync::Arc;

use crate::diffcore::{CustomOp, Graph, NodeId, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct BatchOutcome<'a> {
    pub scores: &'a [f64],
    pub times: &'a [f64],
    pub events: &'a [bool],
}

impl<'a> BatchOutcome<'a> {
    pub fn new(scores: &'a [f64], times: &'a [f64], events: &'a [bool]) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        if scores.len() != times.len() || scores.len() != events.len() {
            return Err(Error::Dimension {
                op: "cox_nll",
                lhs: vec![scores.len()],
                rhs: vec![times.len(), events.len()],
            });
        }
        Ok(BatchOutcome {
            scores,
            times,
            events,
        })
    }
}

/// Indices sorted by descending time; ties keep index order.
fn by_time_desc(times: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[b].partial_cmp(&times[a]).unwrap_or(Ordering::Equal));
    order
}

/// Shifted risk-set sums: for each patient, `sum_{j: T_j >= T_i} exp(y_j - max)`.
fn risk_set_sums(batch: &BatchOutcome<'_>, shift: f64) -> Vec<f64> {
    let n = batch.scores.len();
    let order = by_time_desc(batch.times);
    let mut sums = vec![0.0; n];
    let mut acc = 0.0;
    let mut k = 0;
    while k < n {
        let t = batch.times[order[k]];
        let mut end = k;
        while end < n && batch.times[order[end]] == t {
            acc += (batch.scores[order[end]] - shift).exp();
            end += 1;
        }
        for &i in &order[k..end] {
            sums[i] = acc;
        }
        k = end;
    }
    sums
}

fn n_events(batch: &BatchOutcome<'_>) -> Result<usize> {
    let n = batch.events.iter().filter(|&&e| e).count();
    if n == 0 {
        return Err(Error::NoEvents);
    }
    Ok(n)
}

/// Log-sum-exp shift over patients that sit in at least one risk set, so a
/// patient censored before the first event leaves the loss bit-identical.
fn stable_shift(batch: &BatchOutcome<'_>) -> f64 {
    let first = batch
        .times
        .iter()
        .zip(batch.events)
        .filter(|(_, &e)| e)
        .map(|(&t, _)| t)
        .fold(f64::INFINITY, f64::min);
    batch
        .scores
        .iter()
        .zip(batch.times)
        .filter(|(_, &t)| t >= first)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn cox_nll(batch: &BatchOutcome<'_>) -> Result<f64> {
    let n_ob = n_events(batch)?;
    let shift = stable_shift(batch);
    let sums = risk_set_sums(batch, shift);
    let mut total = 0.0;
    for i in 0..batch.scores.len() {
        if batch.events[i] {
            total += batch.scores[i] - (shift + sums[i].ln());
        }
    }
    Ok(-total / n_ob as f64)
}

/// `dL/dy_k = -(1/N_ob) [C_k - sum_{i: C_i, T_i <= T_k} exp(y_k) / R_i]`
/// where `R_i` is the risk-set sum at `T_i`.
pub fn cox_nll_grad(batch: &BatchOutcome<'_>) -> Result<Vec<f64>> {
    let n_ob = n_events(batch)? as f64;
    let n = batch.scores.len();
    let shift = stable_shift(batch);
    let sums = risk_set_sums(batch, shift);
    // Ascending time: accumulate 1/R_i over events with T_i <= T_k.
    let mut order = by_time_desc(batch.times);
    order.reverse();
    let mut inv_acc = vec![0.0; n];
    let mut acc = 0.0;
    let mut k = 0;
    while k < n {
        let t = batch.times[order[k]];
        let mut end = k;
        while end < n && batch.times[order[end]] == t {
            let i = order[end];
            if batch.events[i] {
                acc += 1.0 / sums[i];
            }
            end += 1;
        }
        for &i in &order[k..end] {
            inv_acc[i] = acc;
        }
        k = end;
    }
    Ok((0..n)
        .map(|k| {
            let c = if batch.events[k] { 1.0 } else { 0.0 };
            -(c - (batch.scores[k] - shift).exp() * inv_acc[k]) / n_ob
        })
        .collect())
}

/// Graph node computing [`cox_nll`] on a `[n, 1]` score column.
#[derive(Debug, Clone)]
pub struct CoxLossOp {
    times: Vec<f64>,
    events: Vec<bool>,
}

impl CoxLossOp {
    pub fn new(times: Vec<f64>, events: Vec<bool>) -> Result<Self> {
        if times.len() != events.len() {
            return Err(Error::Dimension {
                op: "cox_loss",
                lhs: vec![times.len()],
                rhs: vec![events.len()],
            });
        }
        if !events.iter().any(|&e| e) {
            return Err(Error::NoEvents);
        }
        Ok(CoxLossOp { times, events })
    }

    /// Appends the loss node for `scores` to the graph.
    pub fn attach(self, graph: &mut Graph, scores: NodeId) -> Result<NodeId> {
        graph.custom(Arc::new(self), &[scores])
    }
}

impl CustomOp for CoxLossOp {
    fn name(&self) -> &'static str {
        "cox_nll"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let y = inputs[0];
        if y.numel() != self.times.len() {
            return Err(Error::Dimension {
                op: "cox_nll",
                lhs: y.shape().to_vec(),
                rhs: vec![self.times.len()],
            });
        }
        let batch = BatchOutcome::new(y.data(), &self.times, &self.events)?;
        Ok(Tensor::scalar(cox_nll(&batch)?))
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let y = inputs[0];
        let batch = BatchOutcome::new(y.data(), &self.times, &self.events).expect("checked");
        let scale = g.data()[0];
        let grad: Vec<f64> = cox_nll_grad(&batch)
            .expect("checked")
            .into_iter()
            .map(|d| d * scale)
            .collect();
        vec![Some(Tensor::new(y.shape().to_vec(), grad).expect("same size"))]
    }
}
