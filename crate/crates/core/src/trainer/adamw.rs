use std::collections::BTreeMap;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::params::ParamStore;

use super::TrainConfig;

/// First and second moment estimates per parameter name.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One AdamW update. `lr_factor` scales the rate per parameter name.
/// Frozen parameters and parameters without a gradient are left untouched.
pub fn adamw_step(
    store: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    lr: f64,
    cfg: &TrainConfig,
    state: &mut AdamState,
    lr_factor: &dyn Fn(&str) -> f64,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, param) in store.iter_mut() {
        if !param.trainable {
            continue;
        }
        let Some(g) = grads.get(name) else { continue };
        if g.shape() != param.value.shape() {
            return Err(Error::Dimension {
                op: "adamw_step",
                lhs: param.value.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        let n = g.numel();
        let m = state.m.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
        let v = state.v.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
        let eta = lr * lr_factor(name);
        for (((theta, &gi), mi), vi) in param.value.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *theta -= eta * (mhat / (vhat.sqrt() + cfg.eps)) + eta * cfg.weight_decay * *theta;
        }
    }
    Ok(())
}
