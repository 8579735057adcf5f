use super::graph::{Graph, LeafKind, NodeId};
use crate::error::Result;

/// Central-difference step used by [`check_gradients`].
pub const FD_STEP: f64 = 1e-5;
/// Lower clamp for the relative-error denominator.
pub const DENOM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn all_passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn get(&self, name: &str) -> Option<&ParamCheck> {
        self.params.iter().find(|p| p.name == name)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

/// Compares backward gradients of every trainable leaf against central
/// finite differences of `loss`. Frozen leaves are not reported.
pub fn check_gradients(graph: &Graph, loss: NodeId, tolerance: f64) -> Result<GradCheckReport> {
    let analytic = graph.backward(loss)?;
    let mut work = graph.clone();
    let leaves: Vec<(NodeId, String)> = graph
        .params()
        .filter(|(id, _, kind)| *kind == LeafKind::Trainable && *id <= loss)
        .map(|(id, name, _)| (id, name.to_string()))
        .collect();
    let mut params = Vec::with_capacity(leaves.len());
    for (id, name) in leaves {
        let base = graph.value(id).clone();
        let grad = analytic.get(id).cloned();
        let mut worst = 0.0f64;
        for k in 0..base.numel() {
            let mut plus = base.clone();
            plus.data_mut()[k] += FD_STEP;
            work.set_leaf(id, plus)?;
            let f_plus = work.value(loss).item()?;
            let mut minus = base.clone();
            minus.data_mut()[k] -= FD_STEP;
            work.set_leaf(id, minus)?;
            let f_minus = work.value(loss).item()?;
            let numeric = (f_plus - f_minus) / (2.0 * FD_STEP);
            let a = grad.as_ref().map_or(0.0, |g| g.data()[k]);
            let err = relative_error(a, numeric);
            worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
        }
        work.set_leaf(id, base)?;
        params.push(ParamCheck {
            name,
            max_rel_error: worst,
            passed: worst < tolerance,
        });
    }
    Ok(GradCheckReport { tolerance, params })
}
