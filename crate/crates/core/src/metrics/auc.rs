use std::cmp::Ordering;

use super::km::{km_censoring, SurvivalCurve};
use super::percentile;
use crate::error::{Error, Result};

/// Cumulative/dynamic AUC at one horizon.
///
/// Cases have an event by `horizon` and carry weight `1 / G(T_i-)`;
/// controls are still event-free after `horizon`. Returns `None` when either
/// set is empty.
pub fn cumulative_dynamic_auc(
    scores: &[f64],
    times: &[f64],
    events: &[bool],
    horizon: f64,
) -> Result<Option<f64>> {
    if scores.len() != times.len() || scores.len() != events.len() {
        return Err(Error::Dimension {
            op: "cumulative_dynamic_auc",
            lhs: vec![scores.len()],
            rhs: vec![times.len(), events.len()],
        });
    }
    if scores.is_empty() {
        return Ok(None);
    }
    let g = km_censoring(times, events)?;
    auc_with_censoring(scores, times, events, horizon, &g)
}

fn auc_with_censoring(
    scores: &[f64],
    times: &[f64],
    events: &[bool],
    horizon: f64,
    g: &SurvivalCurve,
) -> Result<Option<f64>> {
    let mut controls: Vec<f64> = (0..times.len())
        .filter(|&j| times[j] > horizon)
        .map(|j| scores[j])
        .collect();
    controls.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let mut num = 0.0;
    let mut weight_total = 0.0;
    for i in 0..times.len() {
        if !(events[i] && times[i] <= horizon) {
            continue;
        }
        let gi = g.left_limit(times[i]);
        if gi <= 0.0 {
            return Err(Error::IpcwUndefined);
        }
        let w = 1.0 / gi;
        let below = controls.partition_point(|&s| s < scores[i]);
        let upto = controls.partition_point(|&s| s <= scores[i]);
        num += w * (below as f64 + 0.5 * (upto - below) as f64);
        weight_total += w;
    }
    if weight_total == 0.0 || controls.is_empty() {
        return Ok(None);
    }
    Ok(Some(num / (weight_total * controls.len() as f64)))
}

/// AUC at the quartiles of the observed event times.
#[derive(Debug, Clone, PartialEq)]
pub struct TdAuc {
    pub horizons: Vec<f64>,
    /// `None` where the horizon had no cases or no controls.
    pub values: Vec<Option<f64>>,
    pub mean: f64,
}

pub const TD_AUC_PERCENTILES: [f64; 3] = [25.0, 50.0, 75.0];

pub fn td_auc(scores: &[f64], times: &[f64], events: &[bool]) -> Result<TdAuc> {
    let event_times: Vec<f64> = times
        .iter()
        .zip(events)
        .filter(|(_, &e)| e)
        .map(|(&t, _)| t)
        .collect();
    if event_times.is_empty() {
        return Err(Error::NoValidHorizon);
    }
    let g = km_censoring(times, events)?;
    let mut horizons = Vec::new();
    let mut values = Vec::new();
    for q in TD_AUC_PERCENTILES {
        let h = percentile(&event_times, q);
        let v = auc_with_censoring(scores, times, events, h, &g)?;
        if v.is_none() {
            log::warn!("td-AUC horizon {h} has no cases or no controls; excluded");
        }
        horizons.push(h);
        values.push(v);
    }
    let valid: Vec<f64> = values.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(Error::NoValidHorizon);
    }
    let mean = valid.iter().sum::<f64>() / valid.len() as f64;
    Ok(TdAuc {
        horizons,
        values,
        mean,
    })
}
