//! Censoring-aware evaluation: concordance, time-dependent AUC, Kaplan-Meier
//! curves, log-rank testing and risk-threshold stratification.

mod auc;
mod concordance;
mod km;
mod logrank;
mod threshold;

pub use auc::{cumulative_dynamic_auc, td_auc, TdAuc, TD_AUC_PERCENTILES};
pub use concordance::{harrell_c, uno_c};
pub use km::{km_censoring, km_estimate, SurvivalCurve};
pub use logrank::{chi2_sf, logrank_test, LogRank};
pub use threshold::{
    assign_groups, evaluate_cutoff, optimal_threshold, split_by_group, RiskCutoff, RiskGroup,
    MIN_GROUP_FRACTION, MIN_PATIENTS,
};

use std::cmp::Ordering;

use crate::error::Result;

/// Linear-interpolation percentile (`q` in 0..=100) of a nonempty sample.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of an empty sample");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let pos = (q / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    v[lo] + (v[hi] - v[lo]) * frac
}

/// Discrimination summary for one evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub fold: Option<usize>,
    pub n: usize,
    pub n_events: usize,
    pub harrell_c: f64,
    pub uno_c: f64,
    pub td_auc_mean: f64,
    pub td_auc: TdAuc,
}

impl MetricsReport {
    pub fn compute(
        fold: Option<usize>,
        scores: &[f64],
        times: &[f64],
        events: &[bool],
    ) -> Result<Self> {
        let harrell = harrell_c(scores, times, events)?;
        let uno = uno_c(scores, times, events, None)?;
        let td = td_auc(scores, times, events)?;
        Ok(MetricsReport {
            fold,
            n: scores.len(),
            n_events: events.iter().filter(|&&e| e).count(),
            harrell_c: harrell,
            uno_c: uno,
            td_auc_mean: td.mean,
            td_auc: td,
        })
    }
}

/// Mean and standard error of the mean (sample standard deviation / sqrt(k)).
pub fn mean_sem(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, var.sqrt() / k.sqrt())
}

#[cfg(test)]
mod tests;
