use super::logrank::{logrank_test, LogRank};
use super::percentile;
use crate::error::{Error, Result};

pub const MIN_PATIENTS: usize = 10;
/// Smallest allowed share of the cohort on either side of a cutoff.
pub const MIN_GROUP_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskCutoff {
    pub value: f64,
    pub percentile: f64,
    pub logrank: LogRank,
    pub n_low: usize,
    pub n_high: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiskGroup {
    Low,
    High,
}

impl RiskGroup {
    pub fn label(self) -> &'static str {
        match self {
            RiskGroup::Low => "low",
            RiskGroup::High => "high",
        }
    }
}

/// Scores strictly above the cutoff are high risk.
pub fn assign_groups(scores: &[f64], cutoff: f64) -> Vec<RiskGroup> {
    scores
        .iter()
        .map(|&s| if s > cutoff { RiskGroup::High } else { RiskGroup::Low })
        .collect()
}

/// Splits times and events by group; returns `(low, high)`.
pub fn split_by_group(
    groups: &[RiskGroup],
    times: &[f64],
    events: &[bool],
) -> ((Vec<f64>, Vec<bool>), (Vec<f64>, Vec<bool>)) {
    let mut low = (Vec::new(), Vec::new());
    let mut high = (Vec::new(), Vec::new());
    for ((g, &t), &e) in groups.iter().zip(times).zip(events) {
        let side = match g {
            RiskGroup::Low => &mut low,
            RiskGroup::High => &mut high,
        };
        side.0.push(t);
        side.1.push(e);
    }
    (low, high)
}

/// Evaluates one cutoff; `None` if a side is too small or the test is undefined.
pub fn evaluate_cutoff(
    scores: &[f64],
    times: &[f64],
    events: &[bool],
    cutoff: f64,
) -> Option<(LogRank, usize, usize)> {
    let min_side = (MIN_GROUP_FRACTION * scores.len() as f64).ceil() as usize;
    let groups = assign_groups(scores, cutoff);
    let ((tl, el), (th, eh)) = split_by_group(&groups, times, events);
    if tl.len() < min_side || th.len() < min_side {
        return None;
    }
    let lr = logrank_test(&tl, &el, &th, &eh).ok()?;
    Some((lr, tl.len(), th.len()))
}

/// Cutoff minimizing the log-rank p-value over the 10th..90th score
/// percentiles in 1-point steps. Ties go to the percentile nearest 50.
pub fn optimal_threshold(scores: &[f64], times: &[f64], events: &[bool]) -> Result<RiskCutoff> {
    if scores.len() != times.len() || scores.len() != events.len() {
        return Err(Error::Dimension {
            op: "optimal_threshold",
            lhs: vec![scores.len()],
            rhs: vec![times.len(), events.len()],
        });
    }
    if scores.len() < MIN_PATIENTS {
        return Err(Error::contract(format!(
            "risk stratification needs at least {MIN_PATIENTS} patients, got {}",
            scores.len()
        )));
    }
    let mut best: Option<RiskCutoff> = None;
    for q in 10..=90 {
        let q = q as f64;
        let value = percentile(scores, q);
        let Some((logrank, n_low, n_high)) = evaluate_cutoff(scores, times, events, value) else {
            continue;
        };
        let candidate = RiskCutoff {
            value,
            percentile: q,
            logrank,
            n_low,
            n_high,
        };
        let better = match &best {
            None => true,
            Some(b) => {
                candidate.logrank.p_value < b.logrank.p_value
                    || (candidate.logrank.p_value == b.logrank.p_value
                        && (q - 50.0).abs() < (b.percentile - 50.0).abs())
            }
        };
        if better {
            best = Some(candidate);
        }
    }
    best.ok_or(Error::NoValidCutoff)
}
