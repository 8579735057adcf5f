use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Right-continuous product-limit step function.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalCurve {
    /// Distinct times at which at least one counted event occurred, ascending.
    pub times: Vec<f64>,
    /// Survival just after each time in `times`.
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
}

impl SurvivalCurve {
    /// `S(t)`, including the jump at `t`.
    pub fn at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            1.0
        } else {
            self.survival[k - 1]
        }
    }

    /// `S(t-)`, excluding any jump at `t`.
    pub fn left_limit(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s < t);
        if k == 0 {
            1.0
        } else {
            self.survival[k - 1]
        }
    }
}

fn product_limit(times: &[f64], counted: &[bool]) -> Result<SurvivalCurve> {
    if times.is_empty() {
        return Err(Error::contract("survival curve needs at least one subject"));
    }
    if times.len() != counted.len() {
        return Err(Error::Dimension {
            op: "km_estimate",
            lhs: vec![times.len()],
            rhs: vec![counted.len()],
        });
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].partial_cmp(&times[b]).unwrap_or(Ordering::Equal));
    let mut curve = SurvivalCurve {
        times: Vec::new(),
        survival: Vec::new(),
        at_risk: Vec::new(),
        events: Vec::new(),
    };
    let mut s = 1.0;
    let mut at_risk = times.len();
    let mut k = 0;
    while k < order.len() {
        let t = times[order[k]];
        let mut end = k;
        let mut d = 0;
        while end < order.len() && times[order[end]] == t {
            if counted[order[end]] {
                d += 1;
            }
            end += 1;
        }
        if d > 0 {
            s *= 1.0 - d as f64 / at_risk as f64;
            curve.times.push(t);
            curve.survival.push(s);
            curve.at_risk.push(at_risk);
            curve.events.push(d);
        }
        at_risk -= end - k;
        k = end;
    }
    Ok(curve)
}

/// Kaplan-Meier estimate of the event-free survival function.
pub fn km_estimate(times: &[f64], events: &[bool]) -> Result<SurvivalCurve> {
    product_limit(times, events)
}

/// Kaplan-Meier estimate of the censoring survival function `G(t)`,
/// counting censorings as events.
pub fn km_censoring(times: &[f64], events: &[bool]) -> Result<SurvivalCurve> {
    let censored: Vec<bool> = events.iter().map(|&e| !e).collect();
    product_limit(times, &censored)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_product_limit() {
        let c = km_estimate(&[1.0, 2.0, 3.0], &[true, false, true]).unwrap();
        assert!((c.at(1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.at(2.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.at(3.0), 0.0);
        assert_eq!(c.at(0.5), 1.0);
        assert!((c.left_limit(3.0) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn all_censored_is_flat() {
        let c = km_estimate(&[1.0, 2.0, 3.0], &[false; 3]).unwrap();
        assert!(c.times.is_empty());
        assert_eq!(c.at(10.0), 1.0);
    }

    #[test]
    fn uncensored_equals_empirical_survival() {
        let t = [5.0, 1.0, 3.0, 3.0, 9.0, 2.0];
        let c = km_estimate(&t, &[true; 6]).unwrap();
        for &q in &t {
            let frac = t.iter().filter(|&&x| x > q).count() as f64 / t.len() as f64;
            assert!((c.at(q) - frac).abs() < 1e-12);
        }
        assert_eq!(c.events, vec![1, 1, 2, 1, 1]);
        assert_eq!(c.at_risk, vec![6, 5, 4, 2, 1]);
    }

    #[test]
    fn censoring_curve_swaps_roles() {
        let g = km_censoring(&[1.0, 2.0, 3.0], &[true, false, true]).unwrap();
        assert_eq!(g.times, vec![2.0]);
        assert!((g.at(2.0) - 0.5).abs() < 1e-15);
        assert_eq!(g.left_limit(2.0), 1.0);
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(km_estimate(&[], &[]).is_err());
    }
}
