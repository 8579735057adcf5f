use std::cmp::Ordering;

use super::km::km_censoring;
use crate::error::{Error, Result};

fn check_lengths(op: &'static str, scores: &[f64], times: &[f64], events: &[bool]) -> Result<()> {
    if scores.len() != times.len() || scores.len() != events.len() {
        return Err(Error::Dimension {
            op,
            lhs: vec![scores.len()],
            rhs: vec![times.len(), events.len()],
        });
    }
    Ok(())
}

/// Counts of stored scores below / equal to a query, over a Fenwick tree
/// indexed by score rank.
struct RankCounter {
    sorted: Vec<f64>,
    tree: Vec<usize>,
    total: usize,
}

impl RankCounter {
    fn new(scores: &[f64]) -> Self {
        let mut sorted = scores.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
        sorted.dedup();
        let tree = vec![0; sorted.len() + 1];
        RankCounter {
            sorted,
            tree,
            total: 0,
        }
    }

    fn rank(&self, y: f64) -> usize {
        self.sorted.partition_point(|&s| s < y)
    }

    fn insert(&mut self, y: f64) {
        let mut i = self.rank(y) + 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
        self.total += 1;
    }

    /// Number of inserted scores with rank `< r`.
    fn prefix(&self, r: usize) -> usize {
        let mut i = r;
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }

    fn below_and_equal(&self, y: f64) -> (usize, usize) {
        let r = self.rank(y);
        let below = self.prefix(r);
        let upto = self.prefix(r + 1);
        (below, upto - below)
    }
}

/// Weighted concordance over pairs with `C_i = 1` and `T_i < T_j`. Each
/// pair gets weight `weight(i)`; return `None` from `weight` to drop `i`.
fn weighted_concordance(
    scores: &[f64],
    times: &[f64],
    events: &[bool],
    weight: impl Fn(usize) -> Option<f64>,
) -> Result<f64> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[b].partial_cmp(&times[a]).unwrap_or(Ordering::Equal));
    let mut later = RankCounter::new(scores);
    let mut num = 0.0;
    let mut den = 0.0;
    let mut k = 0;
    while k < n {
        let t = times[order[k]];
        let mut end = k;
        while end < n && times[order[end]] == t {
            end += 1;
        }
        for &i in &order[k..end] {
            if !events[i] || later.total == 0 {
                continue;
            }
            let Some(w) = weight(i) else { continue };
            let (below, equal) = later.below_and_equal(scores[i]);
            num += w * (below as f64 + 0.5 * equal as f64);
            den += w * later.total as f64;
        }
        for &i in &order[k..end] {
            later.insert(scores[i]);
        }
        k = end;
    }
    if den == 0.0 {
        return Err(Error::UndefinedConcordance);
    }
    Ok(num / den)
}

/// Harrell's C: fraction of comparable pairs ordered correctly by risk.
///
/// A pair is comparable when the earlier time is an event and the times
/// differ. Tied scores count one half.
pub fn harrell_c(scores: &[f64], times: &[f64], events: &[bool]) -> Result<f64> {
    check_lengths("harrell_c", scores, times, events)?;
    weighted_concordance(scores, times, events, |_| Some(1.0))
}

/// Uno's C with IPCW weights `1 / G(T_i-)^2`, truncated at `tau` (default:
/// largest event time). `G` is the censoring Kaplan-Meier curve of the same
/// sample.
pub fn uno_c(scores: &[f64], times: &[f64], events: &[bool], tau: Option<f64>) -> Result<f64> {
    check_lengths("uno_c", scores, times, events)?;
    if scores.is_empty() {
        return Err(Error::UndefinedConcordance);
    }
    let g = km_censoring(times, events)?;
    let tau = match tau {
        Some(t) => t,
        None => times
            .iter()
            .zip(events)
            .filter(|(_, &e)| e)
            .map(|(&t, _)| t)
            .fold(f64::NEG_INFINITY, f64::max),
    };
    let mut degenerate = false;
    let weights: Vec<Option<f64>> = (0..times.len())
        .map(|i| {
            if !events[i] || times[i] > tau {
                return None;
            }
            let gi = g.left_limit(times[i]);
            if gi <= 0.0 {
                degenerate = true;
                return None;
            }
            Some(1.0 / (gi * gi))
        })
        .collect();
    if degenerate {
        return Err(Error::IpcwUndefined);
    }
    weighted_concordance(scores, times, events, |i| weights[i])
}
