use crate::error::{Error, Result};

/// 1-based ascending ranks; tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

/// Rank-sum fusion of per-modality scores over one cohort.
///
/// `None` marks a patient without that modality. Ranks are taken among the
/// patients that have it and mapped linearly from 1..=n_present onto
/// 1..=n, and a missing patient receives the cohort median rank (n+1)/2, so
/// every modality contributes on the same scale whatever its coverage.
pub fn late_fuse(scores: &[Vec<Option<f64>>]) -> Result<Vec<f64>> {
    if scores.len() < 2 {
        return Err(Error::contract(format!(
            "late fusion needs at least two score vectors, got {}",
            scores.len()
        )));
    }
    let n = scores[0].len();
    if let Some(v) = scores.iter().find(|v| v.len() != n) {
        return Err(Error::Dimension {
            op: "late_fuse",
            lhs: vec![n],
            rhs: vec![v.len()],
        });
    }
    let mid = (n as f64 + 1.0) / 2.0;
    let mut fused = vec![0.0; n];
    for v in scores {
        let idx: Vec<usize> = (0..n).filter(|&i| v[i].is_some()).collect();
        let present: Vec<f64> = idx.iter().map(|&i| v[i].unwrap_or_default()).collect();
        let ranks = average_ranks(&present);
        let np = idx.len() as f64;
        fused.iter_mut().for_each(|f| *f += mid);
        if np > 1.0 {
            for (&i, r) in idx.iter().zip(ranks) {
                fused[i] += 1.0 + (r - 1.0) * (n as f64 - 1.0) / (np - 1.0) - mid;
            }
        }
    }
    Ok(fused)
}
