use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

/// `G(t-)` by direct product over distinct censoring times below `t`.
fn censoring_left_limit(times: &[f64], events: &[bool], t: f64) -> f64 {
    let mut distinct: Vec<f64> = times
        .iter()
        .zip(events)
        .filter(|(&s, &e)| !e && s < t)
        .map(|(&s, _)| s)
        .collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    distinct
        .iter()
        .map(|&s| {
            let at_risk = times.iter().filter(|&&x| x >= s).count() as f64;
            let cens = times
                .iter()
                .zip(events)
                .filter(|(&x, &e)| !e && x == s)
                .count() as f64;
            1.0 - cens / at_risk
        })
        .product()
}

fn pair_score(a: f64, b: f64) -> f64 {
    if a > b {
        1.0
    } else if a == b {
        0.5
    } else {
        0.0
    }
}

fn harrell_oracle(y: &[f64], t: &[f64], c: &[bool]) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..y.len() {
        for j in 0..y.len() {
            if c[i] && t[i] < t[j] {
                num += pair_score(y[i], y[j]);
                den += 1.0;
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

fn uno_oracle(y: &[f64], t: &[f64], c: &[bool]) -> Option<f64> {
    let tau = t
        .iter()
        .zip(c)
        .filter(|(_, &e)| e)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..y.len() {
        if !c[i] || t[i] > tau {
            continue;
        }
        let g = censoring_left_limit(t, c, t[i]);
        let w = 1.0 / (g * g);
        for j in 0..y.len() {
            if t[i] < t[j] {
                num += w * pair_score(y[i], y[j]);
                den += w;
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

fn auc_oracle(y: &[f64], t: &[f64], c: &[bool], h: f64) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..y.len() {
        if !(c[i] && t[i] <= h) {
            continue;
        }
        let w = 1.0 / censoring_left_limit(t, c, t[i]);
        for j in 0..y.len() {
            if t[j] > h {
                num += w * pair_score(y[i], y[j]);
                den += w;
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    let n = rng.gen_range(2..=60);
    // Coarse grids so tied times and tied scores both occur.
    let y = (0..n).map(|_| rng.gen_range(0..12) as f64 / 4.0).collect();
    let t = (0..n).map(|_| rng.gen_range(1..25) as f64).collect();
    let c = (0..n).map(|_| rng.gen_bool(0.6)).collect();
    (y, t, c)
}

#[test]
fn perfect_ranking_scores_one() {
    let t = [1.0, 2.0, 3.0, 4.0, 5.0];
    let y = [5.0, 4.0, 3.0, 2.0, 1.0];
    let all = [true; 5];
    assert_eq!(harrell_c(&y, &t, &all).unwrap(), 1.0);
    let some = [true, false, true, false, true];
    assert_eq!(uno_c(&y, &t, &some, None).unwrap(), 1.0);
    for h in [1.5, 2.5, 3.5] {
        assert_eq!(cumulative_dynamic_auc(&y, &t, &some, h).unwrap(), Some(1.0));
    }
}

#[test]
fn constant_scores_score_one_half() {
    let t = [1.0, 2.0, 3.0, 4.0, 5.0];
    let c = [true, false, true, true, false];
    let y = [0.3; 5];
    assert_eq!(harrell_c(&y, &t, &c).unwrap(), 0.5);
    assert_eq!(uno_c(&y, &t, &c, None).unwrap(), 0.5);
    assert_eq!(td_auc(&y, &t, &c).unwrap().mean, 0.5);
}

#[test]
fn no_comparable_pairs_is_an_error() {
    let r = harrell_c(&[1.0, 2.0], &[1.0, 2.0], &[false, false]);
    assert!(matches!(r, Err(crate::Error::UndefinedConcordance)));
    // Tied event times are not comparable.
    let r = harrell_c(&[1.0, 2.0], &[3.0, 3.0], &[true, true]);
    assert!(matches!(r, Err(crate::Error::UndefinedConcordance)));
}

#[test]
fn harrell_matches_pair_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..200 {
        let (y, t, c) = random_instance(&mut rng);
        match harrell_oracle(&y, &t, &c) {
            Some(expected) => assert_eq!(harrell_c(&y, &t, &c).unwrap(), expected),
            None => assert!(harrell_c(&y, &t, &c).is_err()),
        }
    }
}

#[test]
fn uno_matches_ipcw_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let (y, t, c) = random_instance(&mut rng);
        match uno_oracle(&y, &t, &c) {
            Some(expected) => {
                let got = uno_c(&y, &t, &c, None).unwrap();
                assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
            }
            None => assert!(uno_c(&y, &t, &c, None).is_err()),
        }
    }
}

#[test]
fn uno_equals_harrell_without_censoring() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let (y, t, _) = random_instance(&mut rng);
        let c = vec![true; y.len()];
        if let Ok(h) = harrell_c(&y, &t, &c) {
            assert_eq!(uno_c(&y, &t, &c, None).unwrap(), h);
        }
    }
}

#[test]
fn td_auc_matches_weighted_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..200 {
        let (y, t, c) = random_instance(&mut rng);
        for h in [4.0, 10.5, 18.0] {
            let got = cumulative_dynamic_auc(&y, &t, &c, h).unwrap();
            match auc_oracle(&y, &t, &c, h) {
                Some(expected) => assert!((got.unwrap() - expected).abs() < 1e-12),
                None => assert!(got.is_none()),
            }
        }
    }
}

#[test]
fn td_auc_uses_event_time_quartiles() {
    let t = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
    let c = [true, true, false, true, true, false, true, true, false];
    let y = [9.0, 8.0, 7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0];
    let r = td_auc(&y, &t, &c).unwrap();
    let ev: Vec<f64> = t.iter().zip(&c).filter(|(_, &e)| e).map(|(&s, _)| s).collect();
    assert_eq!(r.horizons, vec![percentile(&ev, 25.0), percentile(&ev, 50.0), percentile(&ev, 75.0)]);
    assert_eq!(r.mean, 1.0);
}

#[test]
fn metrics_invariant_under_monotone_transform() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..50 {
        let (y, t, c) = random_instance(&mut rng);
        let z: Vec<f64> = y.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
        if let Ok(a) = harrell_c(&y, &t, &c) {
            assert_eq!(a, harrell_c(&z, &t, &c).unwrap());
            assert_eq!(uno_c(&y, &t, &c, None).unwrap(), uno_c(&z, &t, &c, None).unwrap());
        }
        if let Ok(a) = td_auc(&y, &t, &c) {
            assert_eq!(a, td_auc(&z, &t, &c).unwrap());
        }
    }
}

#[test]
fn percentile_interpolates_linearly() {
    let v = [4.0, 1.0, 3.0, 2.0];
    assert_eq!(percentile(&v, 0.0), 1.0);
    assert_eq!(percentile(&v, 100.0), 4.0);
    assert_eq!(percentile(&v, 50.0), 2.5);
}

#[test]
fn mean_sem_uses_sample_deviation() {
    let (m, s) = mean_sem(&[1.0, 2.0, 3.0, 4.0, 5.0]);
    assert_eq!(m, 3.0);
    assert!((s - (2.5f64).sqrt() / 5f64.sqrt()).abs() < 1e-15);
}

/// Two planted clusters: high scorers die early.
fn two_clusters(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    let mut y = Vec::new();
    let mut t = Vec::new();
    let mut c = Vec::new();
    for i in 0..n {
        let high = i % 2 == 0;
        y.push(if high { 5.0 + rng.gen::<f64>() } else { rng.gen::<f64>() });
        t.push(if high { rng.gen_range(1.0..10.0) } else { rng.gen_range(20.0..40.0) });
        c.push(rng.gen_bool(0.8));
    }
    (y, t, c)
}

#[test]
fn threshold_separates_clusters() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let (y, t, c) = two_clusters(&mut rng, 60);
    let cut = optimal_threshold(&y, &t, &c).unwrap();
    assert!(cut.value >= 1.0 && cut.value < 5.0, "{cut:?}");
    assert!(cut.logrank.p_value < 0.05);
    let median = percentile(&y, 50.0);
    let (at_median, _, _) = evaluate_cutoff(&y, &t, &c, median).unwrap();
    assert!(cut.logrank.p_value <= at_median.p_value);
}

#[test]
fn threshold_rejects_constant_scores_and_tiny_cohorts() {
    let t: Vec<f64> = (1..=20).map(f64::from).collect();
    let c = vec![true; 20];
    assert!(matches!(
        optimal_threshold(&[1.0; 20], &t, &c),
        Err(crate::Error::NoValidCutoff)
    ));
    assert!(optimal_threshold(&[1.0; 5], &t[..5], &c[..5]).is_err());
}

#[test]
fn threshold_keeps_minimum_group_sizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..20 {
        let (y, t, c) = two_clusters(&mut rng, 43);
        let cut = optimal_threshold(&y, &t, &c).unwrap();
        assert!(cut.n_low >= 5 && cut.n_high >= 5);
        assert_eq!(cut.n_low + cut.n_high, 43);
    }
}
