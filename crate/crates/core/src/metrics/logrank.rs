use std::collections::BTreeSet;

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRank {
    pub chi2: f64,
    pub p_value: f64,
    pub observed_a: f64,
    pub expected_a: f64,
}

/// Two-group log-rank test with one degree of freedom.
pub fn logrank_test(
    times_a: &[f64],
    events_a: &[bool],
    times_b: &[f64],
    events_b: &[bool],
) -> Result<LogRank> {
    if times_a.is_empty() || times_b.is_empty() {
        return Err(Error::contract("log-rank test needs two nonempty groups"));
    }
    if times_a.len() != events_a.len() || times_b.len() != events_b.len() {
        return Err(Error::Dimension {
            op: "logrank_test",
            lhs: vec![times_a.len(), events_a.len()],
            rhs: vec![times_b.len(), events_b.len()],
        });
    }
    let mut event_times = BTreeSet::new();
    for (t, &e) in times_a.iter().chain(times_b).zip(events_a.iter().chain(events_b)) {
        if e {
            event_times.insert(t.to_bits());
        }
    }
    if event_times.is_empty() {
        return Err(Error::NoEvents);
    }
    // Times are nonnegative, so the bit patterns order like the values.
    let mut observed = 0.0;
    let mut expected = 0.0;
    let mut variance = 0.0;
    for bits in event_times {
        let t = f64::from_bits(bits);
        let at_risk = |ts: &[f64]| ts.iter().filter(|&&x| x >= t).count() as f64;
        let deaths = |ts: &[f64], es: &[bool]| {
            ts.iter().zip(es).filter(|(&x, &e)| e && x == t).count() as f64
        };
        let na = at_risk(times_a);
        let n = na + at_risk(times_b);
        let da = deaths(times_a, events_a);
        let d = da + deaths(times_b, events_b);
        observed += da;
        expected += d * na / n;
        if n > 1.0 {
            variance += d * (na / n) * (1.0 - na / n) * (n - d) / (n - 1.0);
        }
    }
    let chi2 = if variance > 0.0 {
        (observed - expected).powi(2) / variance
    } else {
        0.0
    };
    Ok(LogRank {
        chi2,
        p_value: chi2_sf(chi2, 1.0),
        observed_a: observed,
        expected_a: expected,
    })
}

/// Upper tail of the chi-square distribution with `df` degrees of freedom.
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df).map_or(f64::NAN, |d| d.sf(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_groups_give_zero_statistic() {
        let t = [1.0, 2.0, 4.0, 5.0];
        let e = [true, false, true, true];
        let r = logrank_test(&t, &e, &t, &e).unwrap();
        assert!(r.chi2.abs() < 1e-15);
        assert!((r.p_value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hand_computed_table() {
        // Event times 1..6; group A holds 1,2,3.
        // t=1: n=6 nA=3 -> E=1/2,  V=3*3*5/(36*5)
        // t=2: n=5 nA=2 -> E=2/5,  V=2*3*4/(25*4)
        // t=3: n=4 nA=1 -> E=1/4,  V=1*3*3/(16*3)
        // later times nA=0 -> E=V=0
        let e_sum = 0.5 + 0.4 + 0.25;
        let v_sum = 0.25 + 0.24 + 0.1875;
        let expected = (3.0 - e_sum) * (3.0 - e_sum) / v_sum;
        let r = logrank_test(&[1.0, 2.0, 3.0], &[true; 3], &[4.0, 5.0, 6.0], &[true; 3]).unwrap();
        assert!((r.chi2 - expected).abs() < 1e-12, "{} vs {expected}", r.chi2);
        assert_eq!(r.observed_a, 3.0);
        assert!(r.p_value < 0.05);
    }

    #[test]
    fn chi_square_tail_values() {
        assert!((chi2_sf(3.841, 1.0) - 0.05).abs() < 1e-3);
        assert!((chi2_sf(3.841_458_820_694_124, 1.0) - 0.05).abs() < 1e-9);
        // df = 2 has the closed form exp(-x/2).
        for x in [0.1, 1.0, 2.5, 7.0, 30.0] {
            assert!((chi2_sf(x, 2.0) - (-x / 2.0_f64).exp()).abs() < 1e-12);
        }
        assert_eq!(chi2_sf(0.0, 1.0), 1.0);
    }

    #[test]
    fn symmetric_in_group_labels() {
        let ta = [1.0, 3.0, 3.0, 8.0, 9.0];
        let ea = [true, true, false, true, false];
        let tb = [2.0, 3.0, 5.0, 6.0];
        let eb = [false, true, true, true];
        let ab = logrank_test(&ta, &ea, &tb, &eb).unwrap();
        let ba = logrank_test(&tb, &eb, &ta, &ea).unwrap();
        assert!((ab.chi2 - ba.chi2).abs() < 1e-12);
    }

    #[test]
    fn no_events_is_an_error() {
        let r = logrank_test(&[1.0], &[false], &[2.0], &[false]);
        assert!(matches!(r, Err(Error::NoEvents)));
    }
}
