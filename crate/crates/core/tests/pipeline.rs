//! End-to-end checks through the public API only.

use fusurv_core::cohort::{load_cohort_dir, synth_cohort, write_cohort, SynthModality, SynthSpec};
use fusurv_core::fusion::{FusionMode, ModelSpec};
use fusurv_core::metrics::{harrell_c, uno_c};
use fusurv_core::survloss::{cox_nll, BatchOutcome};
use fusurv_core::trainer::{run_cv, TrainConfig};
use proptest::prelude::*;

fn small_spec() -> SynthSpec {
    let a = SynthModality::new("a", 5, 3, 1.5, 0.0);
    let b = SynthModality::new("b", 5, 3, 1.5, 0.3);
    SynthSpec {
        n: 120,
        censoring: 0.3,
        baseline_hazard: 1.0 / 900.0,
        interaction: 0.0,
        interaction_pair: None,
        modalities: vec![a, b],
    }
}

#[test]
fn cohort_round_trips_through_csv() {
    let synth = synth_cohort(&small_spec(), 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_cohort(&synth.cohort, dir.path()).unwrap();
    let back = load_cohort_dir(dir.path()).unwrap();
    assert_eq!(back.ids(), synth.cohort.ids());
    assert_eq!(back.times(), synth.cohort.times());
    assert_eq!(back.events(), synth.cohort.events());
    for m in ["a", "b"] {
        let (x, y) = (back.require_block(m).unwrap(), synth.cohort.require_block(m).unwrap());
        assert_eq!(x.present(), y.present());
        assert_eq!(x.observed(), y.observed());
        for i in 0..x.n_patients() {
            if x.is_present(i) {
                assert_eq!(x.row(i), y.row(i));
            }
        }
    }
}

#[test]
fn cross_validation_ignores_job_count() {
    let synth = synth_cohort(&small_spec(), 8).unwrap();
    let spec = ModelSpec::desk(FusionMode::Intermediate, ["a", "b"]);
    let cfg = TrainConfig { max_epochs: 3, ..TrainConfig::desk() };
    let one = run_cv(&synth.cohort, &spec, &cfg, 3, 1).unwrap();
    let three = run_cv(&synth.cohort, &spec, &cfg, 3, 3).unwrap();
    for (x, y) in one.folds.iter().zip(&three.folds) {
        assert_eq!(x.model.to_bytes(), y.model.to_bytes());
        assert_eq!(x.test_scores, y.test_scores);
    }
    assert_eq!(one.harrell_c(), three.harrell_c());
}

fn censored_sample() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<bool>)> {
    (3usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-3.0f64..3.0, n),
            prop::collection::vec(1u32..20, n),
            prop::collection::vec(prop::bool::weighted(0.6), n),
        )
            .prop_map(|(s, t, mut e)| {
                e[0] = true;
                (s, t.into_iter().map(f64::from).collect(), e)
            })
    })
}

proptest! {
    #[test]
    fn concordance_depends_only_on_score_order((s, t, e) in censored_sample()) {
        let warped: Vec<f64> = s.iter().map(|x| x.exp() * 3.0 - 1.0).collect();
        if let (Ok(a), Ok(b)) = (harrell_c(&s, &t, &e), harrell_c(&warped, &t, &e)) {
            prop_assert_eq!(a, b);
        }
        if let (Ok(a), Ok(b)) = (uno_c(&s, &t, &e, None), uno_c(&warped, &t, &e, None)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn reversed_scores_mirror_harrell((s, t, e) in censored_sample()) {
        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        if let (Ok(a), Ok(b)) = (harrell_c(&s, &t, &e), harrell_c(&neg, &t, &e)) {
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cox_loss_is_permutation_invariant((s, t, e) in censored_sample(), rot in 0usize..40) {
        let n = s.len();
        let k = rot % n;
        let roll = |v: &[f64]| [&v[k..], &v[..k]].concat();
        let (s2, t2) = (roll(&s), roll(&t));
        let e2 = [&e[k..], &e[..k]].concat();
        let a = cox_nll(&BatchOutcome::new(&s, &t, &e).unwrap()).unwrap();
        let b = cox_nll(&BatchOutcome::new(&s2, &t2, &e2).unwrap()).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }
}
