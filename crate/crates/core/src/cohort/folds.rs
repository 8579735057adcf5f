use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Cohort;
use crate::error::{Error, Result};

/// Fold assignment for k-fold cross-validation stratified by event status.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    k: usize,
    assignments: Vec<usize>,
}

/// Fold roles for one iteration of the rotation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldRoles {
    pub test: usize,
    pub validation: usize,
    pub train: Vec<usize>,
}

/// Shuffles each stratum and deals it round-robin over the folds. Censored
/// patients continue where the events stopped so fold sizes stay within one.
pub fn stratified_kfold(cohort: &Cohort, k: usize, seed: u64) -> Result<FoldPlan> {
    stratified_assign(cohort.events(), k, seed)
}

pub(crate) fn stratified_assign(events: &[bool], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::config(format!("fold count must be at least 2, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ev: Vec<usize> = (0..events.len()).filter(|&i| events[i]).collect();
    let mut ce: Vec<usize> = (0..events.len()).filter(|&i| !events[i]).collect();
    for (label, s) in [("event", &ev), ("censored", &ce)] {
        if s.len() < k {
            return Err(Error::config(format!(
                "{label} stratum has {} patients, fewer than k = {k}",
                s.len()
            )));
        }
    }
    ev.shuffle(&mut rng);
    ce.shuffle(&mut rng);
    let mut assignments = vec![0; events.len()];
    for (slot, &i) in ev.iter().chain(ce.iter()).enumerate() {
        assignments[i] = slot % k;
    }
    Ok(FoldPlan { k, assignments })
}

impl FoldPlan {
    pub fn from_assignments(k: usize, assignments: Vec<usize>) -> Result<Self> {
        if k < 2 {
            return Err(Error::config("fold count must be at least 2"));
        }
        if let Some(a) = assignments.iter().find(|&&a| a >= k) {
            return Err(Error::config(format!("fold index {a} out of range for k = {k}")));
        }
        Ok(FoldPlan { k, assignments })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn fold_members(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == fold).collect()
    }

    pub fn members_of(&self, folds: &[usize]) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| folds.contains(&self.assignments[i]))
            .collect()
    }

    /// Iteration `r` tests on fold `r` and validates on fold `r+1 mod k`.
    /// With k = 2 there is no training fold left, so the validation fold
    /// doubles as training data.
    pub fn roles(&self, iteration: usize) -> FoldRoles {
        let test = iteration % self.k;
        let validation = (test + 1) % self.k;
        let mut train: Vec<usize> = (0..self.k).filter(|&f| f != test && f != validation).collect();
        if train.is_empty() {
            train.push(validation);
        }
        FoldRoles {
            test,
            validation,
            train,
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn counts(plan: &FoldPlan, events: &[bool]) -> Vec<(usize, usize)> {
        (0..plan.k())
            .map(|f| {
                let m = plan.fold_members(f);
                (m.iter().filter(|&&i| events[i]).count(), m.len())
            })
            .collect()
    }

    #[test]
    fn exact_divisibility() {
        let events: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
        let plan = stratified_assign(&events, 5, 1).unwrap();
        for (e, n) in counts(&plan, &events) {
            assert_eq!((e, n), (1, 2));
        }
    }

    #[test]
    fn reference_sized_cohort_balances_events() {
        let events: Vec<bool> = (0..179).map(|i| i < 99).collect();
        for seed in 0..10 {
            let plan = stratified_assign(&events, 5, seed).unwrap();
            for (e, n) in counts(&plan, &events) {
                assert!(e == 19 || e == 20, "{e}");
                assert!(n == 35 || n == 36, "{n}");
            }
        }
    }

    #[test]
    fn small_stratum_is_rejected() {
        let mut events = vec![false; 10];
        events[0] = true;
        assert!(stratified_assign(&events, 2, 0).is_err());
        assert!(stratified_assign(&[true, false], 1, 0).is_err());
    }

    #[test]
    fn roles_rotate_test_fold() {
        let plan = FoldPlan::from_assignments(5, (0..10).map(|i| i % 5).collect()).unwrap();
        let tests: Vec<usize> = (0..5).map(|r| plan.roles(r).test).collect();
        assert_eq!(tests, vec![0, 1, 2, 3, 4]);
        let r = plan.roles(4);
        assert_eq!((r.validation, r.train.clone()), (0, vec![1, 2, 3]));
        let two = FoldPlan::from_assignments(2, vec![0, 1]).unwrap().roles(0);
        assert_eq!(two.train, vec![1]);
    }

    proptest! {
        #[test]
        fn folds_partition_and_balance(
            events in prop::collection::vec(any::<bool>(), 10..200),
            k in 2usize..7,
            seed in any::<u64>(),
        ) {
            let ne = events.iter().filter(|&&e| e).count();
            prop_assume!(ne >= k && events.len() - ne >= k);
            let plan = stratified_assign(&events, k, seed).unwrap();
            let c = counts(&plan, &events);
            prop_assert_eq!(c.iter().map(|x| x.1).sum::<usize>(), events.len());
            let global = ne as f64 / events.len() as f64;
            for (e, n) in c {
                prop_assert!((e as f64 - global * n as f64).abs() <= 1.0 + 1e-9);
            }
            prop_assert_eq!(plan.clone(), stratified_assign(&events, k, seed).unwrap());
        }
    }
}
