use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Cohort;
use crate::error::{Error, Result};

/// Masks whole-modality rows of randomly chosen present patients until the
/// missing fraction of `modality` reaches `target` (ceiling to whole
/// patients). Other modalities are left alone.
pub fn apply_missingness(cohort: &Cohort, modality: &str, target: f64, seed: u64) -> Result<Cohort> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::config(format!("missing fraction {target} outside [0, 1]")));
    }
    let block = cohort.require_block(modality)?;
    let n = cohort.len();
    let current = n - block.present().iter().filter(|&&p| p).count();
    let baseline = current as f64 / n as f64;
    if target + 1e-12 < baseline {
        return Err(Error::contract(format!(
            "cannot lower `{modality}` missingness from {baseline:.4} to {target:.4}"
        )));
    }
    let wanted = ((target * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let extra = wanted.saturating_sub(current);
    if extra == 0 {
        return Ok(cohort.clone());
    }
    let mut present: Vec<usize> = (0..n).filter(|&i| block.is_present(i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    present.shuffle(&mut rng);
    let mut masked = block.clone();
    for &i in &present[..extra] {
        masked.mask_patient(i);
    }
    cohort.with_block(masked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{FeatureKind, ModalityBlock};

    fn cohort(n: usize, wsi_present: usize) -> Cohort {
        let mk = |name: &str, p: usize| {
            ModalityBlock::new(
                name,
                vec![FeatureKind::Numerical; 2],
                (0..2 * n).map(|v| v as f64).collect(),
                vec![true; 2 * n],
                (0..n).map(|i| i < p).collect(),
            )
            .unwrap()
        };
        Cohort::new(
            (0..n).map(|i| i.to_string()).collect(),
            vec![1.0; n],
            vec![true; n],
            vec![mk("ct", n), mk("wsi", wsi_present)],
        )
        .unwrap()
    }

    #[test]
    fn full_masking_from_baseline() {
        let c = cohort(100, 36);
        let out = apply_missingness(&c, "wsi", 1.0, 3).unwrap();
        assert!(out.block("wsi").unwrap().present().iter().all(|&p| !p));
        assert_eq!(out.block("ct"), c.block("ct"));
        assert_eq!(c.block("wsi").unwrap().missing_fraction(), 0.64);
    }

    #[test]
    fn target_at_baseline_is_noop() {
        let c = cohort(100, 36);
        assert_eq!(apply_missingness(&c, "wsi", 0.64, 0).unwrap(), c);
    }

    #[test]
    fn lowering_is_rejected() {
        let c = cohort(100, 36);
        assert!(matches!(apply_missingness(&c, "wsi", 0.5, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn masking_is_monotone_and_ceils() {
        let c = cohort(100, 36);
        for target in [0.645, 0.7, 0.83, 0.99] {
            let out = apply_missingness(&c, "wsi", target, 11).unwrap();
            let (a, b) = (c.block("wsi").unwrap(), out.block("wsi").unwrap());
            assert!(b.missing_fraction() >= target);
            assert!(b.missing_fraction() < target + 0.01 + 1e-12);
            for (x, y) in a.observed().iter().zip(b.observed()) {
                assert!(*x || !*y);
            }
        }
    }
}
