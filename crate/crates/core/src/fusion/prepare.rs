use std::collections::BTreeMap;

use crate::cohort::{Cohort, ColumnStats, TabularTransform};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::params::ParamStore;

use super::ModelSpec;

/// A cohort whose configured blocks were standardized with statistics
/// fitted on one fold's training rows.
#[derive(Debug, Clone)]
pub struct PreparedCohort {
    pub cohort: Cohort,
    pub transforms: BTreeMap<String, TabularTransform>,
}

impl PreparedCohort {
    /// Fits every configured block on `train_rows`.
    pub fn fit(cohort: &Cohort, spec: &ModelSpec, train_rows: &[usize]) -> Result<Self> {
        let mut transforms = BTreeMap::new();
        for m in &spec.modalities {
            let t = TabularTransform::fit(cohort.require_block(m)?, train_rows, spec.preprocess)?;
            transforms.insert(m.clone(), t);
        }
        Self::apply(cohort, transforms)
    }

    /// Reapplies stored transforms, e.g. to a cohort with extra missingness.
    pub fn apply(cohort: &Cohort, transforms: BTreeMap<String, TabularTransform>) -> Result<Self> {
        let mut out = cohort.clone();
        for (m, t) in &transforms {
            out = out.with_block(t.apply(cohort.require_block(m)?)?)?;
        }
        Ok(PreparedCohort {
            cohort: out,
            transforms,
        })
    }
}

pub fn prepare_cohort(cohort: &Cohort, spec: &ModelSpec, train_rows: &[usize]) -> Result<PreparedCohort> {
    PreparedCohort::fit(cohort, spec, train_rows)
}

fn stat_name(m: &str, what: &str) -> String {
    format!("pre.{m}.{what}")
}

/// Records transforms as frozen `pre.<m>.*` parameters so a checkpoint
/// carries its own preprocessing.
pub fn store_transforms(transforms: &BTreeMap<String, TabularTransform>, store: &mut ParamStore) {
    for (m, t) in transforms {
        let w = t.columns().len();
        let mut mean = vec![0.0; w];
        let mut std = vec![1.0; w];
        let mut scaled = vec![0.0; w];
        for (j, c) in t.columns().iter().enumerate() {
            if let Some(s) = c {
                mean[j] = s.mean;
                std[j] = s.std;
                scaled[j] = 1.0;
            }
        }
        let row = |v: Vec<f64>| Tensor::new([1, w], v).expect("row of block width");
        store.insert(stat_name(m, "mean"), row(mean), false);
        store.insert(stat_name(m, "std"), row(std), false);
        store.insert(stat_name(m, "scaled"), row(scaled), false);
        let relabel = if t.relabels_categorical() { 1.0 } else { 0.0 };
        store.insert(stat_name(m, "relabel"), Tensor::scalar(relabel), false);
    }
}

pub fn load_transforms(store: &ParamStore, modalities: &[String]) -> Result<BTreeMap<String, TabularTransform>> {
    let mut out = BTreeMap::new();
    for m in modalities {
        let get = |what: &str| {
            store.value(&stat_name(m, what)).map_err(|_| {
                Error::contract(format!("checkpoint has no preprocessing statistics for `{m}`"))
            })
        };
        let (mean, std, scaled) = (get("mean")?, get("std")?, get("scaled")?);
        let relabel = get("relabel")?.item()? != 0.0;
        let columns = (0..mean.numel())
            .map(|j| {
                (scaled.data()[j] != 0.0).then(|| ColumnStats {
                    mean: mean.data()[j],
                    std: std.data()[j],
                })
            })
            .collect();
        out.insert(m.clone(), TabularTransform::from_stats(m.clone(), columns, relabel));
    }
    Ok(out)
}
