//! Layout of a `train` output directory and loading it back.
//!
//! ```text
//! <out>/config.resolved          resolved experiment config
//! <out>/cv_report.csv            per-fold metrics plus a mean/SEM row
//! <out>/td_auc.csv               per-fold td-AUC at each horizon
//! <out>/pooled_scores.csv        every patient's test-fold score
//! <out>/fold_plan.csv            fold assignment per patient
//! <out>/checkpoints/manifest     model spec plus checkpoint paths
//! <out>/checkpoints/fold_<k>/model.ckpt
//! <out>/checkpoints/fold_<k>/unimodal_<m>.ckpt
//! <out>/logs/fold_<k>.csv        epoch log of every training stage
//! ```

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use fusurv_core::cohort::{load_cohort_dir, Cohort, FoldPlan};
use fusurv_core::kv::KvDocument;
use fusurv_core::params::ParamStore;

use crate::config::{ExperimentConfig, Preset};
use crate::report::read_fold_plan;
use crate::RESOLVED_CONFIG;

pub const CV_REPORT: &str = "cv_report.csv";
pub const TD_AUC: &str = "td_auc.csv";
pub const POOLED_SCORES: &str = "pooled_scores.csv";
pub const FOLD_PLAN: &str = "fold_plan.csv";
pub const CHECKPOINTS: &str = "checkpoints";
pub const MANIFEST: &str = "manifest";
pub const LOGS: &str = "logs";

pub fn fold_dir(run: &Path, fold: usize) -> PathBuf {
    run.join(CHECKPOINTS).join(format!("fold_{fold}"))
}

pub fn model_checkpoint(fold: usize) -> String {
    format!("fold_{fold}/model.ckpt")
}

pub fn unimodal_checkpoint(fold: usize, modality: &str) -> String {
    format!("fold_{fold}/unimodal_{modality}.ckpt")
}

pub fn epoch_log(run: &Path, fold: usize) -> PathBuf {
    run.join(LOGS).join(format!("fold_{fold}.csv"))
}

pub fn load_cohort(path: &Path) -> Result<Cohort> {
    load_cohort_dir(path).with_context(|| format!("loading cohort {}", path.display()))
}

/// A finished run: its config and one fused checkpoint per fold.
#[derive(Debug)]
pub struct TrainedRun {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub models: Vec<ParamStore>,
}

impl TrainedRun {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(RESOLVED_CONFIG);
        let doc = KvDocument::read(&path).with_context(|| format!("reading {}", path.display()))?;
        // A resolved config sets every key, so the preset is never consulted.
        let config = ExperimentConfig::from_kv(&doc, Preset::Desk)?;
        let manifest_path = dir.join(CHECKPOINTS).join(MANIFEST);
        let manifest =
            KvDocument::read(&manifest_path).with_context(|| format!("reading {}", manifest_path.display()))?;
        let models = (0..config.folds)
            .map(|k| {
                let rel = manifest
                    .get(CHECKPOINTS, &format!("fold_{k}"))
                    .ok_or_else(|| anyhow!("{} lists no checkpoint for fold {k}", manifest_path.display()))?;
                let p = dir.join(CHECKPOINTS).join(rel);
                ParamStore::load(&p).with_context(|| format!("loading {}", p.display()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainedRun {
            dir: dir.to_path_buf(),
            config,
            models,
        })
    }

    /// The run's own cohort unless `other` is given.
    pub fn cohort(&self, other: Option<&Path>) -> Result<Cohort> {
        load_cohort(other.unwrap_or(&self.config.cohort))
    }

    /// Fold assignment of `cohort`'s patients, matched by id.
    pub fn plan(&self, cohort: &Cohort) -> Result<FoldPlan> {
        read_fold_plan(&self.dir.join(FOLD_PLAN), cohort.ids(), self.config.folds)
    }
}
