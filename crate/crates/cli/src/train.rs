use std::path::Path;

use anyhow::{Context, Result};
use fusurv_core::trainer::{run_cv, CvResult};

use crate::config::ExperimentConfig;
use crate::report::{write_cv_report, write_epoch_log, write_fold_plan, write_pooled, write_td_auc};
use crate::run::{
    epoch_log, fold_dir, load_cohort, model_checkpoint, unimodal_checkpoint, CHECKPOINTS, CV_REPORT, FOLD_PLAN, LOGS,
    MANIFEST, POOLED_SCORES, TD_AUC,
};
use crate::{TrainArgs, RESOLVED_CONFIG};

pub fn cmd_train(args: &TrainArgs) -> Result<CvResult> {
    let cfg = ExperimentConfig::resolve(args)?;
    train_experiment(&cfg, args.jobs, &args.out)
}

/// Runs cross-validation for `cfg` and writes the full run layout into `out`.
pub fn train_experiment(cfg: &ExperimentConfig, jobs: usize, out: &Path) -> Result<CvResult> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    cfg.to_kv().write(&out.join(RESOLVED_CONFIG))?;
    let cohort = load_cohort(&cfg.cohort)?;
    let cv = run_cv(&cohort, &cfg.model, &cfg.train, cfg.folds, jobs)?;

    let reports: Vec<_> = cv.folds.iter().map(|f| f.report.clone()).collect();
    write_cv_report(&out.join(CV_REPORT), &reports)?;
    write_td_auc(&out.join(TD_AUC), &reports)?;
    write_pooled(&out.join(POOLED_SCORES), &cv.pooled(&cohort))?;
    write_fold_plan(&out.join(FOLD_PLAN), cohort.ids(), &cv.plan)?;

    let mut manifest = cfg.model.to_kv();
    std::fs::create_dir_all(out.join(LOGS))?;
    for f in &cv.folds {
        std::fs::create_dir_all(fold_dir(out, f.fold))?;
        let ckpt = out.join(CHECKPOINTS);
        manifest.set(CHECKPOINTS, &format!("fold_{}", f.fold), model_checkpoint(f.fold));
        f.model.save(&ckpt.join(model_checkpoint(f.fold)))?;
        for (m, store) in &f.unimodal {
            let rel = unimodal_checkpoint(f.fold, m);
            manifest.set(CHECKPOINTS, &format!("fold_{}.unimodal.{m}", f.fold), &rel);
            store.save(&ckpt.join(rel))?;
        }
        write_epoch_log(&epoch_log(out, f.fold), &f.log)?;
    }
    manifest.write(&out.join(CHECKPOINTS).join(MANIFEST))?;

    let h = cv.harrell_c();
    log::info!("{} {:?}: harrell {:.4} +/- {:.4}", cfg.model.mode, cfg.model.modalities, h.mean, h.sem);
    Ok(cv)
}
