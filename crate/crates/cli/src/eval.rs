use anyhow::{Context, Result};
use fusurv_core::cohort::{Cohort, FoldPlan};
use fusurv_core::kv::KvDocument;
use fusurv_core::metrics::MetricsReport;
use fusurv_core::trainer::{score_checkpoint, PooledScore};

use crate::report::{write_cv_report, write_pooled, write_td_auc};
use crate::run::{TrainedRun, CV_REPORT, POOLED_SCORES, TD_AUC};
use crate::{EvalArgs, RESOLVED_CONFIG};

/// Test-fold scores and metrics of every fold model on `cohort`.
pub fn evaluate_folds(run: &TrainedRun, cohort: &Cohort, plan: &FoldPlan) -> Result<(Vec<MetricsReport>, Vec<PooledScore>)> {
    let mut reports = Vec::with_capacity(plan.k());
    let mut pooled = Vec::with_capacity(cohort.len());
    for (k, model) in run.models.iter().enumerate() {
        let rows = plan.fold_members(k);
        let scores = score_checkpoint(&run.config.model, model, cohort, &rows).with_context(|| format!("fold {k}"))?;
        let (t, e): (Vec<f64>, Vec<bool>) = rows.iter().map(|&i| (cohort.times()[i], cohort.events()[i])).unzip();
        reports.push(MetricsReport::compute(Some(k), &scores, &t, &e).with_context(|| format!("fold {k}"))?);
        pooled.extend(rows.iter().zip(&scores).map(|(&i, &s)| (i, k, s)));
    }
    pooled.sort_by_key(|&(i, _, _)| i);
    let pooled = pooled
        .into_iter()
        .map(|(i, fold, score)| PooledScore {
            id: cohort.ids()[i].clone(),
            fold,
            score,
        })
        .collect();
    Ok((reports, pooled))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let run = TrainedRun::open(&args.run)?;
    let cohort_path = args.cohort.clone().unwrap_or_else(|| run.config.cohort.clone());
    let cohort = run.cohort(Some(&cohort_path))?;
    let plan = run.plan(&cohort)?;
    let out = args.out.clone().unwrap_or_else(|| args.run.join("eval"));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let mut resolved = KvDocument::new();
    resolved.set("eval", "run", args.run.display());
    resolved.set("eval", "cohort", cohort_path.display());
    resolved.write(&out.join(RESOLVED_CONFIG))?;

    let (reports, pooled) = evaluate_folds(&run, &cohort, &plan)?;
    write_cv_report(&out.join(CV_REPORT), &reports)?;
    write_td_auc(&out.join(TD_AUC), &reports)?;
    write_pooled(&out.join(POOLED_SCORES), &pooled)?;
    Ok(())
}
