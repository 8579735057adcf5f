//! CSV artifacts. Floats are written in shortest round-trip form so equal
//! values always print the same way.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use fusurv_core::cohort::FoldPlan;
use fusurv_core::metrics::{mean_sem, MetricsReport};
use fusurv_core::trainer::{EpochRecord, PooledScore};

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))
}

fn expect_header(rdr: &mut csv::Reader<std::fs::File>, path: &Path, want: &[&str]) -> Result<()> {
    let got: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if got != want {
        bail!("{}: expected header `{}`, got `{}`", path.display(), want.join(","), got.join(","));
    }
    Ok(())
}

/// One row per fold report plus a `mean` row carrying the SEM columns.
pub fn write_cv_report(path: &Path, reports: &[MetricsReport]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "fold", "n", "n_events", "harrell_c", "harrell_c_sem", "uno_c", "uno_c_sem", "td_auc", "td_auc_sem",
    ])?;
    for r in reports {
        let fold = r.fold.map_or_else(String::new, |f| f.to_string());
        w.write_record([
            fold,
            r.n.to_string(),
            r.n_events.to_string(),
            r.harrell_c.to_string(),
            String::new(),
            r.uno_c.to_string(),
            String::new(),
            r.td_auc_mean.to_string(),
            String::new(),
        ])?;
    }
    let summary = |f: fn(&MetricsReport) -> f64| mean_sem(&reports.iter().map(f).collect::<Vec<_>>());
    let (h, hs) = summary(|r| r.harrell_c);
    let (u, us) = summary(|r| r.uno_c);
    let (a, as_) = summary(|r| r.td_auc_mean);
    w.write_record([
        "mean".to_string(),
        reports.iter().map(|r| r.n).sum::<usize>().to_string(),
        reports.iter().map(|r| r.n_events).sum::<usize>().to_string(),
        h.to_string(),
        hs.to_string(),
        u.to_string(),
        us.to_string(),
        a.to_string(),
        as_.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

/// Per-fold time-dependent AUC at each evaluation horizon; empty where undefined.
pub fn write_td_auc(path: &Path, reports: &[MetricsReport]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["fold", "horizon_days", "auc"])?;
    for r in reports {
        let fold = r.fold.map_or_else(String::new, |f| f.to_string());
        for (t, v) in r.td_auc.horizons.iter().zip(&r.td_auc.values) {
            w.write_record([fold.clone(), t.to_string(), v.map_or_else(String::new, |v| v.to_string())])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_pooled(path: &Path, scores: &[PooledScore]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["patient_id", "fold", "score"])?;
    for s in scores {
        w.write_record([s.id.clone(), s.fold.to_string(), s.score.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pooled(path: &Path) -> Result<Vec<PooledScore>> {
    let mut rdr = reader(path)?;
    expect_header(&mut rdr, path, &["patient_id", "fold", "score"])?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |col: &str| anyhow!("{}: row {}: bad {col} `{}`", path.display(), i + 2, rec.iter().collect::<Vec<_>>().join(","));
        let score: f64 = rec.get(2).and_then(|s| s.trim().parse().ok()).ok_or_else(|| bad("score"))?;
        if !score.is_finite() {
            return Err(bad("score"));
        }
        out.push(PooledScore {
            id: rec.get(0).ok_or_else(|| bad("patient_id"))?.trim().to_string(),
            fold: rec.get(1).and_then(|s| s.trim().parse().ok()).ok_or_else(|| bad("fold"))?,
            score,
        });
    }
    Ok(out)
}

pub fn write_fold_plan(path: &Path, ids: &[String], plan: &FoldPlan) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["patient_id", "fold"])?;
    for (id, f) in ids.iter().zip(plan.assignments()) {
        w.write_record([id.clone(), f.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a fold plan and lines it up with `ids`; every id must appear.
pub fn read_fold_plan(path: &Path, ids: &[String], k: usize) -> Result<FoldPlan> {
    let mut rdr = reader(path)?;
    expect_header(&mut rdr, path, &["patient_id", "fold"])?;
    let mut by_id = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let fold: usize = rec
            .get(1)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| anyhow!("{}: bad fold cell", path.display()))?;
        by_id.insert(rec.get(0).unwrap_or_default().trim().to_string(), fold);
    }
    let assignments = ids
        .iter()
        .map(|id| by_id.get(id).copied().ok_or_else(|| anyhow!("patient `{id}` is not in {}", path.display())))
        .collect::<Result<Vec<_>>>()?;
    Ok(FoldPlan::from_assignments(k, assignments)?)
}

pub fn write_epoch_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["stage", "epoch", "train_loss", "val_loss", "lr"])?;
    for r in log {
        w.write_record([
            r.stage.clone(),
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_loss.to_string(),
            r.lr.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
