use anyhow::{bail, Context, Result};
use fusurv_core::cohort::apply_missingness;
use fusurv_core::kv::KvDocument;
use fusurv_core::metrics::{mean_sem, MetricsReport};
use fusurv_core::trainer::{derive_seed, score_checkpoint};

use crate::run::TrainedRun;
use crate::{SweepArgs, RESOLVED_CONFIG};

pub const SWEEP: &str = "sweep.csv";
pub const SWEEP_FOLDS: &str = "sweep_folds.csv";

/// Missing fraction to impose on one test fold so that the pooled fraction
/// over all folds is `target`. Each fold moves the same share of its remaining
/// present patients, which leaves every fold untouched at `target = baseline`.
pub fn fold_target(target: f64, baseline: f64, fold_baseline: f64) -> f64 {
    if baseline >= 1.0 {
        return 1.0;
    }
    let share = ((target - baseline) / (1.0 - baseline)).clamp(0.0, 1.0);
    (fold_baseline + share * (1.0 - fold_baseline)).min(1.0)
}

pub fn validate_grid(grid: &[f64], baseline: f64) -> Result<()> {
    if grid.is_empty() {
        bail!("empty missingness grid");
    }
    if let Some(f) = grid.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        bail!("missing fraction {f} outside [0, 1]");
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        bail!("missingness grid must be strictly ascending");
    }
    if grid[0] + 1e-12 < baseline {
        bail!("missing fraction {} is below the cohort's baseline {baseline}", grid[0]);
    }
    Ok(())
}

pub fn cmd_sweep_missing(args: &SweepArgs) -> Result<()> {
    let run = TrainedRun::open(&args.run)?;
    let spec = &run.config.model;
    let m = args.modality.as_str();
    if !spec.modalities.iter().any(|x| x == m) {
        bail!("modality `{m}` is not an input of the {} model", spec.mode);
    }
    let cohort_path = args.cohort.clone().unwrap_or_else(|| run.config.cohort.clone());
    let cohort = run.cohort(Some(&cohort_path))?;
    let plan = run.plan(&cohort)?;
    let baseline = cohort.require_block(m)?.missing_fraction();
    validate_grid(&args.grid, baseline)?;
    let seed = args.seed.unwrap_or(run.config.train.seed);

    let out = args.out.clone().unwrap_or_else(|| args.run.join(format!("sweep_{m}")));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut resolved = KvDocument::new();
    resolved.set("sweep", "run", args.run.display());
    resolved.set("sweep", "cohort", cohort_path.display());
    resolved.set("sweep", "modality", m);
    resolved.set("sweep", "grid", args.grid.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
    resolved.set("sweep", "seed", seed);
    resolved.write(&out.join(RESOLVED_CONFIG))?;

    let folds: Vec<_> = (0..plan.k())
        .map(|k| {
            let rows = plan.fold_members(k);
            cohort.subset(&rows).map(|c| (k, c))
        })
        .collect::<fusurv_core::Result<_>>()?;

    let mut summary = csv::Writer::from_path(out.join(SWEEP))?;
    summary.write_record([
        "fraction", "realized_missing", "harrell_c", "harrell_c_sem", "uno_c", "uno_c_sem", "td_auc", "td_auc_sem",
    ])?;
    let mut detail = csv::Writer::from_path(out.join(SWEEP_FOLDS))?;
    detail.write_record(["fraction", "fold", "realized_missing", "harrell_c", "uno_c", "td_auc"])?;
    for &f in &args.grid {
        let mut reports = Vec::with_capacity(folds.len());
        let mut missing = 0usize;
        for (k, sub) in &folds {
            let fold_base = sub.require_block(m)?.missing_fraction();
            // One seed per fold across the grid keeps the masks nested.
            let masked = apply_missingness(sub, m, fold_target(f, baseline, fold_base), derive_seed(seed, *k as u64))?;
            let block = masked.require_block(m)?;
            let fold_missing = block.present().iter().filter(|&&p| !p).count();
            missing += fold_missing;
            let rows: Vec<usize> = (0..masked.len()).collect();
            let scores = score_checkpoint(spec, &run.models[*k], &masked, &rows).with_context(|| format!("fold {k}"))?;
            let r = MetricsReport::compute(Some(*k), &scores, masked.times(), masked.events())?;
            detail.write_record([
                f.to_string(),
                k.to_string(),
                (fold_missing as f64 / masked.len() as f64).to_string(),
                r.harrell_c.to_string(),
                r.uno_c.to_string(),
                r.td_auc_mean.to_string(),
            ])?;
            reports.push(r);
        }
        let stat = |g: fn(&MetricsReport) -> f64| mean_sem(&reports.iter().map(g).collect::<Vec<_>>());
        let (h, hs) = stat(|r| r.harrell_c);
        let (u, us) = stat(|r| r.uno_c);
        let (a, as_) = stat(|r| r.td_auc_mean);
        summary.write_record([
            f.to_string(),
            (missing as f64 / cohort.len() as f64).to_string(),
            h.to_string(),
            hs.to_string(),
            u.to_string(),
            us.to_string(),
            a.to_string(),
            as_.to_string(),
        ])?;
        log::info!("{m} missing {f}: harrell {h:.4} +/- {hs:.4}");
    }
    summary.flush()?;
    detail.flush()?;
    Ok(())
}
