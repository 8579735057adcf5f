use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use fusurv_core::cohort::{read_outcomes, OutcomeTable};
use fusurv_core::kv::KvDocument;
use fusurv_core::metrics::{assign_groups, km_estimate, logrank_test, optimal_threshold, split_by_group, RiskCutoff};

use crate::report::read_pooled;
use crate::{StratifyArgs, RESOLVED_CONFIG};

pub const RISK_GROUPS: &str = "risk_groups.csv";
pub const KM_CURVES: &str = "km_curves.csv";
pub const LOGRANK_REPORT: &str = "logrank_report.csv";
/// Endpoint name of the outcome file the cutoff is chosen on.
pub const PRIMARY_ENDPOINT: &str = "os";

fn parse_endpoint(raw: &str) -> Result<(String, PathBuf)> {
    let (name, path) = raw.split_once('=').ok_or_else(|| anyhow!("--endpoint {raw}: expected NAME=PATH"))?;
    let name = name.trim();
    if name.is_empty() || name == PRIMARY_ENDPOINT {
        bail!("--endpoint {raw}: name must be non-empty and not `{PRIMARY_ENDPOINT}`");
    }
    Ok((name.to_string(), PathBuf::from(path.trim())))
}

fn load(path: &Path) -> Result<OutcomeTable> {
    read_outcomes(path).with_context(|| format!("reading {}", path.display()))
}

/// Scores in the order of `table`; every patient there needs one.
fn align(table: &OutcomeTable, scores: &HashMap<&str, f64>, origin: &Path) -> Result<Vec<f64>> {
    table
        .ids
        .iter()
        .map(|id| scores.get(id.as_str()).copied().ok_or_else(|| anyhow!("no score for patient `{id}` of {}", origin.display())))
        .collect()
}

pub fn cmd_stratify(args: &StratifyArgs) -> Result<()> {
    let endpoints = args.endpoints.iter().map(|e| parse_endpoint(e)).collect::<Result<Vec<_>>>()?;
    let pooled = read_pooled(&args.scores)?;
    let mut scores = HashMap::new();
    for p in &pooled {
        if scores.insert(p.id.as_str(), p.score).is_some() {
            bail!("{}: duplicate patient `{}`", args.scores.display(), p.id);
        }
    }
    let os = load(&args.outcome)?;
    let os_scores = align(&os, &scores, &args.outcome)?;
    let cutoff = optimal_threshold(&os_scores, &os.times, &os.events)?;

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut resolved = KvDocument::new();
    resolved.set("stratify", "scores", args.scores.display());
    resolved.set("stratify", "outcome", args.outcome.display());
    for (name, path) in &endpoints {
        resolved.set("stratify", &format!("endpoint.{name}"), path.display());
    }
    resolved.write(&args.out.join(RESOLVED_CONFIG))?;

    let mut groups_w = csv::Writer::from_path(args.out.join(RISK_GROUPS))?;
    groups_w.write_record(["patient_id", "score", "group"])?;
    for ((id, s), g) in os.ids.iter().zip(&os_scores).zip(assign_groups(&os_scores, cutoff.value)) {
        groups_w.write_record([id.clone(), s.to_string(), g.label().to_string()])?;
    }
    groups_w.flush()?;

    let mut km_w = csv::Writer::from_path(args.out.join(KM_CURVES))?;
    km_w.write_record(["endpoint", "group", "time_days", "survival", "at_risk", "events"])?;
    let mut lr_w = csv::Writer::from_path(args.out.join(LOGRANK_REPORT))?;
    lr_w.write_record([
        "endpoint",
        "cutoff",
        "cutoff_percentile",
        "n_low",
        "n_high",
        "events_low",
        "events_high",
        "chi2",
        "p_value",
    ])?;
    let mut tables = vec![(PRIMARY_ENDPOINT.to_string(), os, os_scores, args.outcome.clone())];
    for (name, path) in endpoints {
        let t = load(&path)?;
        let s = align(&t, &scores, &path)?;
        tables.push((name, t, s, path));
    }
    for (name, table, s, path) in &tables {
        write_endpoint(&mut km_w, &mut lr_w, name, table, s, &cutoff).with_context(|| format!("endpoint `{name}` ({})", path.display()))?;
    }
    km_w.flush()?;
    lr_w.flush()?;
    log::info!("cutoff {} at percentile {}: p = {}", cutoff.value, cutoff.percentile, cutoff.logrank.p_value);
    Ok(())
}

fn write_endpoint(
    km_w: &mut csv::Writer<std::fs::File>,
    lr_w: &mut csv::Writer<std::fs::File>,
    name: &str,
    table: &OutcomeTable,
    scores: &[f64],
    cutoff: &RiskCutoff,
) -> Result<()> {
    let groups = assign_groups(scores, cutoff.value);
    let ((tl, el), (th, eh)) = split_by_group(&groups, &table.times, &table.events);
    if tl.is_empty() || th.is_empty() {
        bail!("every patient falls on one side of the cutoff {}", cutoff.value);
    }
    for (label, t, e) in [("low", &tl, &el), ("high", &th, &eh)] {
        let curve = km_estimate(t, e)?;
        km_w.write_record([name, label, "0", "1", &t.len().to_string(), "0"])?;
        for j in 0..curve.times.len() {
            km_w.write_record([
                name.to_string(),
                label.to_string(),
                curve.times[j].to_string(),
                curve.survival[j].to_string(),
                curve.at_risk[j].to_string(),
                curve.events[j].to_string(),
            ])?;
        }
    }
    let lr = logrank_test(&tl, &el, &th, &eh)?;
    let count = |e: &[bool]| e.iter().filter(|&&x| x).count().to_string();
    lr_w.write_record([
        name.to_string(),
        cutoff.value.to_string(),
        cutoff.percentile.to_string(),
        tl.len().to_string(),
        th.len().to_string(),
        count(&el),
        count(&eh),
        lr.chi2.to_string(),
        format!("{:?}", lr.p_value),
    ])?;
    Ok(())
}
