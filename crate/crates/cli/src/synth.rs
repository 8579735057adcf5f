use anyhow::{Context, Result};
use fusurv_core::cohort::{synth_cohort, write_cohort, SynthSpec};
use fusurv_core::kv::KvDocument;

use crate::{SynthArgs, RESOLVED_CONFIG};

/// Ground-truth linear predictor per patient, next to the cohort files.
pub const TRUE_RISK: &str = "true_risk.csv";

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let doc = match &args.spec {
        Some(p) => KvDocument::read(p).with_context(|| format!("reading {}", p.display()))?,
        None => SynthSpec::default().to_kv(),
    };
    let spec = SynthSpec::from_kv(&doc)?;
    let seed = match args.seed {
        Some(s) => s,
        None => doc.value_or("", "seed", 0u64)?,
    };
    let synth = synth_cohort(&spec, seed)?;
    write_cohort(&synth.cohort, &args.out)?;

    let mut resolved = spec.to_kv();
    resolved.set("", "seed", seed);
    resolved.write(&args.out.join(RESOLVED_CONFIG))?;

    let mut w = csv::Writer::from_path(args.out.join(TRUE_RISK))?;
    w.write_record(["patient_id", "true_risk"])?;
    for (id, r) in synth.cohort.ids().iter().zip(&synth.true_risk) {
        w.write_record([id.clone(), r.to_string()])?;
    }
    w.flush()?;
    log::info!("wrote {} patients to {}", synth.cohort.len(), args.out.display());
    Ok(())
}
