//! Experiment configuration for `train`, resolved from a preset, an optional
//! config file, `--set` overrides and flags, in that order of precedence.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::ValueEnum;
use fusurv_core::fusion::{FusionMode, ModelSpec};
use fusurv_core::kv::KvDocument;
use fusurv_core::trainer::TrainConfig;

use crate::TrainArgs;

pub const EXPERIMENT_SECTION: &str = "experiment";
pub const DEFAULT_FOLDS: usize = 5;

const KNOWN_SECTIONS: [&str; 7] = [
    EXPERIMENT_SECTION,
    "model",
    "preprocess",
    "encoder",
    "unimodal_head",
    "fused_head",
    TrainConfig::SECTION,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Small encoders and a short schedule, sized for synthetic cohorts on a laptop CPU.
    Desk,
    /// Reference architecture and the long low-rate schedule.
    Reference,
}

impl Preset {
    pub fn model(self, mode: FusionMode, modalities: &[String]) -> ModelSpec {
        match self {
            Preset::Desk => ModelSpec::desk(mode, modalities.iter().cloned()),
            Preset::Reference => ModelSpec::new(mode, modalities.iter().cloned()),
        }
    }

    pub fn train(self) -> TrainConfig {
        match self {
            Preset::Desk => TrainConfig::desk(),
            Preset::Reference => TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub cohort: PathBuf,
    pub folds: usize,
    pub model: ModelSpec,
    pub train: TrainConfig,
}

fn split_list(raw: &str) -> Vec<String> {
    raw.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

impl ExperimentConfig {
    pub fn to_kv(&self) -> KvDocument {
        let mut doc = self.model.to_kv();
        doc.set(EXPERIMENT_SECTION, "cohort", self.cohort.display());
        doc.set(EXPERIMENT_SECTION, "folds", self.folds);
        self.train.to_kv(&mut doc);
        doc
    }

    /// Builds a config from user input layered over `preset`. Keys that do not
    /// belong to any setting are rejected rather than ignored.
    pub fn from_kv(doc: &KvDocument, preset: Preset) -> Result<Self> {
        if let Some(s) = doc.section_names().find(|s| !KNOWN_SECTIONS.contains(s)) {
            bail!("unknown config section [{s}]");
        }
        let mode: FusionMode = doc
            .get("model", "mode")
            .ok_or_else(|| anyhow!("no model mode given (--mode or [model] mode)"))?
            .parse()?;
        let modalities = split_list(
            doc.get("model", "modalities")
                .ok_or_else(|| anyhow!("no modalities given (--modalities or [model] modalities)"))?,
        );
        let mut layered = preset.model(mode, &modalities).to_kv();
        layered.merge(doc);
        let model = ModelSpec::from_kv(&layered)?;
        model.validate()?;
        let train = TrainConfig::from_kv(doc, preset.train())?;
        let cohort = doc
            .get(EXPERIMENT_SECTION, "cohort")
            .ok_or_else(|| anyhow!("no cohort given (--cohort or [experiment] cohort)"))?;
        let folds = doc.value_or(EXPERIMENT_SECTION, "folds", DEFAULT_FOLDS)?;
        if folds < 2 {
            bail!("need at least 2 folds, got {folds}");
        }
        let cfg = ExperimentConfig {
            cohort: PathBuf::from(cohort),
            folds,
            model,
            train,
        };
        let resolved = cfg.to_kv();
        for s in doc.section_names() {
            for key in doc.section(s).into_iter().flat_map(|e| e.keys()) {
                if resolved.get(s, key).is_none() {
                    bail!("unknown config key [{s}] {key}");
                }
            }
        }
        Ok(cfg)
    }

    pub fn resolve(args: &TrainArgs) -> Result<Self> {
        let mut doc = match &args.config {
            Some(path) => KvDocument::read(path).with_context(|| format!("reading {}", path.display()))?,
            None => KvDocument::new(),
        };
        for o in &args.overrides {
            let (key, value) = o.split_once('=').ok_or_else(|| anyhow!("--set {o}: expected SECTION.KEY=VALUE"))?;
            let (section, key) = key
                .trim()
                .split_once('.')
                .ok_or_else(|| anyhow!("--set {o}: key needs a section prefix"))?;
            doc.set(section, key, value.trim());
        }
        if let Some(c) = &args.cohort {
            doc.set(EXPERIMENT_SECTION, "cohort", c.display());
        }
        if let Some(m) = &args.mode {
            doc.set("model", "mode", m);
        }
        if let Some(m) = &args.modalities {
            doc.set("model", "modalities", split_list(m).join(","));
        }
        if let Some(k) = args.folds {
            doc.set(EXPERIMENT_SECTION, "folds", k);
        }
        if let Some(s) = args.seed {
            doc.set(TrainConfig::SECTION, "seed", s);
        }
        Self::from_kv(&doc, args.preset)
    }
}
