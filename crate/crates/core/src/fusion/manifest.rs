use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::cohort::PreprocessOptions;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::kv::KvDocument;
use crate::odst::OdstConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusionMode {
    Unimodal,
    Early,
    Intermediate,
    Late,
    LinearCph,
}

impl FusionMode {
    pub const ALL: [FusionMode; 5] = [
        FusionMode::Unimodal,
        FusionMode::Early,
        FusionMode::Intermediate,
        FusionMode::Late,
        FusionMode::LinearCph,
    ];

    pub fn is_multimodal(self) -> bool {
        matches!(self, FusionMode::Early | FusionMode::Intermediate | FusionMode::Late)
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Unimodal => "unimodal",
            FusionMode::Early => "early",
            FusionMode::Intermediate => "intermediate",
            FusionMode::Late => "late",
            FusionMode::LinearCph => "linear-cph",
        })
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionMode::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown fusion mode `{s}` (expected unimodal, early, intermediate, late or linear-cph)"
                ))
            })
    }
}

/// Everything needed to rebuild a model's architecture, independent of data.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub mode: FusionMode,
    /// Sorted, unique.
    pub modalities: Vec<String>,
    pub encoder: EncoderConfig,
    /// Per-modality override of the numerical token group size.
    pub groups: BTreeMap<String, usize>,
    pub unimodal_head: OdstConfig,
    pub fused_head: OdstConfig,
    pub preprocess: PreprocessOptions,
}

impl ModelSpec {
    pub fn new(mode: FusionMode, modalities: impl IntoIterator<Item = impl Into<String>>) -> Self {
        let mut modalities: Vec<String> = modalities.into_iter().map(Into::into).collect();
        modalities.sort();
        modalities.dedup();
        ModelSpec {
            mode,
            modalities,
            encoder: EncoderConfig::default(),
            groups: BTreeMap::new(),
            unimodal_head: OdstConfig::unimodal(),
            fused_head: OdstConfig::multimodal(),
            preprocess: PreprocessOptions {
                standardize_categorical: mode == FusionMode::LinearCph,
                ..PreprocessOptions::default()
            },
        }
    }

    /// Small networks for low-dimensional synthetic blocks on a CPU budget;
    /// pairs with [`crate::trainer::TrainConfig::desk`].
    pub fn desk(mode: FusionMode, modalities: impl IntoIterator<Item = impl Into<String>>) -> Self {
        let head = OdstConfig {
            n_trees: 8,
            depth: 3,
            out_dim: 1,
        };
        ModelSpec {
            encoder: EncoderConfig {
                d_model: 8,
                n_heads: 2,
                n_layers: 1,
                ff_dim: 16,
                group: 2,
            },
            unimodal_head: head,
            fused_head: head,
            ..ModelSpec::new(mode, modalities)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.modalities.len();
        match self.mode {
            FusionMode::Unimodal | FusionMode::LinearCph if n != 1 => {
                return Err(Error::config(format!("{} model takes exactly one modality, got {n}", self.mode)));
            }
            FusionMode::Late if n < 2 => {
                return Err(Error::config(format!("late fusion needs at least two modalities, got {n}")));
            }
            _ if n == 0 => return Err(Error::config(format!("{} model needs a modality", self.mode))),
            _ => {}
        }
        if self.modalities.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::contract("modalities must be sorted and unique"));
        }
        self.encoder.validate()?;
        for m in self.groups.keys() {
            self.encoder_config(m).validate()?;
        }
        self.unimodal_head.validate()?;
        self.fused_head.validate()
    }

    pub fn encoder_config(&self, modality: &str) -> EncoderConfig {
        EncoderConfig {
            group: self.groups.get(modality).copied().unwrap_or(self.encoder.group),
            ..self.encoder
        }
    }

    pub fn to_kv(&self) -> KvDocument {
        let mut doc = KvDocument::new();
        doc.set("model", "mode", self.mode.to_string());
        doc.set("model", "modalities", self.modalities.join(","));
        doc.set("preprocess", "standardize_ordinal", self.preprocess.standardize_ordinal.to_string());
        doc.set(
            "preprocess",
            "standardize_categorical",
            self.preprocess.standardize_categorical.to_string(),
        );
        let e = &self.encoder;
        doc.set("encoder", "d_model", e.d_model.to_string());
        doc.set("encoder", "n_heads", e.n_heads.to_string());
        doc.set("encoder", "n_layers", e.n_layers.to_string());
        doc.set("encoder", "ff_dim", e.ff_dim.to_string());
        doc.set("encoder", "group", e.group.to_string());
        for (m, g) in &self.groups {
            doc.set("encoder", &format!("group.{m}"), g.to_string());
        }
        for (section, h) in [("unimodal_head", &self.unimodal_head), ("fused_head", &self.fused_head)] {
            doc.set(section, "n_trees", h.n_trees.to_string());
            doc.set(section, "depth", h.depth.to_string());
            doc.set(section, "out_dim", h.out_dim.to_string());
        }
        doc
    }

    /// Reads `[model]`, `[encoder]`, `[unimodal_head]`, `[fused_head]` and
    /// `[preprocess]`; absent keys keep their defaults.
    pub fn from_kv(doc: &KvDocument) -> Result<Self> {
        let mode: FusionMode = doc
            .get("model", "mode")
            .ok_or_else(|| Error::config("[model] mode is required"))?
            .parse()?;
        let modalities: Vec<&str> = doc
            .get("model", "modalities")
            .ok_or_else(|| Error::config("[model] modalities is required"))?
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect();
        let mut spec = ModelSpec::new(mode, modalities);
        let e = &mut spec.encoder;
        e.d_model = doc.value_or("encoder", "d_model", e.d_model)?;
        e.n_heads = doc.value_or("encoder", "n_heads", e.n_heads)?;
        e.n_layers = doc.value_or("encoder", "n_layers", e.n_layers)?;
        e.ff_dim = doc.value_or("encoder", "ff_dim", e.ff_dim)?;
        e.group = doc.value_or("encoder", "group", e.group)?;
        if let Some(section) = doc.section("encoder") {
            for (key, _) in section {
                if let Some(m) = key.strip_prefix("group.") {
                    if let Some(g) = doc.parse_value::<usize>("encoder", key)? {
                        spec.groups.insert(m.to_string(), g);
                    }
                }
            }
        }
        for (section, h) in [("unimodal_head", &mut spec.unimodal_head), ("fused_head", &mut spec.fused_head)] {
            h.n_trees = doc.value_or(section, "n_trees", h.n_trees)?;
            h.depth = doc.value_or(section, "depth", h.depth)?;
            h.out_dim = doc.value_or(section, "out_dim", h.out_dim)?;
        }
        let p = &mut spec.preprocess;
        p.standardize_ordinal = doc.value_or("preprocess", "standardize_ordinal", p.standardize_ordinal)?;
        p.standardize_categorical = doc.value_or("preprocess", "standardize_categorical", p.standardize_categorical)?;
        spec.validate()?;
        Ok(spec)
    }
}
