//! Cohort data model: outcomes plus one masked feature block per modality.

mod folds;
mod io;
mod missing;
mod preprocess;
mod synth;

pub use folds::{stratified_kfold, FoldPlan, FoldRoles};
pub use io::{load_cohort, load_cohort_dir, read_outcomes, write_cohort, OutcomeTable, BLOCK_PREFIX, FEATURE_SPEC_FILE, OUTCOME_FILE};
pub use missing::apply_missingness;
pub use preprocess::{preprocess_block, ColumnStats, PreprocessOptions, TabularTransform};
pub use synth::{synth_cohort, SynthModality, SynthSpec, SyntheticCohort};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Column kind as declared in the feature-spec sidecar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Numerical,
    /// Stored as a level index in `0..cardinality`.
    Categorical { cardinality: usize },
    /// Integer-coded ordered levels, treated numerically downstream.
    Ordinal,
}

impl FeatureKind {
    pub fn is_categorical(self) -> bool {
        matches!(self, FeatureKind::Categorical { .. })
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureKind::Numerical => f.write_str("numerical"),
            FeatureKind::Categorical { cardinality } => write!(f, "categorical:{cardinality}"),
            FeatureKind::Ordinal => f.write_str("ordinal"),
        }
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "numerical" => Ok(FeatureKind::Numerical),
            "ordinal" => Ok(FeatureKind::Ordinal),
            other => {
                let card = other
                    .strip_prefix("categorical:")
                    .and_then(|c| c.trim().parse::<usize>().ok())
                    .filter(|&c| c > 0)
                    .ok_or_else(|| Error::config(format!("unknown feature kind `{other}`")))?;
                Ok(FeatureKind::Categorical { cardinality: card })
            }
        }
    }
}

/// One modality's features for every patient of a cohort.
///
/// `values` is patients x features, row-major. Unobserved cells hold 0.0 and
/// must never be read as data.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityBlock {
    name: String,
    kinds: Vec<FeatureKind>,
    values: Vec<f64>,
    observed: Vec<bool>,
    present: Vec<bool>,
}

impl ModalityBlock {
    pub fn new(
        name: impl Into<String>,
        kinds: Vec<FeatureKind>,
        mut values: Vec<f64>,
        mut observed: Vec<bool>,
        present: Vec<bool>,
    ) -> Result<Self> {
        let name = name.into();
        let (n, d) = (present.len(), kinds.len());
        if d == 0 {
            return Err(Error::contract(format!("block `{name}` has no features")));
        }
        if values.len() != n * d || observed.len() != n * d {
            return Err(Error::Dimension {
                op: "modality_block",
                lhs: vec![n, d],
                rhs: vec![values.len(), observed.len()],
            });
        }
        for i in 0..n {
            for j in 0..d {
                let k = i * d + j;
                if !present[i] {
                    observed[k] = false;
                }
                if !observed[k] {
                    values[k] = 0.0;
                    continue;
                }
                let v = values[k];
                if !v.is_finite() {
                    return Err(Error::contract(format!(
                        "block `{name}`: non-finite value at patient {i}, feature {j}"
                    )));
                }
                if let FeatureKind::Categorical { cardinality } = kinds[j] {
                    if v < 0.0 || v.fract() != 0.0 || v as usize >= cardinality {
                        return Err(Error::contract(format!(
                            "block `{name}`: level {v} out of range 0..{cardinality} at patient {i}, feature {j}"
                        )));
                    }
                }
            }
        }
        Ok(ModalityBlock {
            name,
            kinds,
            values,
            observed,
            present,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kinds(&self) -> &[FeatureKind] {
        &self.kinds
    }

    pub fn width(&self) -> usize {
        self.kinds.len()
    }

    pub fn n_patients(&self) -> usize {
        self.present.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn observed(&self) -> &[bool] {
        &self.observed
    }

    pub fn present(&self) -> &[bool] {
        &self.present
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.width();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn observed_row(&self, i: usize) -> &[bool] {
        let d = self.width();
        &self.observed[i * d..(i + 1) * d]
    }

    pub fn is_present(&self, i: usize) -> bool {
        self.present[i]
    }

    /// Share of patients with the whole modality absent.
    pub fn missing_fraction(&self) -> f64 {
        self.present.iter().filter(|&&p| !p).count() as f64 / self.n_patients() as f64
    }

    pub fn subset(&self, rows: &[usize]) -> ModalityBlock {
        let d = self.width();
        let mut values = Vec::with_capacity(rows.len() * d);
        let mut observed = Vec::with_capacity(rows.len() * d);
        for &i in rows {
            values.extend_from_slice(self.row(i));
            observed.extend_from_slice(self.observed_row(i));
        }
        ModalityBlock {
            name: self.name.clone(),
            kinds: self.kinds.clone(),
            values,
            observed,
            present: rows.iter().map(|&i| self.present[i]).collect(),
        }
    }

    /// Marks patient `i` as lacking the modality.
    pub(crate) fn mask_patient(&mut self, i: usize) {
        let d = self.width();
        self.present[i] = false;
        self.observed[i * d..(i + 1) * d].fill(false);
        self.values[i * d..(i + 1) * d].fill(0.0);
    }
}

/// Patients with survival outcomes and per-modality feature blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    ids: Vec<String>,
    times: Vec<f64>,
    events: Vec<bool>,
    blocks: Vec<ModalityBlock>,
}

impl Cohort {
    /// Blocks are stored in lexical order of their names.
    pub fn new(
        ids: Vec<String>,
        times: Vec<f64>,
        events: Vec<bool>,
        mut blocks: Vec<ModalityBlock>,
    ) -> Result<Self> {
        let n = ids.len();
        if n == 0 {
            return Err(Error::contract("cohort must contain at least one patient"));
        }
        if times.len() != n || events.len() != n {
            return Err(Error::Dimension {
                op: "cohort",
                lhs: vec![n],
                rhs: vec![times.len(), events.len()],
            });
        }
        if let Some(t) = times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            return Err(Error::contract(format!("invalid survival time {t}")));
        }
        blocks.sort_by(|a, b| a.name.cmp(&b.name));
        for w in blocks.windows(2) {
            if w[0].name == w[1].name {
                return Err(Error::contract(format!("duplicate modality `{}`", w[0].name)));
            }
        }
        if let Some(b) = blocks.iter().find(|b| b.n_patients() != n) {
            return Err(Error::Dimension {
                op: "cohort",
                lhs: vec![n],
                rhs: vec![b.n_patients()],
            });
        }
        Ok(Cohort {
            ids,
            times,
            events,
            blocks,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn events(&self) -> &[bool] {
        &self.events
    }

    pub fn n_events(&self) -> usize {
        self.events.iter().filter(|&&e| e).count()
    }

    pub fn blocks(&self) -> &[ModalityBlock] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&ModalityBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn modality_names(&self) -> Vec<String> {
        self.blocks.iter().map(|b| b.name.clone()).collect()
    }

    pub fn require_block(&self, name: &str) -> Result<&ModalityBlock> {
        self.block(name)
            .ok_or_else(|| Error::contract(format!("cohort has no modality `{name}`")))
    }

    /// Replaces the block with the same name.
    pub fn with_block(&self, block: ModalityBlock) -> Result<Cohort> {
        let mut out = self.clone();
        let slot = out
            .blocks
            .iter_mut()
            .find(|b| b.name == block.name)
            .ok_or_else(|| Error::contract(format!("cohort has no modality `{}`", block.name)))?;
        if block.n_patients() != self.len() {
            return Err(Error::Dimension {
                op: "with_block",
                lhs: vec![self.len()],
                rhs: vec![block.n_patients()],
            });
        }
        *slot = block;
        Ok(out)
    }

    pub fn subset(&self, rows: &[usize]) -> Result<Cohort> {
        Cohort::new(
            rows.iter().map(|&i| self.ids[i].clone()).collect(),
            rows.iter().map(|&i| self.times[i]).collect(),
            rows.iter().map(|&i| self.events[i]).collect(),
            self.blocks.iter().map(|b| b.subset(rows)).collect(),
        )
    }
}
