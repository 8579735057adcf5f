use log::warn;

use super::{FeatureKind, ModalityBlock};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreprocessOptions {
    /// Standardize integer-coded ordinal columns like numerical ones.
    pub standardize_ordinal: bool,
    /// Standardize categorical level codes and relabel them numerical. Only
    /// the linear baseline, which has no embedding tables, wants this.
    pub standardize_categorical: bool,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            standardize_ordinal: true,
            standardize_categorical: false,
        }
    }
}

/// Per-column standardization statistics. `None` leaves the column as is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

/// A fitted z-score transform, reapplicable to any rows of the same block.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularTransform {
    block: String,
    columns: Vec<Option<ColumnStats>>,
    relabel_categorical: bool,
    fitted_on: Vec<usize>,
}

/// Fits statistics on observed entries of `train_rows` and transforms the
/// whole block with them.
pub fn preprocess_block(
    block: &ModalityBlock,
    train_rows: &[usize],
    options: PreprocessOptions,
) -> Result<(ModalityBlock, TabularTransform)> {
    let t = TabularTransform::fit(block, train_rows, options)?;
    let out = t.apply(block)?;
    Ok((out, t))
}

impl TabularTransform {
    pub fn fit(block: &ModalityBlock, train_rows: &[usize], options: PreprocessOptions) -> Result<Self> {
        if train_rows.is_empty() {
            return Err(Error::contract("preprocessing needs at least one training row"));
        }
        if let Some(&i) = train_rows.iter().find(|&&i| i >= block.n_patients()) {
            return Err(Error::contract(format!("training row {i} out of range")));
        }
        let columns = block
            .kinds()
            .iter()
            .enumerate()
            .map(|(j, kind)| {
                let scaled = match kind {
                    FeatureKind::Numerical => true,
                    FeatureKind::Ordinal => options.standardize_ordinal,
                    FeatureKind::Categorical { .. } => options.standardize_categorical,
                };
                scaled.then(|| column_stats(block, train_rows, j))
            })
            .collect();
        Ok(TabularTransform {
            block: block.name().to_string(),
            columns,
            relabel_categorical: options.standardize_categorical,
            fitted_on: train_rows.to_vec(),
        })
    }

    /// Rebuilds a transform from stored statistics, e.g. from a checkpoint.
    pub fn from_stats(block: impl Into<String>, columns: Vec<Option<ColumnStats>>, relabel_categorical: bool) -> Self {
        TabularTransform {
            block: block.into(),
            columns,
            relabel_categorical,
            fitted_on: Vec::new(),
        }
    }

    pub fn block_name(&self) -> &str {
        &self.block
    }

    pub fn columns(&self) -> &[Option<ColumnStats>] {
        &self.columns
    }

    pub fn relabels_categorical(&self) -> bool {
        self.relabel_categorical
    }

    /// Row indices the statistics were computed from.
    pub fn fitted_on(&self) -> &[usize] {
        &self.fitted_on
    }

    pub fn apply(&self, block: &ModalityBlock) -> Result<ModalityBlock> {
        if block.name() != self.block || block.width() != self.columns.len() {
            return Err(Error::contract(format!(
                "transform fitted on `{}` ({} columns) applied to `{}` ({} columns)",
                self.block,
                self.columns.len(),
                block.name(),
                block.width()
            )));
        }
        let d = block.width();
        let mut values = block.values().to_vec();
        for (k, v) in values.iter_mut().enumerate() {
            if !block.observed()[k] {
                continue;
            }
            if let Some(s) = self.columns[k % d] {
                *v = (*v - s.mean) / s.std;
            }
        }
        let kinds = block
            .kinds()
            .iter()
            .zip(&self.columns)
            .map(|(k, s)| match k {
                FeatureKind::Categorical { .. } if self.relabel_categorical && s.is_some() => FeatureKind::Numerical,
                other => *other,
            })
            .collect();
        ModalityBlock::new(
            block.name(),
            kinds,
            values,
            block.observed().to_vec(),
            block.present().to_vec(),
        )
    }
}

fn column_stats(block: &ModalityBlock, rows: &[usize], j: usize) -> ColumnStats {
    let obs: Vec<f64> = rows
        .iter()
        .filter(|&&i| block.observed_row(i)[j])
        .map(|&i| block.row(i)[j])
        .collect();
    if obs.is_empty() {
        warn!("block `{}` column f_{j}: no observed training values; leaving unscaled", block.name());
        return ColumnStats { mean: 0.0, std: 1.0 };
    }
    let n = obs.len() as f64;
    let mean = obs.iter().sum::<f64>() / n;
    let var = obs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mut std = var.sqrt();
    if !(std > 1e-12) {
        warn!("block `{}` column f_{j}: zero variance on training rows; std clamped to 1", block.name());
        std = 1.0;
    }
    ColumnStats { mean, std }
}
