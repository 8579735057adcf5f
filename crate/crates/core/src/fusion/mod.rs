//! Multimodal model assembly.
//!
//! Parameter names are grouped by prefix: `enc.<m>.` for the encoder of
//! modality `m`, `uni.<m>.` for its unimodal tree head, `fused.` for the
//! head over concatenated representations, `cph.<m>.` for the linear
//! baseline and `pre.<m>.` for the fitted preprocessing statistics.
//! Concatenation follows the lexical order of modality names.

mod late;
mod manifest;
mod prepare;
#[cfg(test)]
mod tests;

pub use late::{average_ranks, late_fuse};
pub use manifest::{FusionMode, ModelSpec};
pub use prepare::{load_transforms, prepare_cohort, store_transforms, PreparedCohort};

use std::collections::BTreeMap;

use rand::Rng;

use crate::cohort::Cohort;
use crate::diffcore::{Graph, NodeId, Tensor};
use crate::encoder::{block_batch, Encoder};
use crate::error::{Error, Result};
use crate::odst::OdstHead;
use crate::params::{gaussian_tensor, Binder, ParamStore};

pub const ENCODER_PREFIX: &str = "enc.";

/// Rows scored per graph when evaluating.
const SCORE_CHUNK: usize = 64;

pub fn encoder_prefix(modality: &str) -> String {
    format!("{ENCODER_PREFIX}{modality}.")
}

pub fn unimodal_prefix(modality: &str) -> String {
    format!("uni.{modality}.")
}

pub const FUSED_PREFIX: &str = "fused.";

/// Per-modality batch inputs: a `[B, width]` value node and its mask.
pub type ModalityInputs = BTreeMap<String, (NodeId, Vec<bool>)>;

/// Architecture of a configured model; parameters live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct FusionModel {
    spec: ModelSpec,
    encoders: BTreeMap<String, Encoder>,
    unimodal: BTreeMap<String, OdstHead>,
    fused: Option<OdstHead>,
    widths: BTreeMap<String, usize>,
}

impl FusionModel {
    pub fn new(spec: ModelSpec, cohort: &Cohort) -> Result<Self> {
        spec.validate()?;
        let mut encoders = BTreeMap::new();
        let mut unimodal = BTreeMap::new();
        let mut widths = BTreeMap::new();
        for m in &spec.modalities {
            let block = cohort.require_block(m)?;
            widths.insert(m.clone(), block.width());
            if spec.mode == FusionMode::LinearCph {
                continue;
            }
            let enc = Encoder::new(encoder_prefix(m), block.kinds(), spec.encoder_config(m))?;
            let head = OdstHead::new(unimodal_prefix(m), enc.output_dim(), spec.unimodal_head)?;
            encoders.insert(m.clone(), enc);
            unimodal.insert(m.clone(), head);
        }
        let fused = match spec.mode {
            FusionMode::Early | FusionMode::Intermediate => {
                let dim = encoders.values().map(Encoder::output_dim).sum();
                Some(OdstHead::new(FUSED_PREFIX, dim, spec.fused_head)?)
            }
            _ => None,
        };
        Ok(FusionModel {
            spec,
            encoders,
            unimodal,
            fused,
            widths,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn mode(&self) -> FusionMode {
        self.spec.mode
    }

    pub fn modalities(&self) -> &[String] {
        &self.spec.modalities
    }

    pub fn encoder(&self, m: &str) -> Result<&Encoder> {
        self.encoders
            .get(m)
            .ok_or_else(|| Error::contract(format!("model has no encoder for `{m}`")))
    }

    pub fn unimodal_head(&self, m: &str) -> Result<&OdstHead> {
        self.unimodal
            .get(m)
            .ok_or_else(|| Error::contract(format!("model has no unimodal head for `{m}`")))
    }

    pub fn fused_head(&self) -> Result<&OdstHead> {
        self.fused
            .as_ref()
            .ok_or_else(|| Error::contract(format!("{} model has no fused head", self.spec.mode)))
    }

    /// Length of the concatenated representation `h_m`.
    pub fn fused_dim(&self) -> usize {
        self.encoders.values().map(Encoder::output_dim).sum()
    }

    pub fn init_unimodal(&self, m: &str, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        self.encoder(m)?.init_params(store, rng);
        self.unimodal_head(m)?.init_params(store, rng);
        Ok(())
    }

    pub fn init_fused(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        self.fused_head()?.init_params(store, rng);
        Ok(())
    }

    pub fn init_linear(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        let m = self.linear_modality()?;
        let w = self.widths[m];
        store.insert(format!("cph.{m}.w"), gaussian_tensor(rng, &[w, 1], 0.01), true);
        store.insert(format!("cph.{m}.b"), Tensor::scalar(0.0), true);
        Ok(())
    }

    fn linear_modality(&self) -> Result<&str> {
        match self.spec.mode {
            FusionMode::LinearCph => Ok(&self.spec.modalities[0]),
            mode => Err(Error::contract(format!("{mode} model has no linear weights"))),
        }
    }

    /// Unimodal risk `[B, 1]` of modality `m`.
    pub fn unimodal_forward(
        &self,
        g: &mut Graph,
        p: &mut Binder,
        m: &str,
        values: NodeId,
        observed: &[bool],
    ) -> Result<NodeId> {
        let h = self.encoder(m)?.forward(g, p, values, observed)?;
        self.unimodal_head(m)?.forward(g, p, h)
    }

    /// Concatenated representation `h_m`, `[B, fused_dim]`.
    pub fn encode_all(&self, g: &mut Graph, p: &mut Binder, inputs: &ModalityInputs) -> Result<NodeId> {
        let mut parts = Vec::with_capacity(self.encoders.len());
        for (m, enc) in &self.encoders {
            let (values, observed) = inputs.get(m).ok_or_else(|| {
                Error::contract(format!(
                    "modality `{m}` missing from the input; express absence through the mask"
                ))
            })?;
            parts.push(enc.forward(g, p, *values, observed)?);
        }
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        g.concat_cols(&parts)
    }

    /// Fused risk `[B, 1]` for early and intermediate models.
    pub fn forward_fused(&self, g: &mut Graph, p: &mut Binder, inputs: &ModalityInputs) -> Result<NodeId> {
        let head = self.fused_head()?;
        let h = self.encode_all(g, p, inputs)?;
        head.forward(g, p, h)
    }

    /// Linear risk `x . w + b` over the (imputed, standardized) block.
    pub fn linear_forward(&self, g: &mut Graph, p: &mut Binder, values: NodeId) -> Result<NodeId> {
        let m = self.linear_modality()?;
        let w = p.get(g, &format!("cph.{m}.w"))?;
        let b = p.get(g, &format!("cph.{m}.b"))?;
        let y = g.matmul(values, w)?;
        g.add_row(y, b)
    }

    /// Graph inputs for `rows` of every modality, as constants.
    pub fn batch_inputs(&self, g: &mut Graph, data: &Cohort, rows: &[usize]) -> Result<ModalityInputs> {
        let mut out = BTreeMap::new();
        for m in &self.spec.modalities {
            let (values, observed) = block_batch(data.require_block(m)?, rows)?;
            out.insert(m.clone(), (g.constant(values), observed));
        }
        Ok(out)
    }

    /// Risk scores of modality `m`'s unimodal model.
    pub fn unimodal_scores(&self, store: &ParamStore, m: &str, data: &Cohort, rows: &[usize]) -> Result<Vec<f64>> {
        let block = data.require_block(m)?;
        chunked(rows, |chunk| {
            let mut g = Graph::new();
            let mut p = Binder::new(store);
            let (values, observed) = block_batch(block, chunk)?;
            let v = g.constant(values);
            let y = self.unimodal_forward(&mut g, &mut p, m, v, &observed)?;
            Ok(g.value(y).data().to_vec())
        })
    }

    /// Concatenated representations of `rows` evaluated eagerly.
    pub fn encode_rows(&self, store: &ParamStore, data: &Cohort, rows: &[usize]) -> Result<Tensor> {
        let dim = self.fused_dim();
        let flat = chunked(rows, |chunk| {
            let mut g = Graph::new();
            let mut p = Binder::new(store);
            let inputs = self.batch_inputs(&mut g, data, chunk)?;
            let h = self.encode_all(&mut g, &mut p, &inputs)?;
            Ok(g.value(h).data().to_vec())
        })?;
        Tensor::new([rows.len(), dim], flat)
    }

    /// Scores of the configured model for `rows` of a preprocessed cohort.
    /// Late fusion ranks within `rows`, so its scores are only comparable
    /// inside one call.
    pub fn score(&self, store: &ParamStore, data: &Cohort, rows: &[usize]) -> Result<Vec<f64>> {
        match self.spec.mode {
            FusionMode::Unimodal => self.unimodal_scores(store, &self.spec.modalities[0], data, rows),
            FusionMode::Early | FusionMode::Intermediate => chunked(rows, |chunk| {
                let mut g = Graph::new();
                let mut p = Binder::new(store);
                let inputs = self.batch_inputs(&mut g, data, chunk)?;
                let y = self.forward_fused(&mut g, &mut p, &inputs)?;
                Ok(g.value(y).data().to_vec())
            }),
            FusionMode::Late => {
                let mut per = Vec::with_capacity(self.spec.modalities.len());
                for m in &self.spec.modalities {
                    let block = data.require_block(m)?;
                    let s = self.unimodal_scores(store, m, data, rows)?;
                    per.push(
                        rows.iter()
                            .zip(s)
                            .map(|(&i, y)| block.is_present(i).then_some(y))
                            .collect::<Vec<_>>(),
                    );
                }
                late_fuse(&per)
            }
            FusionMode::LinearCph => {
                let m = self.linear_modality()?;
                let block = data.require_block(m)?;
                chunked(rows, |chunk| {
                    let mut g = Graph::new();
                    let mut p = Binder::new(store);
                    let (values, _) = block_batch(block, chunk)?;
                    let v = g.constant(values);
                    let y = self.linear_forward(&mut g, &mut p, v)?;
                    Ok(g.value(y).data().to_vec())
                })
            }
        }
    }
}

fn chunked(rows: &[usize], mut f: impl FnMut(&[usize]) -> Result<Vec<f64>>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(SCORE_CHUNK) {
        out.extend(f(chunk)?);
    }
    Ok(out)
}

/// `w . x + b` with unobserved entries contributing nothing.
pub fn linear_cph_forward(values: &[f64], observed: &[bool], weights: &[f64], bias: f64) -> Result<f64> {
    if values.len() != weights.len() || observed.len() != weights.len() {
        return Err(Error::Dimension {
            op: "linear_cph",
            lhs: vec![weights.len()],
            rhs: vec![values.len(), observed.len()],
        });
    }
    Ok(values
        .iter()
        .zip(observed)
        .zip(weights)
        .filter(|((_, &o), _)| o)
        .map(|((x, _), w)| x * w)
        .sum::<f64>()
        + bias)
}
