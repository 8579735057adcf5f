//! Missing-aware unimodal encoder.
//!
//! Every feature (or group of numerical features) becomes a token: a learned
//! bias plus either `x * v_present` for an observed numerical value, a table
//! row for an observed categorical level, or a frozen zero vector when the
//! value is missing. Tokens then pass through pre-norm transformer layers
//! whose attention drops missing tokens on both the query and key side, and
//! the final token matrix is flattened into the representation `h`.
//!
//! A patient lacking the whole modality is encoded with every token missing,
//! which yields one constant vector per parameter set.

mod attention;
mod embed;
#[cfg(test)]
mod tests;

pub use attention::{build_attention_mask, masked_attention};

use std::sync::Arc;

use rand::Rng;

use crate::cohort::{FeatureKind, ModalityBlock};
use crate::diffcore::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::params::{gaussian_tensor, Binder, ParamStore};
use attention::MaskedAttention;
use embed::FeatureEmbed;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ff_dim: usize,
    /// Consecutive numerical features sharing one token; 1 keeps one token
    /// per feature.
    pub group: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_model: 32,
            n_heads: 4,
            n_layers: 2,
            ff_dim: 64,
            group: 1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.ff_dim == 0 || self.group == 0 {
            return Err(Error::config("encoder sizes must be positive"));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum TokenSource {
    /// Features embedded into one token; `slots` index rows of `v_present`.
    Numerical { features: Vec<usize>, slots: Vec<usize> },
    Categorical { feature: usize, table: usize, cardinality: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct TokenLayout {
    pub width: usize,
    pub d_model: usize,
    pub tokens: Vec<TokenSource>,
    pub n_numerical: usize,
    pub n_categorical: usize,
}

impl TokenLayout {
    fn new(kinds: &[FeatureKind], d_model: usize, group: usize) -> Self {
        let mut tokens = Vec::new();
        let mut pending = (Vec::new(), Vec::new());
        let (mut n_num, mut n_cat) = (0, 0);
        for (j, kind) in kinds.iter().enumerate() {
            match kind {
                FeatureKind::Categorical { cardinality } => {
                    tokens.push(TokenSource::Categorical {
                        feature: j,
                        table: n_cat,
                        cardinality: *cardinality,
                    });
                    n_cat += 1;
                }
                _ => {
                    pending.0.push(j);
                    pending.1.push(n_num);
                    n_num += 1;
                    if pending.0.len() == group {
                        let (features, slots) = std::mem::take(&mut pending);
                        tokens.push(TokenSource::Numerical { features, slots });
                    }
                }
            }
        }
        if !pending.0.is_empty() {
            tokens.push(TokenSource::Numerical {
                features: pending.0,
                slots: pending.1,
            });
        }
        TokenLayout {
            width: kinds.len(),
            d_model,
            tokens,
            n_numerical: n_num,
            n_categorical: n_cat,
        }
    }

    /// Per-token missing flags for `batch` patients.
    fn missing_flags(&self, observed: &[bool], batch: usize) -> Vec<bool> {
        let mut out = Vec::with_capacity(batch * self.tokens.len());
        for b in 0..batch {
            let obs = &observed[b * self.width..(b + 1) * self.width];
            for t in &self.tokens {
                out.push(match t {
                    TokenSource::Numerical { features, .. } => features.iter().all(|&j| !obs[j]),
                    TokenSource::Categorical { feature, .. } => !obs[*feature],
                });
            }
        }
        out
    }
}

/// Embedded tokens of one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    /// `[n_tokens, d_model]`
    pub tokens: Tensor,
    pub missing: Vec<bool>,
}

/// Encoder for one modality; parameters live in a [`ParamStore`] under
/// `prefix`.
#[derive(Debug, Clone)]
pub struct Encoder {
    prefix: String,
    config: EncoderConfig,
    kinds: Vec<FeatureKind>,
    layout: Arc<TokenLayout>,
}

impl Encoder {
    pub fn new(prefix: impl Into<String>, kinds: &[FeatureKind], config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        if kinds.is_empty() {
            return Err(Error::config("encoder needs at least one feature"));
        }
        Ok(Encoder {
            prefix: prefix.into(),
            config,
            kinds: kinds.to_vec(),
            layout: Arc::new(TokenLayout::new(kinds, config.d_model, config.group)),
        })
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn kinds(&self) -> &[FeatureKind] {
        &self.kinds
    }

    pub fn width(&self) -> usize {
        self.kinds.len()
    }

    pub fn n_tokens(&self) -> usize {
        self.layout.tokens.len()
    }

    /// Length of the flattened representation.
    pub fn output_dim(&self) -> usize {
        self.n_tokens() * self.config.d_model
    }

    fn name(&self, suffix: &str) -> String {
        format!("{}{suffix}", self.prefix)
    }

    fn layer_name(&self, l: usize, suffix: &str) -> String {
        format!("{}layer{l}.{suffix}", self.prefix)
    }

    /// Adds freshly initialized parameters to `store`.
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let d = self.config.d_model;
        let ff = self.config.ff_dim;
        let n_num = self.layout.n_numerical.max(1);
        store.insert(self.name("bias"), gaussian_tensor(rng, &[self.n_tokens(), d], 0.1), true);
        store.insert(self.name("num.v_present"), gaussian_tensor(rng, &[n_num, d], 0.5), true);
        store.insert(self.name("num.v_missing"), Tensor::zeros([n_num, d]), false);
        for t in &self.layout.tokens {
            if let TokenSource::Categorical { table, cardinality, .. } = t {
                store.insert(self.name(&format!("cat.{table}.table")), gaussian_tensor(rng, &[*cardinality, d], 0.5), true);
                store.insert(self.name(&format!("cat.{table}.pad")), Tensor::zeros([1, d]), false);
            }
        }
        let wstd = 1.0 / (d as f64).sqrt();
        for l in 0..self.config.n_layers {
            for ln in ["ln1", "ln2"] {
                store.insert(self.layer_name(l, &format!("{ln}.gamma")), Tensor::full([1, d], 1.0), true);
                store.insert(self.layer_name(l, &format!("{ln}.beta")), Tensor::zeros([1, d]), true);
            }
            for w in ["wq", "wk", "wv"] {
                store.insert(self.layer_name(l, &format!("attn.{w}")), gaussian_tensor(rng, &[d, d], wstd), true);
            }
            store.insert(self.layer_name(l, "attn.wo"), Tensor::zeros([d, d]), true);
            store.insert(self.layer_name(l, "ff.w1"), gaussian_tensor(rng, &[d, ff], wstd), true);
            store.insert(self.layer_name(l, "ff.b1"), Tensor::zeros([1, ff]), true);
            store.insert(self.layer_name(l, "ff.w2"), Tensor::zeros([ff, d]), true);
            store.insert(self.layer_name(l, "ff.b2"), Tensor::zeros([1, d]), true);
        }
    }

    fn check_batch(&self, values: &Tensor, observed: &[bool]) -> Result<usize> {
        let (b, w) = values.dims2()?;
        if w != self.width() || observed.len() != b * w {
            return Err(Error::Dimension {
                op: "encoder",
                lhs: vec![b, self.width()],
                rhs: vec![w, observed.len()],
            });
        }
        Ok(b)
    }

    /// Token embeddings `[B * n_tokens, d_model]` and per-token missing flags.
    fn embed(
        &self,
        g: &mut Graph,
        p: &mut Binder,
        values: NodeId,
        observed: &[bool],
    ) -> Result<(NodeId, Vec<bool>, usize)> {
        let batch = self.check_batch(g.value(values), observed)?;
        let mut inputs = vec![
            values,
            p.get(g, &self.name("bias"))?,
            p.get(g, &self.name("num.v_present"))?,
            p.get(g, &self.name("num.v_missing"))?,
        ];
        for c in 0..self.layout.n_categorical {
            inputs.push(p.get(g, &self.name(&format!("cat.{c}.table")))?);
            inputs.push(p.get(g, &self.name(&format!("cat.{c}.pad")))?);
        }
        let op = FeatureEmbed {
            layout: self.layout.clone(),
            observed: Arc::new(observed.to_vec()),
            batch,
        };
        let x = g.custom(Arc::new(op), &inputs)?;
        Ok((x, self.layout.missing_flags(observed, batch), batch))
    }

    /// Encodes a batch: `values` is a `[B, width]` node, `observed` the
    /// matching row-major mask. Returns `[B, output_dim]`.
    pub fn forward(&self, g: &mut Graph, p: &mut Binder, values: NodeId, observed: &[bool]) -> Result<NodeId> {
        let (mut x, missing, batch) = self.embed(g, p, values, observed)?;
        let missing = Arc::new(missing);
        for l in 0..self.config.n_layers {
            let w = |s: &str| self.layer_name(l, s);
            let (g1, b1) = (p.get(g, &w("ln1.gamma"))?, p.get(g, &w("ln1.beta"))?);
            let y = g.layer_norm(x, g1, b1, LN_EPS)?;
            let wq = p.get(g, &w("attn.wq"))?;
            let wk = p.get(g, &w("attn.wk"))?;
            let wv = p.get(g, &w("attn.wv"))?;
            let wo = p.get(g, &w("attn.wo"))?;
            let q = g.matmul(y, wq)?;
            let k = g.matmul(y, wk)?;
            let v = g.matmul(y, wv)?;
            let op = MaskedAttention {
                batch,
                n_tok: self.n_tokens(),
                n_heads: self.config.n_heads,
                missing: missing.clone(),
            };
            let a = g.custom(Arc::new(op), &[q, k, v])?;
            let a = g.matmul(a, wo)?;
            x = g.add(x, a)?;

            let (g2, b2) = (p.get(g, &w("ln2.gamma"))?, p.get(g, &w("ln2.beta"))?);
            let y = g.layer_norm(x, g2, b2, LN_EPS)?;
            let (w1, fb1) = (p.get(g, &w("ff.w1"))?, p.get(g, &w("ff.b1"))?);
            let (w2, fb2) = (p.get(g, &w("ff.w2"))?, p.get(g, &w("ff.b2"))?);
            let hdn = g.matmul(y, w1)?;
            let hdn = g.add_row(hdn, fb1)?;
            let hdn = g.relu(hdn)?;
            let f = g.matmul(hdn, w2)?;
            let f = g.add_row(f, fb2)?;
            x = g.add(x, f)?;
        }
        g.reshape(x, [batch, self.output_dim()])
    }

    /// Eager embedding of one patient.
    pub fn embed_features(&self, store: &ParamStore, values: &[f64], observed: &[bool]) -> Result<TokenSequence> {
        let mut g = Graph::new();
        let mut p = Binder::new(store);
        let v = g.constant(Tensor::new([1, values.len()], values.to_vec())?);
        let (x, missing, _) = self.embed(&mut g, &mut p, v, observed)?;
        Ok(TokenSequence {
            tokens: g.value(x).clone(),
            missing,
        })
    }

    /// Eager forward pass over a batch, `[B, output_dim]`.
    pub fn encode_batch(&self, store: &ParamStore, values: &Tensor, observed: &[bool]) -> Result<Tensor> {
        let mut g = Graph::new();
        let mut p = Binder::new(store);
        let v = g.constant(values.clone());
        let h = self.forward(&mut g, &mut p, v, observed)?;
        Ok(g.value(h).clone())
    }

    /// Eager forward pass for one patient.
    pub fn encode(&self, store: &ParamStore, values: &[f64], observed: &[bool]) -> Result<Vec<f64>> {
        let v = Tensor::new([1, values.len()], values.to_vec())?;
        Ok(self.encode_batch(store, &v, observed)?.into_data())
    }
}

/// Values `[rows, width]` and observed mask of selected patients of a block.
pub fn block_batch(block: &ModalityBlock, rows: &[usize]) -> Result<(Tensor, Vec<bool>)> {
    let d = block.width();
    let mut values = Vec::with_capacity(rows.len() * d);
    let mut observed = Vec::with_capacity(rows.len() * d);
    for &i in rows {
        values.extend_from_slice(block.row(i));
        observed.extend_from_slice(block.observed_row(i));
    }
    Ok((Tensor::new([rows.len(), d], values)?, observed))
}
