//! Oblivious differentiable decision trees with a linear read-out.
//!
//! Each tree has `depth` soft splits shared by all nodes of a level. Split
//! `d` selects a convex combination of the input via a softmax over
//! selection logits, compares it to a threshold through a sigmoid with a
//! learned temperature, and the `2^depth` leaf probabilities are products of
//! the gates. Leaf `l` takes branch `g_d` at level `d` when bit `d` of `l`
//! is set and `1 - g_d` otherwise.

use std::sync::Arc;

use rand::Rng;

use crate::diffcore::{CustomOp, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::metrics::percentile;
use crate::params::{gaussian_tensor, Binder, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OdstConfig {
    pub n_trees: usize,
    pub depth: usize,
    pub out_dim: usize,
}

impl OdstConfig {
    /// Head size for a single modality.
    pub fn unimodal() -> Self {
        OdstConfig {
            n_trees: 8,
            depth: 4,
            out_dim: 1,
        }
    }

    /// Head size for the fused representation.
    pub fn multimodal() -> Self {
        OdstConfig {
            n_trees: 16,
            depth: 4,
            out_dim: 1,
        }
    }

    pub fn n_leaves(&self) -> usize {
        1 << self.depth
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.depth == 0 || self.out_dim == 0 {
            return Err(Error::config("tree ensemble sizes must be positive"));
        }
        if self.depth > 12 {
            return Err(Error::config(format!("tree depth {} too large", self.depth)));
        }
        Ok(())
    }
}

impl Default for OdstConfig {
    fn default() -> Self {
        Self::unimodal()
    }
}

/// Tree ensemble plus FC projection to a scalar risk.
#[derive(Debug, Clone)]
pub struct OdstHead {
    prefix: String,
    in_dim: usize,
    config: OdstConfig,
}

impl OdstHead {
    pub fn new(prefix: impl Into<String>, in_dim: usize, config: OdstConfig) -> Result<Self> {
        config.validate()?;
        if in_dim == 0 {
            return Err(Error::config("tree head needs a positive input width"));
        }
        Ok(OdstHead {
            prefix: prefix.into(),
            in_dim,
            config,
        })
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn config(&self) -> &OdstConfig {
        &self.config
    }

    fn name(&self, suffix: &str) -> String {
        format!("{}{suffix}", self.prefix)
    }

    fn n_splits(&self) -> usize {
        self.config.n_trees * self.config.depth
    }

    /// Zero selection logits, zero thresholds, unit temperatures, random
    /// leaves and FC weights.
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let c = self.config;
        let splits = self.n_splits();
        store.insert(self.name("select"), Tensor::zeros([splits, self.in_dim]), true);
        store.insert(self.name("thresh"), Tensor::zeros([1, splits]), true);
        store.insert(self.name("log_temp"), Tensor::zeros([1, splits]), true);
        store.insert(
            self.name("leaves"),
            gaussian_tensor(rng, &[c.n_trees, c.n_leaves() * c.out_dim], 1.0),
            true,
        );
        let width = c.n_trees * c.out_dim;
        store.insert(self.name("fc.w"), gaussian_tensor(rng, &[width, 1], 1.0 / (width as f64).sqrt()), true);
        store.insert(self.name("fc.b"), Tensor::scalar(0.0), true);
    }

    /// Sets every threshold to a random quantile in `[0.1, 0.9]` of its
    /// split feature over `h`, the first training batch.
    pub fn init_thresholds(&self, store: &mut ParamStore, h: &Tensor, rng: &mut impl Rng) -> Result<()> {
        let f = {
            let mut g = Graph::new();
            let mut p = Binder::new(store);
            let x = g.constant(h.clone());
            let f = self.split_features(&mut g, &mut p, x)?;
            g.value(f).clone()
        };
        let splits = self.n_splits();
        let mut tau = vec![0.0; splits];
        for (s, t) in tau.iter_mut().enumerate() {
            let col: Vec<f64> = (0..f.rows()).map(|b| f.at(b, s)).collect();
            *t = percentile(&col, rng.gen_range(10.0..=90.0));
        }
        *store.value_mut(&self.name("thresh"))? = Tensor::new([1, splits], tau)?;
        Ok(())
    }

    fn split_features(&self, g: &mut Graph, p: &mut Binder, h: NodeId) -> Result<NodeId> {
        let (_, w) = g.value(h).dims2()?;
        if w != self.in_dim {
            return Err(Error::Dimension {
                op: "odst",
                lhs: vec![self.in_dim],
                rhs: g.value(h).shape().to_vec(),
            });
        }
        let select = p.get(g, &self.name("select"))?;
        let weights = g.softmax_rows(select)?;
        g.matmul_nt(h, weights)
    }

    /// Gate values `[B, n_trees * depth]`.
    fn gates(&self, g: &mut Graph, p: &mut Binder, h: NodeId) -> Result<NodeId> {
        let f = self.split_features(g, p, h)?;
        let tau = p.get(g, &self.name("thresh"))?;
        let neg_tau = g.scale(tau, -1.0)?;
        let centered = g.add_row(f, neg_tau)?;
        let log_t = p.get(g, &self.name("log_temp"))?;
        let neg = g.scale(log_t, -1.0)?;
        let inv_t = g.exp(neg)?;
        let z = g.mul_row(centered, inv_t)?;
        g.sigmoid(z)
    }

    /// Concatenated tree outputs `[B, n_trees * out_dim]`.
    pub fn forward_trees(&self, g: &mut Graph, p: &mut Binder, h: NodeId) -> Result<NodeId> {
        let gates = self.gates(g, p, h)?;
        let leaves = p.get(g, &self.name("leaves"))?;
        g.custom(Arc::new(LeafMix { config: self.config }), &[gates, leaves])
    }

    /// Scalar risk per row, `[B, 1]`.
    pub fn forward(&self, g: &mut Graph, p: &mut Binder, h: NodeId) -> Result<NodeId> {
        let e = self.forward_trees(g, p, h)?;
        let w = p.get(g, &self.name("fc.w"))?;
        let b = p.get(g, &self.name("fc.b"))?;
        let y = g.matmul(e, w)?;
        g.add_row(y, b)
    }

    /// Eager tree outputs for one input vector.
    pub fn odst_forward(&self, store: &ParamStore, h: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let mut p = Binder::new(store);
        let x = g.constant(Tensor::new([1, h.len()], h.to_vec())?);
        let e = self.forward_trees(&mut g, &mut p, x)?;
        Ok(g.value(e).data().to_vec())
    }

    /// Eager risk scores for a `[B, in_dim]` batch.
    pub fn predict(&self, store: &ParamStore, h: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let mut p = Binder::new(store);
        let x = g.constant(h.clone());
        let y = self.forward(&mut g, &mut p, x)?;
        Ok(g.value(y).data().to_vec())
    }

    pub fn head_forward(&self, store: &ParamStore, h: &[f64]) -> Result<f64> {
        Ok(self.predict(store, &Tensor::new([1, h.len()], h.to_vec())?)?[0])
    }
}

/// Leaf probability of `leaf` given one tree's gates.
fn leaf_prob(gates: &[f64], leaf: usize) -> f64 {
    gates
        .iter()
        .enumerate()
        .map(|(d, &g)| if (leaf >> d) & 1 == 1 { g } else { 1.0 - g })
        .product()
}

/// Mixes leaf responses by leaf probabilities. Inputs: gates
/// `[B, n_trees * depth]`, leaves `[n_trees, 2^depth * out_dim]`.
#[derive(Debug)]
struct LeafMix {
    config: OdstConfig,
}

impl CustomOp for LeafMix {
    fn name(&self) -> &'static str {
        "odst_leaf_mix"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let c = self.config;
        let (gates, leaves) = (inputs[0], inputs[1]);
        let (batch, splits) = gates.dims2()?;
        if splits != c.n_trees * c.depth || leaves.shape() != [c.n_trees, c.n_leaves() * c.out_dim] {
            return Err(Error::Dimension {
                op: "odst_leaf_mix",
                lhs: gates.shape().to_vec(),
                rhs: leaves.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; batch * c.n_trees * c.out_dim];
        for b in 0..batch {
            for t in 0..c.n_trees {
                let gt = &gates.row(b)[t * c.depth..(t + 1) * c.depth];
                let resp = leaves.row(t);
                let o = &mut out[(b * c.n_trees + t) * c.out_dim..(b * c.n_trees + t + 1) * c.out_dim];
                for l in 0..c.n_leaves() {
                    let pl = leaf_prob(gt, l);
                    for (k, ok) in o.iter_mut().enumerate() {
                        *ok += pl * resp[l * c.out_dim + k];
                    }
                }
            }
        }
        Tensor::new(vec![batch, c.n_trees * c.out_dim], out)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let c = self.config;
        let (gates, leaves) = (inputs[0], inputs[1]);
        let batch = gates.rows();
        let mut dgates = vec![0.0; gates.numel()];
        let mut dleaves = vec![0.0; leaves.numel()];
        for b in 0..batch {
            for t in 0..c.n_trees {
                let gt = &gates.row(b)[t * c.depth..(t + 1) * c.depth];
                let go = &g.row(b)[t * c.out_dim..(t + 1) * c.out_dim];
                let resp = leaves.row(t);
                for l in 0..c.n_leaves() {
                    let r = &resp[l * c.out_dim..(l + 1) * c.out_dim];
                    let weight: f64 = r.iter().zip(go).map(|(a, b)| a * b).sum();
                    let pl = leaf_prob(gt, l);
                    for (k, &gk) in go.iter().enumerate() {
                        dleaves[t * c.n_leaves() * c.out_dim + l * c.out_dim + k] += pl * gk;
                    }
                    for d in 0..c.depth {
                        let rest: f64 = (0..c.depth)
                            .filter(|&e| e != d)
                            .map(|e| if (l >> e) & 1 == 1 { gt[e] } else { 1.0 - gt[e] })
                            .product();
                        let sign = if (l >> d) & 1 == 1 { 1.0 } else { -1.0 };
                        dgates[b * c.n_trees * c.depth + t * c.depth + d] += sign * rest * weight;
                    }
                }
            }
        }
        vec![
            Some(Tensor::new(gates.shape().to_vec(), dgates).unwrap()),
            Some(Tensor::new(leaves.shape().to_vec(), dleaves).unwrap()),
        ]
    }
}
