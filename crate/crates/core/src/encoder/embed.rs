use std::sync::Arc;

use super::{TokenLayout, TokenSource};
use crate::diffcore::{CustomOp, Tensor};
use crate::error::{Error, Result};

/// Dual-stream feature embedding for a batch of patients.
///
/// Inputs: `values [B, width]`, `bias [n_tok, d]`, `v_present [n_num, d]`,
/// `v_missing [n_num, d]`, then `table_c [card_c, d]` and `pad_c [1, d]` per
/// categorical column. Output: `[B * n_tok, d]`, patient-major.
#[derive(Debug)]
pub(crate) struct FeatureEmbed {
    pub layout: Arc<TokenLayout>,
    pub observed: Arc<Vec<bool>>,
    pub batch: usize,
}

impl FeatureEmbed {
    fn obs(&self, b: usize, j: usize) -> bool {
        self.observed[b * self.layout.width + j]
    }
}

impl CustomOp for FeatureEmbed {
    fn name(&self) -> &'static str {
        "feature_embed"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let l = &self.layout;
        let d = l.d_model;
        let (values, bias, vp, vm) = (inputs[0], inputs[1], inputs[2], inputs[3]);
        if values.shape() != [self.batch, l.width] {
            return Err(Error::Dimension {
                op: "feature_embed",
                lhs: vec![self.batch, l.width],
                rhs: values.shape().to_vec(),
            });
        }
        let n_tok = l.tokens.len();
        let mut out = vec![0.0; self.batch * n_tok * d];
        for b in 0..self.batch {
            let x = values.row(b);
            for (t, src) in l.tokens.iter().enumerate() {
                let o = &mut out[(b * n_tok + t) * d..(b * n_tok + t + 1) * d];
                o.copy_from_slice(bias.row(t));
                match src {
                    TokenSource::Numerical { features, slots } => {
                        for (&j, &s) in features.iter().zip(slots) {
                            if self.obs(b, j) {
                                for (oi, &v) in o.iter_mut().zip(vp.row(s)) {
                                    *oi += x[j] * v;
                                }
                            } else {
                                for (oi, &v) in o.iter_mut().zip(vm.row(s)) {
                                    *oi += v;
                                }
                            }
                        }
                    }
                    TokenSource::Categorical { feature, table, cardinality } => {
                        let (tab, pad) = (inputs[4 + 2 * table], inputs[5 + 2 * table]);
                        let row = if self.obs(b, *feature) {
                            let level = x[*feature];
                            if level < 0.0 || level.fract() != 0.0 || level as usize >= *cardinality {
                                return Err(Error::contract(format!(
                                    "categorical level {level} out of range 0..{cardinality} for feature {feature}"
                                )));
                            }
                            tab.row(level as usize)
                        } else {
                            pad.row(0)
                        };
                        for (oi, &v) in o.iter_mut().zip(row) {
                            *oi += v;
                        }
                    }
                }
            }
        }
        Tensor::new(vec![self.batch * n_tok, d], out)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let l = &self.layout;
        let d = l.d_model;
        let n_tok = l.tokens.len();
        let (values, vp) = (inputs[0], inputs[2]);
        let mut dx = vec![0.0; self.batch * l.width];
        let mut dbias = vec![0.0; n_tok * d];
        let mut dvp = vec![0.0; vp.numel()];
        let mut dvm = vec![0.0; vp.numel()];
        let mut dtabs: Vec<Vec<f64>> = (0..l.n_categorical)
            .map(|c| vec![0.0; inputs[4 + 2 * c].numel()])
            .collect();
        let mut dpads: Vec<Vec<f64>> = (0..l.n_categorical).map(|_| vec![0.0; d]).collect();
        let acc = |dst: &mut [f64], src: &[f64], scale: f64| {
            for (a, &b) in dst.iter_mut().zip(src) {
                *a += scale * b;
            }
        };
        for b in 0..self.batch {
            let x = values.row(b);
            for (t, src) in l.tokens.iter().enumerate() {
                let gt = g.row(b * n_tok + t);
                acc(&mut dbias[t * d..(t + 1) * d], gt, 1.0);
                match src {
                    TokenSource::Numerical { features, slots } => {
                        for (&j, &s) in features.iter().zip(slots) {
                            if self.obs(b, j) {
                                acc(&mut dvp[s * d..(s + 1) * d], gt, x[j]);
                                dx[b * l.width + j] = vp.row(s).iter().zip(gt).map(|(a, c)| a * c).sum();
                            } else {
                                acc(&mut dvm[s * d..(s + 1) * d], gt, 1.0);
                            }
                        }
                    }
                    TokenSource::Categorical { feature, table, .. } => {
                        if self.obs(b, *feature) {
                            let level = x[*feature] as usize;
                            acc(&mut dtabs[*table][level * d..(level + 1) * d], gt, 1.0);
                        } else {
                            acc(&mut dpads[*table], gt, 1.0);
                        }
                    }
                }
            }
        }
        let t = |shape: &[usize], data: Vec<f64>| Some(Tensor::new(shape.to_vec(), data).unwrap());
        let mut grads = vec![
            t(values.shape(), dx),
            t(inputs[1].shape(), dbias),
            t(vp.shape(), dvp),
            t(vp.shape(), dvm),
        ];
        for (c, (dt, dp)) in dtabs.into_iter().zip(dpads).enumerate() {
            grads.push(t(inputs[4 + 2 * c].shape(), dt));
            grads.push(t(&[1, d], dp));
        }
        grads
    }
}
