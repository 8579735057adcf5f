use std::sync::Arc;

use rayon::prelude::*;

use crate::diffcore::kernels::{masked_softmax_row, softmax_row_backward};
use crate::diffcore::{CustomOp, Tensor};
use crate::error::{Error, Result};

/// Additive mask with `-inf` at `(i, j)` whenever token `i` or token `j` is
/// missing.
pub fn build_attention_mask(missing: &[bool]) -> Tensor {
    let n = missing.len().max(1);
    let mut m = vec![0.0; n * n];
    for i in 0..missing.len() {
        for j in 0..missing.len() {
            if missing[i] || missing[j] {
                m[i * n + j] = f64::NEG_INFINITY;
            }
        }
    }
    Tensor::new(vec![n, n], m).expect("square mask")
}

/// Single-head `ReLU(softmax(QK^T / sqrt(d_h) + M) + M^T) V`, computed
/// literally. Reference for the fused batched op.
pub fn masked_attention(q: &Tensor, k: &Tensor, v: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let dh = q.cols() as f64;
    let scores = crate::diffcore::matmul(q, &k.transposed()?)?.map(|s| s / dh.sqrt());
    let probs = crate::diffcore::masked_softmax(&scores, mask)?;
    let mt = mask.transposed()?;
    let mut post = probs.clone();
    for (p, &m) in post.data_mut().iter_mut().zip(mt.data()) {
        *p += m;
    }
    let gated = crate::diffcore::relu(&post);
    crate::diffcore::matmul(&gated, v)
}

/// Multi-head masked self-attention over a batch of token sequences.
///
/// Inputs `Q, K, V` are `[B * n, d]`, patient-major; head `h` uses columns
/// `h*d_h..(h+1)*d_h`. Every head shares the patient's mask. Because the
/// mask is symmetric and the softmax output is nonnegative, adding `M^T`
/// and applying ReLU keeps exactly the unmasked probabilities, which is what
/// the kernel computes.
#[derive(Debug)]
pub(crate) struct MaskedAttention {
    pub batch: usize,
    pub n_tok: usize,
    pub n_heads: usize,
    /// `[B * n]` token-missing flags.
    pub missing: Arc<Vec<bool>>,
}

impl MaskedAttention {
    fn check(&self, inputs: &[&Tensor]) -> Result<(usize, usize)> {
        let rows = self.batch * self.n_tok;
        let d = inputs[0].cols();
        for t in inputs {
            if t.shape() != [rows, d] {
                return Err(Error::Dimension {
                    op: "masked_attention",
                    lhs: vec![rows, d],
                    rhs: t.shape().to_vec(),
                });
            }
        }
        if d % self.n_heads != 0 {
            return Err(Error::contract(format!("d_model {d} not divisible by {} heads", self.n_heads)));
        }
        Ok((d, d / self.n_heads))
    }

    /// Row-normalized attention weights of one head for patient `b`.
    fn probs(&self, q: &[f64], k: &[f64], b: usize, h: usize, d: usize, dh: usize, out: &mut [f64]) {
        let n = self.n_tok;
        let miss = &self.missing[b * n..(b + 1) * n];
        let scale = 1.0 / (dh as f64).sqrt();
        let mut scores = vec![0.0; n];
        let mut mask = vec![0.0; n];
        for i in 0..n {
            let qi = &q[i * d + h * dh..i * d + (h + 1) * dh];
            for j in 0..n {
                let masked = miss[i] || miss[j];
                mask[j] = if masked { f64::NEG_INFINITY } else { 0.0 };
                scores[j] = if masked {
                    0.0
                } else {
                    let kj = &k[j * d + h * dh..j * d + (h + 1) * dh];
                    qi.iter().zip(kj).map(|(a, c)| a * c).sum::<f64>() * scale
                };
            }
            masked_softmax_row(&scores, Some(&mask), &mut out[i * n..(i + 1) * n]);
        }
    }
}

impl CustomOp for MaskedAttention {
    fn name(&self) -> &'static str {
        "masked_attention"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (d, dh) = self.check(inputs)?;
        let n = self.n_tok;
        let (q, k, v) = (inputs[0].data(), inputs[1].data(), inputs[2].data());
        let mut out = vec![0.0; self.batch * n * d];
        out.par_chunks_mut(n * d).enumerate().for_each(|(b, ob)| {
            let span = b * n * d..(b + 1) * n * d;
            let (qb, kb, vb) = (&q[span.clone()], &k[span.clone()], &v[span]);
            let mut p = vec![0.0; n * n];
            for h in 0..self.n_heads {
                self.probs(qb, kb, b, h, d, dh, &mut p);
                for i in 0..n {
                    for j in 0..n {
                        let a = p[i * n + j];
                        if a > 0.0 {
                            for c in h * dh..(h + 1) * dh {
                                ob[i * d + c] += a * vb[j * d + c];
                            }
                        }
                    }
                }
            }
        });
        Tensor::new(vec![self.batch * n, d], out)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let (d, dh) = self.check(inputs).expect("checked in forward");
        let n = self.n_tok;
        let (q, k, v) = (inputs[0].data(), inputs[1].data(), inputs[2].data());
        let scale = 1.0 / (dh as f64).sqrt();
        let per: Vec<[Vec<f64>; 3]> = (0..self.batch)
            .into_par_iter()
            .map(|b| {
                let span = b * n * d..(b + 1) * n * d;
                let (qb, kb, vb, gb) = (&q[span.clone()], &k[span.clone()], &v[span.clone()], &g.data()[span]);
                let mut dq = vec![0.0; n * d];
                let mut dk = vec![0.0; n * d];
                let mut dv = vec![0.0; n * d];
                let mut p = vec![0.0; n * n];
                let mut dp = vec![0.0; n];
                let mut ds = vec![0.0; n];
                for h in 0..self.n_heads {
                    let cols = h * dh..(h + 1) * dh;
                    self.probs(qb, kb, b, h, d, dh, &mut p);
                    for i in 0..n {
                        let pi = &p[i * n..(i + 1) * n];
                        let gi = &gb[i * d + cols.start..i * d + cols.end];
                        for j in 0..n {
                            // The ReLU passes gradient only where the weight is positive.
                            dp[j] = if pi[j] > 0.0 {
                                let vj = &vb[j * d + cols.start..j * d + cols.end];
                                gi.iter().zip(vj).map(|(a, c)| a * c).sum()
                            } else {
                                0.0
                            };
                            if pi[j] > 0.0 {
                                for (c, &gc) in cols.clone().zip(gi) {
                                    dv[j * d + c] += pi[j] * gc;
                                }
                            }
                        }
                        ds.iter_mut().for_each(|x| *x = 0.0);
                        softmax_row_backward(pi, &dp, &mut ds);
                        for j in 0..n {
                            let s = ds[j] * scale;
                            if s == 0.0 {
                                continue;
                            }
                            for c in cols.clone() {
                                dq[i * d + c] += s * kb[j * d + c];
                                dk[j * d + c] += s * qb[i * d + c];
                            }
                        }
                    }
                }
                [dq, dk, dv]
            })
            .collect();
        let mut dq = Vec::with_capacity(q.len());
        let mut dk = Vec::with_capacity(q.len());
        let mut dv = Vec::with_capacity(q.len());
        for [a, b, c] in per {
            dq.extend(a);
            dk.extend(b);
            dv.extend(c);
        }
        let shape = inputs[0].shape().to_vec();
        vec![
            Some(Tensor::new(shape.clone(), dq).unwrap()),
            Some(Tensor::new(shape.clone(), dk).unwrap()),
            Some(Tensor::new(shape, dv).unwrap()),
        ]
    }
}
