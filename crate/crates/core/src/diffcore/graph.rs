use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use super::kernels::{
    masked_softmax_row, mm_acc, mm_nt_acc, mm_tn_acc, sigmoid, softmax_row_backward,
};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a leaf participates in differentiation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeafKind {
    /// Data that never receives a gradient (masks, targets).
    Constant,
    /// Unnamed data whose gradient is tracked, e.g. for sensitivity checks.
    Input,
    /// Named learnable parameter.
    Trainable,
    /// Named parameter held fixed; never accumulates a gradient.
    Frozen,
}

/// Elementwise operation kinds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Add,
    Mul,
    Relu,
    Sigmoid,
    Scale(f64),
}

/// A differentiable operation implemented outside this module.
///
/// `backward` returns one entry per input; `None` means the input receives
/// no gradient from this op.
pub trait CustomOp: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor)
        -> Vec<Option<Tensor>>;
}

#[derive(Clone, Debug)]
enum Op {
    Leaf(LeafKind, Option<String>),
    MatMul,
    MatMulNT,
    Add,
    Sub,
    Mul,
    Relu,
    Sigmoid,
    Exp,
    Log,
    Scale(f64),
    AddRow,
    MulRow,
    MaskedSoftmax,
    SoftmaxRows,
    LayerNorm(f64),
    Sum,
    Reshape(Vec<usize>),
    ConcatCols,
    Custom(Arc<dyn CustomOp>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf(..) => "leaf",
            Op::MatMul => "matmul",
            Op::MatMulNT => "matmul_nt",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Scale(_) => "scale",
            Op::AddRow => "add_row",
            Op::MulRow => "mul_row",
            Op::MaskedSoftmax => "masked_softmax",
            Op::SoftmaxRows => "softmax_rows",
            Op::LayerNorm(_) => "layer_norm",
            Op::Sum => "sum",
            Op::Reshape(_) => "reshape",
            Op::ConcatCols => "concat_cols",
            Op::Custom(op) => op.name(),
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only record of tensor operations with reverse-mode gradients.
///
/// Nodes are stored in creation order, which is a topological order.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
    named: BTreeMap<String, Tensor>,
}

impl Gradients {
    /// Gradient of any node that required one.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.by_node.get(id.0).and_then(Option::as_ref)
    }

    /// Gradients of trainable leaves keyed by name.
    pub fn named(&self) -> &BTreeMap<String, Tensor> {
        &self.named
    }

    pub fn into_named(self) -> BTreeMap<String, Tensor> {
        self.named
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape checked")
}

fn check_row_broadcast(op: &'static str, a: &Tensor, row: &Tensor) -> Result<(usize, usize)> {
    let (m, n) = a.dims2()?;
    if row.shape() != [1, n] {
        return Err(Error::Dimension {
            op,
            lhs: a.shape().to_vec(),
            rhs: row.shape().to_vec(),
        });
    }
    Ok((m, n))
}

fn eval(op: &Op, inputs: &[&Tensor]) -> Result<Tensor> {
    let v = match op {
        Op::Leaf(..) => unreachable!("leaves are not evaluated"),
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k) = a.dims2()?;
            let (k2, n) = b.dims2()?;
            if k != k2 {
                return Err(Error::Dimension {
                    op: "matmul",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let mut c = vec![0.0; m * n];
            mm_acc(a.data(), b.data(), &mut c, m, k, n);
            Tensor::new(vec![m, n], c)?
        }
        Op::MatMulNT => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k) = a.dims2()?;
            let (n, k2) = b.dims2()?;
            if k != k2 {
                return Err(Error::Dimension {
                    op: "matmul_nt",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let mut c = vec![0.0; m * n];
            mm_nt_acc(a.data(), b.data(), &mut c, m, k, n);
            Tensor::new(vec![m, n], c)?
        }
        Op::Add => {
            same_shape("add", inputs[0], inputs[1])?;
            zip_map(inputs[0], inputs[1], |x, y| x + y)
        }
        Op::Sub => {
            same_shape("sub", inputs[0], inputs[1])?;
            zip_map(inputs[0], inputs[1], |x, y| x - y)
        }
        Op::Mul => {
            same_shape("mul", inputs[0], inputs[1])?;
            zip_map(inputs[0], inputs[1], |x, y| x * y)
        }
        Op::Relu => inputs[0].map(|x| if x > 0.0 { x } else { 0.0 }),
        Op::Sigmoid => inputs[0].map(sigmoid),
        Op::Exp => inputs[0].map(f64::exp),
        Op::Log => inputs[0].map(f64::ln),
        Op::Scale(s) => inputs[0].map(|x| x * s),
        Op::AddRow | Op::MulRow => {
            let (a, row) = (inputs[0], inputs[1]);
            let (m, n) = check_row_broadcast(op.name(), a, row)?;
            let add = matches!(op, Op::AddRow);
            let mut out = a.data().to_vec();
            for i in 0..m {
                for (o, &r) in out[i * n..(i + 1) * n].iter_mut().zip(row.data()) {
                    if add {
                        *o += r;
                    } else {
                        *o *= r;
                    }
                }
            }
            Tensor::new(vec![m, n], out)?
        }
        Op::MaskedSoftmax => {
            let (s, mask) = (inputs[0], inputs[1]);
            same_shape("masked_softmax", s, mask)?;
            softmax_rows_impl(s, Some(mask))?
        }
        Op::SoftmaxRows => softmax_rows_impl(inputs[0], None)?,
        Op::LayerNorm(eps) => layer_norm_forward(inputs[0], inputs[1], inputs[2], *eps)?.0,
        Op::Sum => Tensor::scalar(inputs[0].sum()),
        Op::Reshape(shape) => inputs[0].reshaped(shape.clone())?,
        Op::ConcatCols => {
            let m = inputs[0].rows();
            let mut widths = Vec::with_capacity(inputs.len());
            for t in inputs {
                let (r, c) = t.dims2()?;
                if r != m {
                    return Err(Error::Dimension {
                        op: "concat_cols",
                        lhs: inputs[0].shape().to_vec(),
                        rhs: t.shape().to_vec(),
                    });
                }
                widths.push(c);
            }
            let n: usize = widths.iter().sum();
            let mut out = Vec::with_capacity(m * n);
            for i in 0..m {
                for t in inputs {
                    out.extend_from_slice(t.row(i));
                }
            }
            Tensor::new(vec![m, n], out)?
        }
        Op::Custom(op) => op.forward(inputs)?,
    };
    Ok(v)
}

fn softmax_rows_impl(s: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
    let (m, n) = s.dims2()?;
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        masked_softmax_row(
            s.row(i),
            mask.map(|t| t.row(i)),
            &mut out[i * n..(i + 1) * n],
        );
    }
    Tensor::new(vec![m, n], out)
}

/// Returns the normalized output and the per-row `(xhat, inv_std)` cache.
fn layer_norm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let (m, n) = check_row_broadcast("layer_norm", x, gamma)?;
    check_row_broadcast("layer_norm", x, beta)?;
    let mut out = vec![0.0; m * n];
    let mut xhat = vec![0.0; m * n];
    let mut inv_std = vec![0.0; m];
    for i in 0..m {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[i] = is;
        for j in 0..n {
            let h = (row[j] - mean) * is;
            xhat[i * n + j] = h;
            out[i * n + j] = h * gamma.data()[j] + beta.data()[j];
        }
    }
    Ok((Tensor::new(vec![m, n], out)?, xhat, inv_std))
}

fn backward_rule(
    op: &Op,
    inputs: &[&Tensor],
    output: &Tensor,
    g: &Tensor,
) -> Vec<Option<Tensor>> {
    match op {
        Op::Leaf(..) => Vec::new(),
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k) = (a.rows(), a.cols());
            let n = b.cols();
            let mut da = vec![0.0; m * k];
            mm_nt_acc(g.data(), b.data(), &mut da, m, n, k);
            let mut db = vec![0.0; k * n];
            mm_tn_acc(a.data(), g.data(), &mut db, m, k, n);
            vec![
                Some(Tensor::new(a.shape().to_vec(), da).unwrap()),
                Some(Tensor::new(b.shape().to_vec(), db).unwrap()),
            ]
        }
        Op::MatMulNT => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k) = (a.rows(), a.cols());
            let n = b.rows();
            let mut da = vec![0.0; m * k];
            mm_acc(g.data(), b.data(), &mut da, m, n, k);
            let mut db = vec![0.0; n * k];
            mm_tn_acc(g.data(), a.data(), &mut db, m, n, k);
            vec![
                Some(Tensor::new(a.shape().to_vec(), da).unwrap()),
                Some(Tensor::new(b.shape().to_vec(), db).unwrap()),
            ]
        }
        Op::Add => vec![Some(g.clone()), Some(g.clone())],
        Op::Sub => vec![Some(g.clone()), Some(g.map(|x| -x))],
        Op::Mul => vec![
            Some(zip_map(g, inputs[1], |a, b| a * b)),
            Some(zip_map(g, inputs[0], |a, b| a * b)),
        ],
        Op::Relu => vec![Some(zip_map(g, inputs[0], |gi, x| {
            if x > 0.0 {
                gi
            } else {
                0.0
            }
        }))],
        Op::Sigmoid => vec![Some(zip_map(g, output, |gi, s| gi * s * (1.0 - s)))],
        Op::Exp => vec![Some(zip_map(g, output, |gi, e| gi * e))],
        Op::Log => vec![Some(zip_map(g, inputs[0], |gi, x| gi / x))],
        Op::Scale(s) => vec![Some(g.map(|x| x * s))],
        Op::AddRow => {
            let (m, n) = (g.rows(), g.cols());
            let mut dr = vec![0.0; n];
            for i in 0..m {
                for (d, &gi) in dr.iter_mut().zip(g.row(i)) {
                    *d += gi;
                }
            }
            vec![Some(g.clone()), Some(Tensor::new(vec![1, n], dr).unwrap())]
        }
        Op::MulRow => {
            let (a, row) = (inputs[0], inputs[1]);
            let (m, n) = (g.rows(), g.cols());
            let mut da = g.data().to_vec();
            let mut dr = vec![0.0; n];
            for i in 0..m {
                for j in 0..n {
                    da[i * n + j] *= row.data()[j];
                    dr[j] += g.data()[i * n + j] * a.data()[i * n + j];
                }
            }
            vec![
                Some(Tensor::new(vec![m, n], da).unwrap()),
                Some(Tensor::new(vec![1, n], dr).unwrap()),
            ]
        }
        Op::MaskedSoftmax | Op::SoftmaxRows => {
            let (m, n) = (output.rows(), output.cols());
            let mut ds = vec![0.0; m * n];
            for i in 0..m {
                softmax_row_backward(output.row(i), g.row(i), &mut ds[i * n..(i + 1) * n]);
            }
            let ds = Tensor::new(vec![m, n], ds).unwrap();
            if matches!(op, Op::MaskedSoftmax) {
                vec![Some(ds), None]
            } else {
                vec![Some(ds)]
            }
        }
        Op::LayerNorm(eps) => {
            let (x, gamma) = (inputs[0], inputs[1]);
            let (_, xhat, inv_std) = layer_norm_forward(x, gamma, inputs[2], *eps).unwrap();
            let (m, n) = (x.rows(), x.cols());
            let mut dx = vec![0.0; m * n];
            let mut dgamma = vec![0.0; n];
            let mut dbeta = vec![0.0; n];
            for i in 0..m {
                let gi = g.row(i);
                let hi = &xhat[i * n..(i + 1) * n];
                let mut sum_d = 0.0;
                let mut sum_dh = 0.0;
                for j in 0..n {
                    let d = gi[j] * gamma.data()[j];
                    sum_d += d;
                    sum_dh += d * hi[j];
                    dgamma[j] += gi[j] * hi[j];
                    dbeta[j] += gi[j];
                }
                let nf = n as f64;
                for j in 0..n {
                    let d = gi[j] * gamma.data()[j];
                    dx[i * n + j] = inv_std[i] * (d - sum_d / nf - hi[j] * sum_dh / nf);
                }
            }
            vec![
                Some(Tensor::new(vec![m, n], dx).unwrap()),
                Some(Tensor::new(vec![1, n], dgamma).unwrap()),
                Some(Tensor::new(vec![1, n], dbeta).unwrap()),
            ]
        }
        Op::Sum => {
            let s = g.data()[0];
            vec![Some(Tensor::full(inputs[0].shape().to_vec(), s))]
        }
        Op::Reshape(_) => vec![Some(g.reshaped(inputs[0].shape().to_vec()).unwrap())],
        Op::ConcatCols => {
            let m = g.rows();
            let n = g.cols();
            let mut offset = 0;
            let mut grads = Vec::with_capacity(inputs.len());
            for t in inputs {
                let c = t.cols();
                let mut d = Vec::with_capacity(m * c);
                for i in 0..m {
                    d.extend_from_slice(&g.data()[i * n + offset..i * n + offset + c]);
                }
                offset += c;
                grads.push(Some(Tensor::new(t.shape().to_vec(), d).unwrap()));
            }
            grads
        }
        Op::Custom(op) => op.backward(inputs, output, g),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_leaf(&mut self, value: Tensor, kind: LeafKind, name: Option<String>) -> NodeId {
        let requires_grad = matches!(kind, LeafKind::Trainable | LeafKind::Input);
        self.nodes.push(Node {
            op: Op::Leaf(kind, name),
            inputs: Vec::new(),
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, LeafKind::Constant, None)
    }

    /// Unnamed leaf whose gradient is reported through [`Gradients::get`].
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, LeafKind::Input, None)
    }

    pub fn param(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> NodeId {
        let kind = if trainable {
            LeafKind::Trainable
        } else {
            LeafKind::Frozen
        };
        self.push_leaf(value, kind, Some(name.into()))
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn leaf_kind(&self, id: NodeId) -> Option<LeafKind> {
        match &self.nodes[id.0].op {
            Op::Leaf(kind, _) => Some(*kind),
            _ => None,
        }
    }

    /// Named parameter leaves in creation order.
    pub fn params(&self) -> impl Iterator<Item = (NodeId, &str, LeafKind)> {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match &n.op {
            Op::Leaf(kind, Some(name)) => Some((NodeId(i), name.as_str(), *kind)),
            _ => None,
        })
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>) -> Result<NodeId> {
        let value = {
            let vals: Vec<&Tensor> = inputs.iter().map(|&i| &self.nodes[i.0].value).collect();
            eval(&op, &vals)?
        };
        let requires_grad = inputs.iter().any(|&i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            op,
            inputs,
            value,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::MatMul, vec![a, b])
    }

    /// `a * b^T` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::MatMulNT, vec![a, b])
    }

    pub fn elementwise(&mut self, kind: Elementwise, operands: &[NodeId]) -> Result<NodeId> {
        let arity = match kind {
            Elementwise::Add | Elementwise::Mul => 2,
            _ => 1,
        };
        if operands.len() != arity {
            return Err(Error::contract(format!(
                "{kind:?} takes {arity} operand(s), got {}",
                operands.len()
            )));
        }
        let op = match kind {
            Elementwise::Add => Op::Add,
            Elementwise::Mul => Op::Mul,
            Elementwise::Relu => Op::Relu,
            Elementwise::Sigmoid => Op::Sigmoid,
            Elementwise::Scale(s) => Op::Scale(s),
        };
        self.push(op, operands.to_vec())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add, vec![a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Sub, vec![a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Mul, vec![a, b])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Relu, vec![a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sigmoid, vec![a])
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Exp, vec![a])
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Log, vec![a])
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        self.push(Op::Scale(factor), vec![a])
    }

    /// Adds a `[1, n]` row to every row of an `[m, n]` matrix.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.push(Op::AddRow, vec![a, row])
    }

    /// Multiplies every row of an `[m, n]` matrix by a `[1, n]` row.
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.push(Op::MulRow, vec![a, row])
    }

    /// Row-wise softmax of `scores + mask`; `mask` entries must be 0 or -inf.
    pub fn masked_softmax(&mut self, scores: NodeId, mask: NodeId) -> Result<NodeId> {
        let bad = self.nodes[mask.0]
            .value
            .data()
            .iter()
            .any(|&m| m != 0.0 && m != f64::NEG_INFINITY);
        if bad {
            return Err(Error::contract("attention mask entries must be 0 or -inf"));
        }
        self.push(Op::MaskedSoftmax, vec![scores, mask])
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::SoftmaxRows, vec![a])
    }

    /// Per-row normalization over columns with `[1, n]` gain and shift.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        self.push(Op::LayerNorm(eps), vec![x, gamma, beta])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sum, vec![a])
    }

    pub fn reshape(&mut self, a: NodeId, shape: impl Into<Vec<usize>>) -> Result<NodeId> {
        self.push(Op::Reshape(shape.into()), vec![a])
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::contract("concat_cols needs at least one input"));
        }
        self.push(Op::ConcatCols, parts.to_vec())
    }

    pub fn custom(&mut self, op: Arc<dyn CustomOp>, inputs: &[NodeId]) -> Result<NodeId> {
        self.push(Op::Custom(op), inputs.to_vec())
    }

    /// Replaces a leaf value and re-evaluates every downstream node.
    pub fn set_leaf(&mut self, id: NodeId, value: Tensor) -> Result<()> {
        let node = &mut self.nodes[id.0];
        if !matches!(node.op, Op::Leaf(..)) {
            return Err(Error::contract("only leaves can be assigned"));
        }
        same_shape("set_leaf", &node.value, &value)?;
        node.value = value;
        self.recompute_from(id.0 + 1)
    }

    fn recompute_from(&mut self, start: usize) -> Result<()> {
        for i in start..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf(..)) {
                continue;
            }
            let value = {
                let node = &self.nodes[i];
                let vals: Vec<&Tensor> =
                    node.inputs.iter().map(|&j| &self.nodes[j.0].value).collect();
                eval(&node.op, &vals)?
            };
            self.nodes[i].value = value;
        }
        Ok(())
    }

    /// Reverse-mode gradients of a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_val = &self.nodes[loss.0].value;
        if loss_val.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_val.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::full(loss_val.shape().to_vec(), 1.0));
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf(..)) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let vals: Vec<&Tensor> = node.inputs.iter().map(|&j| &self.nodes[j.0].value).collect();
            let input_grads = backward_rule(&node.op, &vals, &node.value, &g);
            grads[i] = Some(g);
            for (&inp, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !self.nodes[inp.0].requires_grad {
                    continue;
                }
                match &mut grads[inp.0] {
                    Some(acc) => acc.add_assign(&ig),
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        let mut named = BTreeMap::new();
        for (id, name, kind) in self.params() {
            if kind == LeafKind::Trainable && id.0 <= loss.0 {
                let g = grads[id.0]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(self.nodes[id.0].value.shape().to_vec()));
                named.insert(name.to_string(), g);
            }
        }
        Ok(Gradients {
            by_node: grads,
            named,
        })
    }
}

impl fmt::Display for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, n) in self.nodes.iter().enumerate() {
            writeln!(f, "%{i} = {}{:?} -> {:?}", n.op.name(), n.inputs, n.value.shape())?;
        }
        Ok(())
    }
}
