//! Dense `f64` arrays with a tape for reverse-mode differentiation.
//!
//! Every learnable computation in the crate is expressed as nodes on a
//! [`Graph`]. Fused operations owned by other modules plug in through
//! [`CustomOp`] and are held to the same finite-difference checks.

mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod tensor;

pub use gradcheck::{check_gradients, relative_error, GradCheckReport, ParamCheck, DENOM_FLOOR, FD_STEP};
pub use graph::{CustomOp, Elementwise, Gradients, Graph, LeafKind, NodeId};
pub use kernels::sigmoid;
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Eager matrix product.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
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
    kernels::mm_acc(a.data(), b.data(), &mut c, m, k, n);
    Tensor::new(vec![m, n], c)
}

/// Eager row-wise softmax of `scores + mask`. Rows with every entry masked
/// come back as zeros.
pub fn masked_softmax(scores: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let s = g.constant(scores.clone());
    let m = g.constant(mask.clone());
    let out = g.masked_softmax(s, m)?;
    Ok(g.value(out).clone())
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}
