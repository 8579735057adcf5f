//! Plain-array kernels shared by the graph ops and the eager helpers.

/// `c[m,n] += a[m,k] * b[k,n]`
pub(crate) fn mm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (c_ij, &b_pj) in c_row.iter_mut().zip(b_row) {
                *c_ij += a_ip * b_pj;
            }
        }
    }
}

/// `c[m,n] += a[m,k] * b[n,k]^T`
pub(crate) fn mm_nt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            c[i * n + j] += dot(a_row, b_row);
        }
    }
}

/// `c[m,n] += a[k,m]^T * b[k,n]`
pub(crate) fn mm_tn_acc(a: &[f64], b: &[f64], c: &mut [f64], k: usize, m: usize, n: usize) {
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &a_pi) in a_row.iter().enumerate() {
            if a_pi == 0.0 {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (c_ij, &b_pj) in c_row.iter_mut().zip(b_row) {
                *c_ij += a_pi * b_pj;
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax of `scores + mask` written into `out`. A row with no finite
/// entry yields all zeros; masked entries are exactly zero.
pub(crate) fn masked_softmax_row(scores: &[f64], mask: Option<&[f64]>, out: &mut [f64]) {
    let shifted = |j: usize| match mask {
        Some(m) if m[j] == f64::NEG_INFINITY => f64::NEG_INFINITY,
        Some(m) => scores[j] + m[j],
        None => scores[j],
    };
    let mut max = f64::NEG_INFINITY;
    for j in 0..scores.len() {
        max = max.max(shifted(j));
    }
    if max == f64::NEG_INFINITY {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    let mut total = 0.0;
    for (j, o) in out.iter_mut().enumerate() {
        let s = shifted(j);
        *o = if s == f64::NEG_INFINITY {
            0.0
        } else {
            (s - max).exp()
        };
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Backward of a row softmax: `ds = p * (g - <p, g>)`.
pub(crate) fn softmax_row_backward(p: &[f64], g: &[f64], ds: &mut [f64]) {
    let inner = dot(p, g);
    for ((d, &pj), &gj) in ds.iter_mut().zip(p).zip(g) {
        *d += pj * (gj - inner);
    }
}
