//! Tiny dense kernels shared by the model code.
//!
//! Matrices are row-major `&[f64]` slices with explicit dimensions; there
//! is no matrix type. Shapes are asserted because every caller is internal
//! and a mismatch is a bug, not an input error.

/// y += W x for a row-major (rows x cols) matrix.
pub fn matvec_add(w: &[f64], x: &[f64], y: &mut [f64], rows: usize, cols: usize) {
    assert_eq!(w.len(), rows * cols);
    assert_eq!(x.len(), cols);
    assert_eq!(y.len(), rows);
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        y[r] += acc;
    }
}

/// x += W^T g, the input-gradient half of a matvec backward pass.
pub fn matvec_t_add(w: &[f64], g: &[f64], x: &mut [f64], rows: usize, cols: usize) {
    assert_eq!(w.len(), rows * cols);
    assert_eq!(g.len(), rows);
    assert_eq!(x.len(), cols);
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let gr = g[r];
        for (xc, wi) in x.iter_mut().zip(row) {
            *xc += gr * wi;
        }
    }
}

/// dW += g x^T, the weight-gradient half of a matvec backward pass.
pub fn outer_add(dw: &mut [f64], g: &[f64], x: &[f64], rows: usize, cols: usize) {
    assert_eq!(dw.len(), rows * cols);
    assert_eq!(g.len(), rows);
    assert_eq!(x.len(), cols);
    for r in 0..rows {
        let gr = g[r];
        let drow = &mut dw[r * cols..(r + 1) * cols];
        for (dc, xc) in drow.iter_mut().zip(x) {
            *dc += gr * xc;
        }
    }
}

pub fn add_assign(y: &mut [f64], x: &[f64]) {
    assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += xi;
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// log(sum(exp(x))) with max subtraction; -inf for an empty slice never occurs
/// here so the max is taken over at least one element.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = x.iter().map(|v| (v - m).exp()).sum();
    m + s.ln()
}

/// Overwrites `x` with softmax(x), numerically stabilised.
pub fn softmax_inplace(x: &mut [f64]) {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in x.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in x.iter_mut() {
        *v /= s;
    }
}
