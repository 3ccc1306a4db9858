//! Dense loops shared by the differentiable operations.
//!
//! Each output element accumulates its products in increasing inner-index
//! order, independent of the matrix extents, so a row computed as part of a
//! larger product is bit-identical to the same row computed alone.

/// `c += a · b` with `a: [m,k]`, `b: [k,n]`, `c: [m,n]`, all row-major.
pub(crate) fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for (a_row, c_row) in a.chunks_exact(k).zip(c.chunks_exact_mut(n)) {
        for (&aip, b_row) in a_row.iter().zip(b.chunks_exact(n)) {
            for (cij, &bpj) in c_row.iter_mut().zip(b_row) {
                *cij += aip * bpj;
            }
        }
    }
}

/// `c += aᵀ · b` with `a: [k,m]`, `b: [k,n]`, `c: [m,n]`.
pub(crate) fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for (a_row, b_row) in a.chunks_exact(m).zip(b.chunks_exact(n)) {
        for (&api, c_row) in a_row.iter().zip(c.chunks_exact_mut(n)) {
            for (cij, &bpj) in c_row.iter_mut().zip(b_row) {
                *cij += api * bpj;
            }
        }
    }
}

/// `c += a · bᵀ` with `a: [m,k]`, `b: [n,k]`, `c: [m,n]`.
pub(crate) fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    let bt = transpose(n, k, b);
    gemm_nn(m, k, n, a, &bt, c);
}

/// Transpose of a row-major `[rows, cols]` matrix.
pub(crate) fn transpose(rows: usize, cols: usize, a: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), rows * cols);
    let mut out = vec![0.0; a.len()];
    for (i, row) in a.chunks_exact(cols).enumerate() {
        for (j, &v) in row.iter().enumerate() {
            out[j * rows + i] = v;
        }
    }
    out
}

/// Splits a shape around `axis` into (outer, axis extent, inner).
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
