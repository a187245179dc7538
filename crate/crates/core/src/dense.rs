//! Instrumented dense kernels: thin QR and thin SVD.
//!
//! Every truncation in this crate funnels through these two wrappers, so
//! the `qr`/`svd` counters are an exact record of the rank-revealing work
//! performed.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::counters::OpCounters;

/// Thin Householder QR: `m = q * r` with `q` of shape `rows x min(rows, cols)`
/// and orthonormal columns.
pub(crate) fn thin_qr(m: &DMatrix<f64>, counters: &OpCounters) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = m.nrows().min(m.ncols());
    if k == 0 {
        return (
            DMatrix::zeros(m.nrows(), 0),
            DMatrix::zeros(0, m.ncols()),
        );
    }
    counters.bump_qr();
    let qr = m.clone().qr();
    (qr.q(), qr.r())
}

/// Thin SVD with singular values in stable descending order.
pub(crate) fn thin_svd(
    m: &DMatrix<f64>,
    counters: &OpCounters,
) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let k = m.nrows().min(m.ncols());
    if k == 0 {
        return (
            DMatrix::zeros(m.nrows(), 0),
            Vec::new(),
            DMatrix::zeros(0, m.ncols()),
        );
    }
    counters.bump_svd();
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd: u requested");
    let vt = svd.v_t.expect("svd: v_t requested");
    let s: Vec<f64> = svd.singular_values.iter().copied().collect();
    if s.windows(2).all(|w| w[0] >= w[1]) {
        return (u, s, vt);
    }
    // The backend is expected to sort; enforce a stable descending order
    // so ties keep their original positions.
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap());
    let su = u.select_columns(order.iter());
    let svt = vt.select_rows(order.iter());
    let ss = order.iter().map(|&i| s[i]).collect();
    (su, ss, svt)
}

/// Horizontal concatenation `[a b]`; either side may have zero columns.
pub(crate) fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    debug_assert_eq!(a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((0, a.ncols()), b.shape()).copy_from(b);
    out
}
