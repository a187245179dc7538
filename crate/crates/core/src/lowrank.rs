//! Factorized low-rank matrices and the truncation algebra.
//!
//! An [`RkMatrix`] stores `R = A * B^T` with thin factors. The operations
//! here never form `R` explicitly: truncation works on a thin QR of the
//! right factor followed by an SVD of a small matrix, so the cost scales
//! with the factor ranks instead of the block size.

use alloc::vec::Vec;
use core::ops::Range;

use nalgebra::DMatrix;

use crate::counters::OpCounters;
use crate::dense::{hcat, thin_qr, thin_svd};
use crate::error::{Error, Result};

/// Low-rank matrix in factorized form `A * B^T`.
///
/// `a` has one column per rank unit, `b` likewise; the represented matrix
/// has shape `a.nrows() x b.nrows()`. Rank zero (factors with no columns)
/// is a first-class value representing the zero matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RkMatrix {
    /// Left factor, `rows x rank`.
    pub a: DMatrix<f64>,
    /// Right factor, `cols x rank`.
    pub b: DMatrix<f64>,
}

impl RkMatrix {
    /// Rank-zero matrix of the given shape.
    pub fn zero(rows: usize, cols: usize) -> Self {
        Self {
            a: DMatrix::zeros(rows, 0),
            b: DMatrix::zeros(cols, 0),
        }
    }

    pub fn from_factors(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if a.ncols() != b.ncols() {
            return Err(Error::ShapeMismatch {
                expected: (a.nrows(), a.ncols()),
                got: (b.nrows(), b.ncols()),
            });
        }
        Ok(Self { a, b })
    }

    pub fn nrows(&self) -> usize {
        self.a.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.b.nrows()
    }

    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    /// Represented matrix `A * B^T`.
    pub fn to_dense(&self) -> DMatrix<f64> {
        if self.rank() == 0 {
            return DMatrix::zeros(self.nrows(), self.ncols());
        }
        &self.a * self.b.transpose()
    }

    /// The adjoint `B * A^T` (factors swapped).
    pub fn adjoint(&self) -> RkMatrix {
        RkMatrix {
            a: self.b.clone(),
            b: self.a.clone(),
        }
    }
}

/// Rank selection rule for truncations.
///
/// The chosen rank is `min(max_rank, k)` where `k` is the smallest index
/// such that `sigma_{k+1} <= rel_tol * sigma_1` for the descending
/// singular values of the matrix being truncated. The tolerance is
/// floored at [`TruncationControl::NOISE_FLOOR`], so `rel_tol = 0`
/// together with `max_rank = None` is lossless up to machine noise:
/// singular values indistinguishable from rounding error are dropped,
/// and a matrix of exact rank `r` keeps rank `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationControl {
    pub max_rank: Option<usize>,
    pub rel_tol: f64,
}

impl TruncationControl {
    /// Lossless control: unbounded rank, zero tolerance.
    pub const EXACT: Self = Self {
        max_rank: None,
        rel_tol: 0.0,
    };

    /// Relative floor below which singular values count as rounding
    /// noise (a few dozen ulps of f64).
    pub const NOISE_FLOOR: f64 = 1e-14;

    pub fn with_tol(rel_tol: f64) -> Self {
        Self {
            max_rank: None,
            rel_tol,
        }
    }

    pub fn with_rank(max_rank: usize) -> Self {
        Self {
            max_rank: Some(max_rank),
            rel_tol: 0.0,
        }
    }

    pub fn new(max_rank: Option<usize>, rel_tol: f64) -> Self {
        Self { max_rank, rel_tol }
    }

    /// Applies the rank rule to descending singular values.
    pub fn choose_rank(&self, sigma: &[f64]) -> usize {
        let sigma1 = sigma.first().copied().unwrap_or(0.0);
        let thresh = self.rel_tol.max(Self::NOISE_FLOOR) * sigma1;
        let mut k = sigma.len();
        for (i, &s) in sigma.iter().enumerate() {
            if s <= thresh {
                k = i;
                break;
            }
        }
        match self.max_rank {
            Some(m) => k.min(m),
            None => k,
        }
    }
}

/// Assembles truncated factors from an SVD `u * diag(s) * vt` of the
/// small core matrix and the orthogonal column basis `qb` of the right
/// factor: the left factor keeps orthonormal columns, the singular values
/// go into the right factor.
fn factors_from_svd(
    u: &DMatrix<f64>,
    s: &[f64],
    vt: &DMatrix<f64>,
    qb: &DMatrix<f64>,
    k: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let a = u.columns(0, k).into_owned();
    let mut v = vt.rows(0, k).transpose();
    for (j, &sj) in s.iter().take(k).enumerate() {
        v.column_mut(j).scale_mut(sj);
    }
    let b = qb * v;
    (a, b)
}

/// Replaces `r` by its best rank-`k` approximation under `ctl`.
///
/// Uses a thin QR of the right factor and an SVD of `A * R_B^T`; the
/// result has an orthonormal left factor and carries the singular values
/// in the right factor.
pub fn svd_trunc(r: &RkMatrix, ctl: &TruncationControl, counters: &OpCounters) -> RkMatrix {
    if r.rank() == 0 {
        return RkMatrix::zero(r.nrows(), r.ncols());
    }
    let (qb, rb) = thin_qr(&r.b, counters);
    let ahat = &r.a * rb.transpose();
    let (u, s, vt) = thin_svd(&ahat, counters);
    let k = ctl.choose_rank(&s);
    let (a, b) = factors_from_svd(&u, &s, &vt, &qb, k);
    RkMatrix { a, b }
}

/// Truncated addition `r2 <- trunc(r2 + alpha * r1)`.
///
/// Joint thin QR of `[B D]`, SVD of `[alpha*A C] * R_B^T`, then rank
/// selection under `ctl`.
pub fn rkadd(
    alpha: f64,
    r1: &RkMatrix,
    r2: &mut RkMatrix,
    ctl: &TruncationControl,
    counters: &OpCounters,
) -> Result<()> {
    if r1.nrows() != r2.nrows() || r1.ncols() != r2.ncols() {
        return Err(Error::ShapeMismatch {
            expected: (r2.nrows(), r2.ncols()),
            got: (r1.nrows(), r1.ncols()),
        });
    }
    counters.bump_rkadd();
    if r1.rank() + r2.rank() == 0 {
        return Ok(());
    }
    let bd = hcat(&r1.b, &r2.b);
    let (qb, rb) = thin_qr(&bd, counters);
    let mut a1 = r1.a.clone();
    a1.scale_mut(alpha);
    let ac = hcat(&a1, &r2.a);
    let ahat = ac * rb.transpose();
    let (u, s, vt) = thin_svd(&ahat, counters);
    let k = ctl.choose_rank(&s);
    let (a, b) = factors_from_svd(&u, &s, &vt, &qb, k);
    r2.a = a;
    r2.b = b;
    Ok(())
}

/// Merges parts sharing a row index set into one low-rank matrix that
/// approximates the horizontal concatenation `[R_1 ... R_p]`.
pub fn rowmerge(
    parts: &[RkMatrix],
    ctl: &TruncationControl,
    counters: &OpCounters,
) -> Result<RkMatrix> {
    if parts.is_empty() {
        return Err(Error::EmptyInput);
    }
    let rows = parts[0].nrows();
    if parts.iter().any(|p| p.nrows() != rows) {
        return Err(Error::RaggedGrid);
    }
    let total_cols: usize = parts.iter().map(|p| p.ncols()).sum();
    if parts.iter().all(|p| p.rank() == 0) {
        return Ok(RkMatrix::zero(rows, total_cols));
    }
    // Per-part QR of the right factor; the small core matrices are
    // concatenated and decomposed once.
    let mut qs: Vec<DMatrix<f64>> = Vec::with_capacity(parts.len());
    let mut ahat = DMatrix::<f64>::zeros(rows, 0);
    for p in parts {
        if p.rank() == 0 {
            qs.push(DMatrix::zeros(p.ncols(), 0));
            continue;
        }
        let (qj, rbj) = thin_qr(&p.b, counters);
        ahat = hcat(&ahat, &(&p.a * rbj.transpose()));
        qs.push(qj);
    }
    let (u, s, vt) = thin_svd(&ahat, counters);
    let k = ctl.choose_rank(&s);
    let a = u.columns(0, k).into_owned();
    let mut v = vt.rows(0, k).transpose();
    for (j, &sj) in s.iter().take(k).enumerate() {
        v.column_mut(j).scale_mut(sj);
    }
    // b = blockdiag(Q_1 ... Q_p) * v, assembled per row block.
    let mut b = DMatrix::<f64>::zeros(total_cols, k);
    let mut row_off = 0;
    let mut core_off = 0;
    for (p, qj) in parts.iter().zip(&qs) {
        let pj = qj.ncols();
        if pj > 0 {
            b.view_mut((row_off, 0), (p.ncols(), k))
                .copy_from(&(qj * v.rows(core_off, pj)));
        }
        row_off += p.ncols();
        core_off += pj;
    }
    Ok(RkMatrix { a, b })
}

/// Merges a `p x q` grid of low-rank blocks into one low-rank matrix:
/// each block column is merged via [`rowmerge`] on adjoints, then the
/// columns are merged across.
pub fn rkmerge(
    grid: &[Vec<RkMatrix>],
    ctl: &TruncationControl,
    counters: &OpCounters,
) -> Result<RkMatrix> {
    if grid.is_empty() || grid[0].is_empty() {
        return Err(Error::EmptyInput);
    }
    let q = grid[0].len();
    if grid.iter().any(|row| row.len() != q) {
        return Err(Error::RaggedGrid);
    }
    let p = grid.len();
    for i in 0..p {
        for j in 0..q {
            if grid[i][j].nrows() != grid[i][0].nrows() || grid[i][j].ncols() != grid[0][j].ncols()
            {
                return Err(Error::RaggedGrid);
            }
        }
    }
    counters.bump_rkmerge();
    // Column j stacked vertically equals the adjoint of [R_1j^T ... R_pj^T].
    let mut cols: Vec<RkMatrix> = Vec::with_capacity(q);
    for j in 0..q {
        let adjoints: Vec<RkMatrix> = (0..p).map(|i| grid[i][j].adjoint()).collect();
        cols.push(rowmerge(&adjoints, ctl, counters)?);
    }
    let col_adjoints: Vec<RkMatrix> = cols.iter().map(|c| c.adjoint()).collect();
    rowmerge(&col_adjoints, ctl, counters)
}

/// Restriction of a low-rank matrix to a sub-block: the factors are
/// row-sliced, no arithmetic is performed.
pub fn rk_restrict(r: &RkMatrix, rows: Range<usize>, cols: Range<usize>) -> Result<RkMatrix> {
    if rows.is_empty() || cols.is_empty() || rows.end > r.nrows() || cols.end > r.ncols() {
        return Err(Error::InvalidRange);
    }
    Ok(RkMatrix {
        a: r.a.rows(rows.start, rows.len()).into_owned(),
        b: r.b.rows(cols.start, cols.len()).into_owned(),
    })
}
