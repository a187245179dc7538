//! The H-matrix container and its basic operations.
//!
//! An [`HMatrix`] mirrors a block tree: inadmissible leaves hold dense
//! payloads, admissible leaves hold [`RkMatrix`] payloads, subdivided
//! blocks hold son matrices in row-major order. Every node carries its
//! own block metadata (cluster ids, offsets in tree ordering, son grid),
//! so operations recurse without consulting the originating trees.
//!
//! `addeval`/`addevaltrans` are exact (truncation-free) products with
//! thin dense matrices; `rkupdate` adds a low-rank matrix to an
//! H-submatrix with blockwise truncation.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use nalgebra::DMatrix;

use crate::counters::OpCounters;
use crate::dense::thin_svd;
use crate::error::{Error, Result};
use crate::lowrank::{rk_restrict, rkadd, rkmerge, RkMatrix, TruncationControl};
use crate::trees::{Block, BlockKind};

/// Per-node block metadata, copied out of the block tree at construction.
///
/// Offsets are global positions in the tree ordering of the root trees,
/// so a node taken out of a larger matrix keeps meaningful coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockMeta {
    pub row_id: usize,
    pub col_id: usize,
    pub row_offset: usize,
    pub col_offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub n_row_sons: usize,
    pub n_col_sons: usize,
}

impl BlockMeta {
    fn from_block(b: &Block) -> Self {
        let (nr, nc) = b.son_grid();
        Self {
            row_id: b.row_id(),
            col_id: b.col_id(),
            row_offset: b.row_range().start,
            col_offset: b.col_range().start,
            rows: b.rows(),
            cols: b.cols(),
            n_row_sons: nr,
            n_col_sons: nc,
        }
    }

    fn transposed(&self) -> Self {
        Self {
            row_id: self.col_id,
            col_id: self.row_id,
            row_offset: self.col_offset,
            col_offset: self.row_offset,
            rows: self.cols,
            cols: self.rows,
            n_row_sons: self.n_col_sons,
            n_col_sons: self.n_row_sons,
        }
    }
}

/// Payload of an H-matrix node.
#[derive(Debug, Clone, PartialEq)]
pub enum HData {
    /// Nearfield matrix of an inadmissible leaf.
    Dense(DMatrix<f64>),
    /// Factorized payload of an admissible leaf.
    LowRank(RkMatrix),
    /// Son matrices in row-major order over the son grid.
    Sons(Vec<HMatrix>),
}

/// Hierarchical matrix over a block tree.
#[derive(Debug, Clone, PartialEq)]
pub struct HMatrix {
    pub(crate) meta: BlockMeta,
    pub(crate) data: HData,
}

impl HMatrix {
    pub(crate) fn from_parts(meta: BlockMeta, data: HData) -> Self {
        Self { meta, data }
    }

    pub fn meta(&self) -> &BlockMeta {
        &self.meta
    }

    pub fn rows(&self) -> usize {
        self.meta.rows
    }

    pub fn cols(&self) -> usize {
        self.meta.cols
    }

    pub fn row_id(&self) -> usize {
        self.meta.row_id
    }

    pub fn col_id(&self) -> usize {
        self.meta.col_id
    }

    pub fn data(&self) -> &HData {
        &self.data
    }

    pub fn is_leaf(&self) -> bool {
        !matches!(self.data, HData::Sons(_))
    }

    pub fn is_dense_leaf(&self) -> bool {
        matches!(self.data, HData::Dense(_))
    }

    pub fn is_lowrank_leaf(&self) -> bool {
        matches!(self.data, HData::LowRank(_))
    }

    /// Rank of an admissible leaf payload.
    pub fn leaf_rank(&self) -> Option<usize> {
        match &self.data {
            HData::LowRank(rk) => Some(rk.rank()),
            _ => None,
        }
    }

    pub fn sons(&self) -> &[HMatrix] {
        match &self.data {
            HData::Sons(s) => s,
            _ => &[],
        }
    }

    pub(crate) fn sons_mut(&mut self) -> &mut [HMatrix] {
        match &mut self.data {
            HData::Sons(s) => s,
            _ => &mut [],
        }
    }

    /// Son grid dimensions; `(0, 0)` for leaves.
    pub fn son_grid(&self) -> (usize, usize) {
        (self.meta.n_row_sons, self.meta.n_col_sons)
    }

    pub fn son(&self, i: usize, j: usize) -> &HMatrix {
        &self.sons()[i * self.meta.n_col_sons + j]
    }

    pub(crate) fn son_mut(&mut self, i: usize, j: usize) -> &mut HMatrix {
        let nc = self.meta.n_col_sons;
        &mut self.sons_mut()[i * nc + j]
    }

    /// Splits a binary square node into its four sons.
    pub(crate) fn split4_mut(&mut self) -> Option<[&mut HMatrix; 4]> {
        if self.meta.n_row_sons != 2 || self.meta.n_col_sons != 2 {
            return None;
        }
        match &mut self.data {
            HData::Sons(sons) => {
                let [a, b, c, d] = &mut sons[..] else {
                    return None;
                };
                Some([a, b, c, d])
            }
            _ => None,
        }
    }

    /// A structurally identical matrix with all payloads zero.
    pub fn zero_like(&self) -> HMatrix {
        let data = match &self.data {
            HData::Dense(d) => HData::Dense(DMatrix::zeros(d.nrows(), d.ncols())),
            HData::LowRank(rk) => HData::LowRank(RkMatrix::zero(rk.nrows(), rk.ncols())),
            HData::Sons(sons) => HData::Sons(sons.iter().map(HMatrix::zero_like).collect()),
        };
        HMatrix {
            meta: self.meta,
            data,
        }
    }

    /// Resets all payloads to zero in place, keeping the structure.
    pub fn zero_out(&mut self) {
        match &mut self.data {
            HData::Dense(d) => d.fill(0.0),
            HData::LowRank(rk) => *rk = RkMatrix::zero(rk.nrows(), rk.ncols()),
            HData::Sons(sons) => sons.iter_mut().for_each(HMatrix::zero_out),
        }
    }

    /// Moves payloads from a structurally identical matrix into `self`.
    pub(crate) fn take_data_from(&mut self, other: HMatrix) {
        debug_assert_eq!(self.meta, other.meta);
        self.data = other.data;
    }
}

/// Zero H-matrix over a block tree: dense payloads zero, low-rank
/// payloads rank zero.
pub fn h_zero(block: &Block) -> HMatrix {
    let meta = BlockMeta::from_block(block);
    let data = match block.kind() {
        BlockKind::InadmissibleLeaf => HData::Dense(DMatrix::zeros(block.rows(), block.cols())),
        BlockKind::AdmissibleLeaf => HData::LowRank(RkMatrix::zero(block.rows(), block.cols())),
        BlockKind::Subdivided => HData::Sons(block.sons().iter().map(h_zero).collect()),
    };
    HMatrix { meta, data }
}

/// Compresses a dense matrix into an H-matrix over the given block tree.
///
/// Inadmissible leaves copy their entries; admissible leaves store the
/// truncated SVD of the corresponding sub-block under `ctl`.
pub fn h_from_dense(
    block: &Block,
    m: &DMatrix<f64>,
    ctl: &TruncationControl,
    counters: &OpCounters,
) -> Result<HMatrix> {
    if m.shape() != (block.rows(), block.cols()) {
        return Err(Error::ShapeMismatch {
            expected: (block.rows(), block.cols()),
            got: m.shape(),
        });
    }
    let base = (block.row_range().start, block.col_range().start);
    Ok(from_dense_rec(block, m, base, ctl, counters))
}

fn from_dense_rec(
    block: &Block,
    m: &DMatrix<f64>,
    base: (usize, usize),
    ctl: &TruncationControl,
    counters: &OpCounters,
) -> HMatrix {
    let meta = BlockMeta::from_block(block);
    let view = m.view(
        (meta.row_offset - base.0, meta.col_offset - base.1),
        (meta.rows, meta.cols),
    );
    let data = match block.kind() {
        BlockKind::InadmissibleLeaf => HData::Dense(view.into_owned()),
        BlockKind::AdmissibleLeaf => {
            let slice = view.into_owned();
            let (u, s, vt) = thin_svd(&slice, counters);
            let k = ctl.choose_rank(&s);
            let a = u.columns(0, k).into_owned();
            let mut b = vt.rows(0, k).transpose();
            for (j, &sj) in s.iter().take(k).enumerate() {
                b.column_mut(j).scale_mut(sj);
            }
            HData::LowRank(RkMatrix { a, b })
        }
        BlockKind::Subdivided => HData::Sons(
            block
                .sons()
                .iter()
                .map(|s| from_dense_rec(s, m, base, ctl, counters))
                .collect(),
        ),
    };
    HMatrix { meta, data }
}

/// Assembles the represented dense matrix.
pub fn h_to_dense(g: &HMatrix) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(g.rows(), g.cols());
    let base = (g.meta.row_offset, g.meta.col_offset);
    to_dense_rec(g, &mut out, base);
    out
}

fn to_dense_rec(g: &HMatrix, out: &mut DMatrix<f64>, base: (usize, usize)) {
    let at = (g.meta.row_offset - base.0, g.meta.col_offset - base.1);
    match &g.data {
        HData::Dense(d) => out.view_mut(at, d.shape()).copy_from(d),
        HData::LowRank(rk) => out
            .view_mut(at, (rk.nrows(), rk.ncols()))
            .copy_from(&rk.to_dense()),
        HData::Sons(sons) => {
            for s in sons {
                to_dense_rec(s, out, base);
            }
        }
    }
}

/// `y += alpha * G * x`, exact up to roundoff.
///
/// `x` has one row per column index of `g`, `y` one row per row index;
/// the shared column count is the multi-vector width.
pub fn addeval(alpha: f64, g: &HMatrix, x: &DMatrix<f64>, y: &mut DMatrix<f64>) -> Result<()> {
    if x.nrows() != g.cols() || y.nrows() != g.rows() || x.ncols() != y.ncols() {
        return Err(Error::ShapeMismatch {
            expected: (g.cols(), g.rows()),
            got: (x.nrows(), y.nrows()),
        });
    }
    addeval_rec(alpha, g, x, y, g.meta.col_offset, g.meta.row_offset);
    Ok(())
}

/// Recursion core of [`addeval`]: `x` and `y` stay whole, leaf updates
/// slice them relative to the given offset bases.
pub(crate) fn addeval_rec(
    alpha: f64,
    g: &HMatrix,
    x: &DMatrix<f64>,
    y: &mut DMatrix<f64>,
    x_base: usize,
    y_base: usize,
) {
    let k = x.ncols();
    let xr = g.meta.col_offset - x_base;
    let yr = g.meta.row_offset - y_base;
    match &g.data {
        HData::Dense(n) => {
            let xv = x.view((xr, 0), (g.cols(), k));
            let mut yv = y.view_mut((yr, 0), (g.rows(), k));
            yv.gemm(alpha, n, &xv, 1.0);
        }
        HData::LowRank(rk) => {
            if rk.rank() > 0 {
                let xv = x.view((xr, 0), (g.cols(), k));
                let zhat = rk.b.tr_mul(&xv);
                let mut yv = y.view_mut((yr, 0), (g.rows(), k));
                yv.gemm(alpha, &rk.a, &zhat, 1.0);
            }
        }
        HData::Sons(sons) => {
            for s in sons {
                addeval_rec(alpha, s, x, y, x_base, y_base);
            }
        }
    }
}

/// `x += alpha * G^T * y`, exact up to roundoff.
pub fn addevaltrans(
    alpha: f64,
    g: &HMatrix,
    y: &DMatrix<f64>,
    x: &mut DMatrix<f64>,
) -> Result<()> {
    if y.nrows() != g.rows() || x.nrows() != g.cols() || x.ncols() != y.ncols() {
        return Err(Error::ShapeMismatch {
            expected: (g.rows(), g.cols()),
            got: (y.nrows(), x.nrows()),
        });
    }
    addevaltrans_rec(alpha, g, y, x, g.meta.row_offset, g.meta.col_offset);
    Ok(())
}

pub(crate) fn addevaltrans_rec(
    alpha: f64,
    g: &HMatrix,
    y: &DMatrix<f64>,
    x: &mut DMatrix<f64>,
    y_base: usize,
    x_base: usize,
) {
    let k = y.ncols();
    let yr = g.meta.row_offset - y_base;
    let xr = g.meta.col_offset - x_base;
    match &g.data {
        HData::Dense(n) => {
            let yv = y.view((yr, 0), (g.rows(), k));
            let mut xv = x.view_mut((xr, 0), (g.cols(), k));
            xv.gemm_tr(alpha, n, &yv, 1.0);
        }
        HData::LowRank(rk) => {
            if rk.rank() > 0 {
                let yv = y.view((yr, 0), (g.rows(), k));
                let zhat = rk.a.tr_mul(&yv);
                let mut xv = x.view_mut((xr, 0), (g.cols(), k));
                xv.gemm(alpha, &rk.b, &zhat, 1.0);
            }
        }
        HData::Sons(sons) => {
            for s in sons {
                addevaltrans_rec(alpha, s, y, x, y_base, x_base);
            }
        }
    }
}

/// Truncated update `G <- blocktrunc(G + alpha * R)`.
///
/// Inadmissible leaves receive the exact dense addition, admissible
/// leaves a truncated addition, subdivided blocks recurse on restricted
/// factors.
pub fn rkupdate(
    alpha: f64,
    r: &RkMatrix,
    g: &mut HMatrix,
    ctl: &TruncationControl,
    counters: &OpCounters,
) -> Result<()> {
    if r.nrows() != g.rows() || r.ncols() != g.cols() {
        return Err(Error::ShapeMismatch {
            expected: (g.rows(), g.cols()),
            got: (r.nrows(), r.ncols()),
        });
    }
    rkupdate_rec(alpha, r, g, ctl, counters)
}

fn rkupdate_rec(
    alpha: f64,
    r: &RkMatrix,
    g: &mut HMatrix,
    ctl: &TruncationControl,
    counters: &OpCounters,
) -> Result<()> {
    let meta = g.meta;
    match &mut g.data {
        HData::Dense(n) => {
            counters.bump_rkupdate_leaf();
            if r.rank() > 0 {
                n.gemm(alpha, &r.a, &r.b.transpose(), 1.0);
            }
            Ok(())
        }
        HData::LowRank(rk) => {
            counters.bump_rkupdate_leaf();
            rkadd(alpha, r, rk, ctl, counters)
        }
        HData::Sons(sons) => {
            for s in sons.iter_mut() {
                let rows = s.meta.row_offset - meta.row_offset
                    ..s.meta.row_offset - meta.row_offset + s.rows();
                let cols = s.meta.col_offset - meta.col_offset
                    ..s.meta.col_offset - meta.col_offset + s.cols();
                let sub = restrict_for_update(r, rows, cols);
                rkupdate_rec(alpha, &sub, s, ctl, counters)?;
            }
            Ok(())
        }
    }
}

/// Restriction that tolerates rank zero (a zero factor slice is fine).
fn restrict_for_update(r: &RkMatrix, rows: Range<usize>, cols: Range<usize>) -> RkMatrix {
    RkMatrix {
        a: r.a.rows(rows.start, rows.len()).into_owned(),
        b: r.b.rows(cols.start, cols.len()).into_owned(),
    }
}

/// Structural transpose: payloads transposed, son grid mirrored.
pub fn h_transpose(g: &HMatrix) -> HMatrix {
    let meta = g.meta.transposed();
    let data = match &g.data {
        HData::Dense(d) => HData::Dense(d.transpose()),
        HData::LowRank(rk) => HData::LowRank(rk.adjoint()),
        HData::Sons(_) => {
            let (nr, nc) = g.son_grid();
            let mut sons = Vec::with_capacity(nr * nc);
            for j in 0..nc {
                for i in 0..nr {
                    sons.push(h_transpose(g.son(i, j)));
                }
            }
            HData::Sons(sons)
        }
    };
    HMatrix { meta, data }
}

/// Storage report of an H-matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StorageStats {
    /// Reals held in dense leaf payloads.
    pub dense_reals: usize,
    /// Reals held in low-rank factors.
    pub lowrank_reals: usize,
    /// Maximum admissible-leaf rank.
    pub max_rank: usize,
    /// Maximum admissible-leaf rank per tree level.
    pub max_rank_by_level: Vec<usize>,
}

impl StorageStats {
    pub fn total_reals(&self) -> usize {
        self.dense_reals + self.lowrank_reals
    }
}

/// Exact traversal counts.
pub fn storage_stats(g: &HMatrix) -> StorageStats {
    let mut stats = StorageStats {
        dense_reals: 0,
        lowrank_reals: 0,
        max_rank: 0,
        max_rank_by_level: Vec::new(),
    };
    storage_rec(g, 0, &mut stats);
    stats
}

fn storage_rec(g: &HMatrix, level: usize, stats: &mut StorageStats) {
    if stats.max_rank_by_level.len() <= level {
        stats.max_rank_by_level.resize(level + 1, 0);
    }
    match &g.data {
        HData::Dense(d) => stats.dense_reals += d.nrows() * d.ncols(),
        HData::LowRank(rk) => {
            stats.lowrank_reals += (rk.nrows() + rk.ncols()) * rk.rank();
            stats.max_rank = stats.max_rank.max(rk.rank());
            stats.max_rank_by_level[level] = stats.max_rank_by_level[level].max(rk.rank());
        }
        HData::Sons(sons) => {
            for s in sons {
                storage_rec(s, level + 1, stats);
            }
        }
    }
}

/// Local (block-relative) extent of one son in a subdivision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SonSpan {
    pub id: usize,
    pub offset: usize,
    pub len: usize,
}

/// Row/column son layout of a block, used to split accumulators and to
/// build temporary sub-matrices below block-tree leaves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SonLayout {
    pub rows: Vec<SonSpan>,
    pub cols: Vec<SonSpan>,
}

impl SonLayout {
    /// Layout of a subdivided H-matrix node.
    pub fn of_sons(h: &HMatrix) -> Option<Self> {
        let (nr, nc) = h.son_grid();
        if nr == 0 || nc == 0 {
            return None;
        }
        let rows = (0..nr)
            .map(|i| {
                let s = h.son(i, 0);
                SonSpan {
                    id: s.row_id(),
                    offset: s.meta.row_offset - h.meta.row_offset,
                    len: s.rows(),
                }
            })
            .collect();
        let cols = (0..nc)
            .map(|j| {
                let s = h.son(0, j);
                SonSpan {
                    id: s.col_id(),
                    offset: s.meta.col_offset - h.meta.col_offset,
                    len: s.cols(),
                }
            })
            .collect();
        Some(Self { rows, cols })
    }

    /// Layout derived from subdivided factors: row sons of `x`, column
    /// sons of `y`. Used where the target block is a leaf.
    pub fn of_factors(x: &HMatrix, y: &HMatrix) -> Option<Self> {
        let (xnr, _) = x.son_grid();
        let (_, ync) = y.son_grid();
        if xnr == 0 || ync == 0 {
            return None;
        }
        let rows = (0..xnr)
            .map(|i| {
                let s = x.son(i, 0);
                SonSpan {
                    id: s.row_id(),
                    offset: s.meta.row_offset - x.meta.row_offset,
                    len: s.rows(),
                }
            })
            .collect();
        let cols = (0..ync)
            .map(|j| {
                let s = y.son(0, j);
                SonSpan {
                    id: s.col_id(),
                    offset: s.meta.col_offset - y.meta.col_offset,
                    len: s.cols(),
                }
            })
            .collect();
        Some(Self { rows, cols })
    }
}

/// Runs `f` on temporary sub-matrices of the leaf `z` over virtual son
/// blocks, then folds the results back: dense leaves get their slices
/// copied back, low-rank leaves are rebuilt with a truncated merge.
pub(crate) fn with_virtual_sons(
    z: &mut HMatrix,
    layout: &SonLayout,
    ctl: &TruncationControl,
    counters: &OpCounters,
    f: impl FnOnce(&mut [HMatrix]) -> Result<()>,
) -> Result<()> {
    debug_assert!(z.is_leaf());
    let p = layout.rows.len();
    let q = layout.cols.len();
    let mut temps: Vec<HMatrix> = Vec::with_capacity(p * q);
    for ti in &layout.rows {
        for rj in &layout.cols {
            let meta = BlockMeta {
                row_id: ti.id,
                col_id: rj.id,
                row_offset: z.meta.row_offset + ti.offset,
                col_offset: z.meta.col_offset + rj.offset,
                rows: ti.len,
                cols: rj.len,
                n_row_sons: 0,
                n_col_sons: 0,
            };
            let data = match &z.data {
                HData::Dense(d) => HData::Dense(
                    d.view((ti.offset, rj.offset), (ti.len, rj.len)).into_owned(),
                ),
                HData::LowRank(rk) => HData::LowRank(restrict_for_update(
                    rk,
                    ti.offset..ti.offset + ti.len,
                    rj.offset..rj.offset + rj.len,
                )),
                HData::Sons(_) => unreachable!("virtual sons of a subdivided block"),
            };
            temps.push(HMatrix { meta, data });
        }
    }
    f(&mut temps)?;
    match &mut z.data {
        HData::Dense(d) => {
            for (idx, t) in temps.iter().enumerate() {
                let (i, j) = (idx / q, idx % q);
                let HData::Dense(td) = &t.data else {
                    unreachable!("dense temporaries stay dense");
                };
                d.view_mut(
                    (layout.rows[i].offset, layout.cols[j].offset),
                    (layout.rows[i].len, layout.cols[j].len),
                )
                .copy_from(td);
            }
        }
        HData::LowRank(rk) => {
            let mut grid: Vec<Vec<RkMatrix>> = Vec::with_capacity(p);
            let mut it = temps.into_iter();
            for _ in 0..p {
                let mut row = Vec::with_capacity(q);
                for _ in 0..q {
                    let t = it.next().unwrap();
                    let HData::LowRank(trk) = t.data else {
                        unreachable!("low-rank temporaries stay low-rank");
                    };
                    row.push(trk);
                }
                grid.push(row);
            }
            *rk = rkmerge(&grid, ctl, counters)?;
        }
        HData::Sons(_) => unreachable!(),
    }
    Ok(())
}
