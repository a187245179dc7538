//! Cluster trees over point geometries and block trees with an
//! eta-admissibility condition.
//!
//! A cluster tree recursively partitions an index set; every cluster owns
//! a contiguous range in *tree ordering*, obtained by a single
//! permutation pass over the input points. A block tree pairs row and
//! column clusters and classifies every node as an admissible leaf
//! (stored low-rank), an inadmissible leaf (stored dense) or subdivided.
//!
//! Splitting is geometric bisection along the longest bounding-box axis
//! at the coordinate median, ties broken by the lowest axis index;
//! degenerate (zero-extent) boxes split at the index midpoint. A pair
//! `(t, s)` is admissible iff the boxes are separated
//! (`dist > 0`) and `min(diam(t), diam(s)) <= eta * dist(t, s)`.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::scalar::sqrt;

/// Axis-aligned bounding box with per-axis min/max coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundingBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoundingBox {
    fn of_points(points: &[Vec<f64>], idx: &[usize], dim: usize) -> Self {
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for &i in idx {
            for d in 0..dim {
                let x = points[i][d];
                if x < lo[d] {
                    lo[d] = x;
                }
                if x > hi[d] {
                    hi[d] = x;
                }
            }
        }
        Self { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    /// Euclidean diameter.
    pub fn diameter(&self) -> f64 {
        let mut s = 0.0;
        for d in 0..self.dim() {
            let e = self.hi[d] - self.lo[d];
            s += e * e;
        }
        sqrt(s)
    }

    /// Euclidean distance between two boxes (zero if they intersect).
    pub fn distance(&self, other: &BoundingBox) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        let mut s = 0.0;
        for d in 0..self.dim() {
            let gap = (self.lo[d] - other.hi[d]).max(other.lo[d] - self.hi[d]).max(0.0);
            s += gap * gap;
        }
        sqrt(s)
    }

    /// Axis with the largest extent; ties resolved to the lowest index.
    fn longest_axis(&self) -> usize {
        let mut best = 0;
        let mut best_ext = self.hi[0] - self.lo[0];
        for d in 1..self.dim() {
            let e = self.hi[d] - self.lo[d];
            if e > best_ext {
                best = d;
                best_ext = e;
            }
        }
        best
    }
}

/// Node of a cluster tree: a contiguous index range in tree ordering,
/// its bounding box and its sons.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    id: usize,
    offset: usize,
    size: usize,
    level: usize,
    bbox: BoundingBox,
    sons: Vec<Cluster>,
}

impl Cluster {
    /// Stable preorder id within its tree.
    pub fn id(&self) -> usize {
        self.id
    }

    /// First owned index in tree ordering.
    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn bbox(&self) -> &BoundingBox {
        &self.bbox
    }

    pub fn sons(&self) -> &[Cluster] {
        &self.sons
    }

    pub fn is_leaf(&self) -> bool {
        self.sons.is_empty()
    }

    /// Owned index range in tree ordering.
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.size
    }

    pub fn node_count(&self) -> usize {
        1 + self.sons.iter().map(Cluster::node_count).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        self.sons.iter().map(|s| 1 + s.depth()).max().unwrap_or(0)
    }

    /// Preorder iteration over all clusters of the subtree.
    pub fn iter(&self) -> ClusterIter<'_> {
        ClusterIter { stack: vec![self] }
    }
}

pub struct ClusterIter<'a> {
    stack: Vec<&'a Cluster>,
}

impl<'a> Iterator for ClusterIter<'a> {
    type Item = &'a Cluster;

    fn next(&mut self) -> Option<&'a Cluster> {
        let c = self.stack.pop()?;
        for s in c.sons.iter().rev() {
            self.stack.push(s);
        }
        Some(c)
    }
}

/// A cluster tree plus the permutation from tree ordering back to the
/// original point order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTree {
    root: Cluster,
    perm: Vec<usize>,
    dim: usize,
}

impl ClusterTree {
    pub fn root(&self) -> &Cluster {
        &self.root
    }

    /// `perm()[tree_position] = original_index`.
    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    /// Reorders per-point data into tree ordering.
    pub fn apply_perm<T: Clone>(&self, data: &[T]) -> Vec<T> {
        self.perm.iter().map(|&i| data[i].clone()).collect()
    }
}

/// Builds a cluster tree by geometric bisection.
///
/// Points are recursively split along the longest box axis at the
/// coordinate median until clusters have at most `leaf_size` points.
/// The returned tree owns contiguous ranges in tree ordering; the
/// permutation mapping tree positions to original indices is part of the
/// result.
pub fn build_cluster_tree(points: &[Vec<f64>], leaf_size: usize) -> Result<ClusterTree> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    if leaf_size == 0 {
        return Err(Error::InvalidLeafSize);
    }
    let dim = points[0].len();
    if dim == 0 {
        return Err(Error::DimensionMismatch { expected: 1, got: 0 });
    }
    for (i, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: p.len(),
            });
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinitePoint { index: i });
        }
    }
    let mut perm: Vec<usize> = (0..points.len()).collect();
    let mut next_id = 0;
    let root = split_cluster(points, &mut perm, 0, dim, leaf_size, 0, &mut next_id);
    Ok(ClusterTree { root, perm, dim })
}

fn split_cluster(
    points: &[Vec<f64>],
    idx: &mut [usize],
    offset: usize,
    dim: usize,
    leaf_size: usize,
    level: usize,
    next_id: &mut usize,
) -> Cluster {
    let id = *next_id;
    *next_id += 1;
    let bbox = BoundingBox::of_points(points, idx, dim);
    let size = idx.len();
    if size <= leaf_size {
        return Cluster {
            id,
            offset,
            size,
            level,
            bbox,
            sons: Vec::new(),
        };
    }
    let axis = bbox.longest_axis();
    if bbox.hi[axis] - bbox.lo[axis] > 0.0 {
        // Stable sort keeps equal coordinates in input order.
        idx.sort_by(|&a, &b| points[a][axis].partial_cmp(&points[b][axis]).unwrap());
    }
    // Zero-extent box: keep current order, split at the index midpoint.
    let mid = size / 2;
    let (left_idx, right_idx) = idx.split_at_mut(mid);
    let left = split_cluster(points, left_idx, offset, dim, leaf_size, level + 1, next_id);
    let right = split_cluster(
        points,
        right_idx,
        offset + mid,
        dim,
        leaf_size,
        level + 1,
        next_id,
    );
    Cluster {
        id,
        offset,
        size,
        level,
        bbox,
        sons: vec![left, right],
    }
}

/// Classification of a block tree node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Stored in factorized low-rank form.
    AdmissibleLeaf,
    /// Stored dense; row or column cluster is a leaf.
    InadmissibleLeaf,
    /// Subdivided into `sons(t) x sons(s)`.
    Subdivided,
}

/// Node of a block tree over a pair of cluster trees.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    row_id: usize,
    col_id: usize,
    row_offset: usize,
    col_offset: usize,
    row_size: usize,
    col_size: usize,
    level: usize,
    kind: BlockKind,
    n_row_sons: usize,
    n_col_sons: usize,
    sons: Vec<Block>,
}

impl Block {
    pub fn row_id(&self) -> usize {
        self.row_id
    }

    pub fn col_id(&self) -> usize {
        self.col_id
    }

    pub fn row_range(&self) -> Range<usize> {
        self.row_offset..self.row_offset + self.row_size
    }

    pub fn col_range(&self) -> Range<usize> {
        self.col_offset..self.col_offset + self.col_size
    }

    pub fn rows(&self) -> usize {
        self.row_size
    }

    pub fn cols(&self) -> usize {
        self.col_size
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn kind(&self) -> BlockKind {
        self.kind
    }

    pub fn is_leaf(&self) -> bool {
        self.kind != BlockKind::Subdivided
    }

    /// Sons in row-major order over `sons(t) x sons(s)`; empty for leaves.
    pub fn sons(&self) -> &[Block] {
        &self.sons
    }

    /// Son grid dimensions `(sons of t, sons of s)`; `(0, 0)` for leaves.
    pub fn son_grid(&self) -> (usize, usize) {
        (self.n_row_sons, self.n_col_sons)
    }

    pub fn son(&self, i: usize, j: usize) -> &Block {
        &self.sons[i * self.n_col_sons + j]
    }

    pub fn node_count(&self) -> usize {
        1 + self.sons.iter().map(Block::node_count).sum::<usize>()
    }

    /// Preorder iteration over all blocks of the subtree.
    pub fn iter(&self) -> BlockIter<'_> {
        BlockIter { stack: vec![self] }
    }
}

pub struct BlockIter<'a> {
    stack: Vec<&'a Block>,
}

impl<'a> Iterator for BlockIter<'a> {
    type Item = &'a Block;

    fn next(&mut self) -> Option<&'a Block> {
        let b = self.stack.pop()?;
        for s in b.sons.iter().rev() {
            self.stack.push(s);
        }
        Some(b)
    }
}

/// Builds the block tree for a pair of cluster trees.
///
/// A pair becomes an admissible leaf iff the boxes are separated and
/// `min(diam_t, diam_s) <= eta * dist`; it becomes an inadmissible leaf
/// iff it is not admissible and either cluster is a leaf; otherwise it is
/// subdivided into `sons(t) x sons(s)` (row-major).
pub fn build_block_tree(row: &Cluster, col: &Cluster, eta: f64) -> Result<Block> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::InvalidEta);
    }
    Ok(build_block(row, col, eta, 0))
}

fn is_admissible(row: &Cluster, col: &Cluster, eta: f64) -> bool {
    let dist = row.bbox().distance(col.bbox());
    dist > 0.0 && row.bbox().diameter().min(col.bbox().diameter()) <= eta * dist
}

fn build_block(row: &Cluster, col: &Cluster, eta: f64, level: usize) -> Block {
    let (kind, n_row_sons, n_col_sons, sons) = if is_admissible(row, col, eta) {
        (BlockKind::AdmissibleLeaf, 0, 0, Vec::new())
    } else if row.is_leaf() || col.is_leaf() {
        (BlockKind::InadmissibleLeaf, 0, 0, Vec::new())
    } else {
        let mut sons = Vec::with_capacity(row.sons().len() * col.sons().len());
        for t in row.sons() {
            for s in col.sons() {
                sons.push(build_block(t, s, eta, level + 1));
            }
        }
        (
            BlockKind::Subdivided,
            row.sons().len(),
            col.sons().len(),
            sons,
        )
    };
    Block {
        row_id: row.id(),
        col_id: col.id(),
        row_offset: row.offset(),
        col_offset: col.offset(),
        row_size: row.size(),
        col_size: col.size(),
        level,
        kind,
        n_row_sons,
        n_col_sons,
        sons,
    }
}

/// Structural statistics of a block tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeStats {
    /// Maximum block level.
    pub depth: usize,
    /// Maximum number of blocks sharing one row cluster.
    pub sparsity_row: usize,
    /// Maximum number of blocks sharing one column cluster.
    pub sparsity_col: usize,
    pub admissible_leaves: usize,
    pub inadmissible_leaves: usize,
}

/// Exact counts by full traversal.
pub fn tree_stats(root: &Block) -> TreeStats {
    use alloc::collections::BTreeMap;
    let mut row_tally: BTreeMap<usize, usize> = BTreeMap::new();
    let mut col_tally: BTreeMap<usize, usize> = BTreeMap::new();
    let mut depth = 0;
    let mut admissible = 0;
    let mut inadmissible = 0;
    for b in root.iter() {
        depth = depth.max(b.level());
        *row_tally.entry(b.row_id()).or_insert(0) += 1;
        *col_tally.entry(b.col_id()).or_insert(0) += 1;
        match b.kind() {
            BlockKind::AdmissibleLeaf => admissible += 1,
            BlockKind::InadmissibleLeaf => inadmissible += 1,
            BlockKind::Subdivided => {}
        }
    }
    TreeStats {
        depth,
        sparsity_row: row_tally.values().copied().max().unwrap_or(0),
        sparsity_col: col_tally.values().copied().max().unwrap_or(0),
        admissible_leaves: admissible,
        inadmissible_leaves: inadmissible,
    }
}
