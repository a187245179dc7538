//! Operation counters for comparing update schedules.
//!
//! Truncating operations are dominated by QR factorizations and singular
//! value decompositions, so simply counting them is a useful
//! machine-independent cost measure. Counters live in an explicitly
//! passed [`OpCounters`] context, never in global state; the fields are
//! atomic so recursions over disjoint son blocks may increment them
//! concurrently.

use core::sync::atomic::{AtomicU64, Ordering};

/// Instrumentation context threaded through all truncating operations.
#[derive(Debug, Default)]
pub struct OpCounters {
    qr: AtomicU64,
    svd: AtomicU64,
    rkadd: AtomicU64,
    rkmerge: AtomicU64,
    rkupdate_leaf: AtomicU64,
    addproduct: AtomicU64,
    flush: AtomicU64,
}

/// Plain-value snapshot of an [`OpCounters`] context.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CounterSnapshot {
    /// Thin QR factorizations.
    pub qr: u64,
    /// Thin singular value decompositions.
    pub svd: u64,
    /// Truncated low-rank additions.
    pub rkadd: u64,
    /// Block merge operations.
    pub rkmerge: u64,
    /// Leaf blocks updated by `rkupdate`.
    pub rkupdate_leaf: u64,
    /// Products handed to an accumulator.
    pub addproduct: u64,
    /// Accumulator flushes.
    pub flush: u64,
}

impl OpCounters {
    pub const fn new() -> Self {
        Self {
            qr: AtomicU64::new(0),
            svd: AtomicU64::new(0),
            rkadd: AtomicU64::new(0),
            rkmerge: AtomicU64::new(0),
            rkupdate_leaf: AtomicU64::new(0),
            addproduct: AtomicU64::new(0),
            flush: AtomicU64::new(0),
        }
    }

    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            qr: self.qr.load(Ordering::Relaxed),
            svd: self.svd.load(Ordering::Relaxed),
            rkadd: self.rkadd.load(Ordering::Relaxed),
            rkmerge: self.rkmerge.load(Ordering::Relaxed),
            rkupdate_leaf: self.rkupdate_leaf.load(Ordering::Relaxed),
            addproduct: self.addproduct.load(Ordering::Relaxed),
            flush: self.flush.load(Ordering::Relaxed),
        }
    }

    /// Resets all counters to zero (between benchmark runs).
    pub fn reset(&self) {
        self.qr.store(0, Ordering::Relaxed);
        self.svd.store(0, Ordering::Relaxed);
        self.rkadd.store(0, Ordering::Relaxed);
        self.rkmerge.store(0, Ordering::Relaxed);
        self.rkupdate_leaf.store(0, Ordering::Relaxed);
        self.addproduct.store(0, Ordering::Relaxed);
        self.flush.store(0, Ordering::Relaxed);
    }

    /// Adds a snapshot from another context, e.g. when merging counts of
    /// concurrently processed son blocks.
    pub fn absorb(&self, s: &CounterSnapshot) {
        self.qr.fetch_add(s.qr, Ordering::Relaxed);
        self.svd.fetch_add(s.svd, Ordering::Relaxed);
        self.rkadd.fetch_add(s.rkadd, Ordering::Relaxed);
        self.rkmerge.fetch_add(s.rkmerge, Ordering::Relaxed);
        self.rkupdate_leaf.fetch_add(s.rkupdate_leaf, Ordering::Relaxed);
        self.addproduct.fetch_add(s.addproduct, Ordering::Relaxed);
        self.flush.fetch_add(s.flush, Ordering::Relaxed);
    }

    pub(crate) fn bump_qr(&self) {
        self.qr.fetch_add(1, Ordering::Relaxed);
    }
    pub(crate) fn bump_svd(&self) {
        self.svd.fetch_add(1, Ordering::Relaxed);
    }
    pub(crate) fn bump_rkadd(&self) {
        self.rkadd.fetch_add(1, Ordering::Relaxed);
    }
    pub(crate) fn bump_rkmerge(&self) {
        self.rkmerge.fetch_add(1, Ordering::Relaxed);
    }
    pub(crate) fn bump_rkupdate_leaf(&self) {
        self.rkupdate_leaf.fetch_add(1, Ordering::Relaxed);
    }
    pub(crate) fn bump_addproduct(&self) {
        self.addproduct.fetch_add(1, Ordering::Relaxed);
    }
    pub(crate) fn bump_flush(&self) {
        self.flush.fetch_add(1, Ordering::Relaxed);
    }
}

impl CounterSnapshot {
    /// Total number of truncation-bearing events: truncated additions,
    /// block merges and leaf updates.
    pub fn truncations(&self) -> u64 {
        self.rkadd + self.rkmerge + self.rkupdate_leaf
    }
}
