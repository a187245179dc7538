//! Hierarchical matrix arithmetic with accumulated low-rank updates.
//!
//! A hierarchical matrix (H-matrix) stores a dense matrix as a tree of
//! blocks: well-separated blocks are kept in factorized low-rank form
//! `A * B^T`, the remaining near-field blocks are kept dense. This crate
//! implements
//!
//! - cluster trees over point geometries and block trees with an
//!   eta-admissibility condition ([`trees`]),
//! - the low-rank truncation algebra: SVD truncation, truncated addition
//!   and block merging ([`lowrank`]),
//! - the H-matrix container with matrix/multi-vector products and
//!   truncated low-rank updates ([`hmatrix`]),
//! - accumulators that defer and batch low-rank updates during
//!   multiplication, inversion and factorization ([`accumulator`]),
//! - H-matrix multiplication (immediate and accumulated variants),
//!   inversion, LR and Cholesky factorizations, triangular solves and a
//!   power-iteration error estimator ([`arithmetic`]),
//! - deterministic model problems: sphere point clouds with single/double
//!   layer kernels and a Gaussian kernel ([`problems`]).
//!
//! The accumulated variants collect low-rank contributions per block pair
//! and propagate them down the block tree in a single pass, which reduces
//! the number of rank-revealing factorizations compared to applying every
//! update immediately. All truncating operations report into an
//! [`counters::OpCounters`] instrumentation context so the two schedules
//! can be compared.
//!
//! The crate is `no_std`-compatible (with `alloc`); disable the default
//! `std` feature for embedded use. The companion CLI crate provides a
//! benchmark harness around this library.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod accumulator;
pub mod arithmetic;
pub mod counters;
pub mod error;
pub mod hmatrix;
pub mod lowrank;
pub mod problems;
pub mod trees;

mod dense;
mod scalar;

pub use error::{Error, Result};
pub use nalgebra::{DMatrix, DVector};
