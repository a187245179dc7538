//! Error type shared by tree construction and matrix operations.

use core::fmt;

/// Errors reported by tree builders and H-matrix operations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// An empty point set or empty merge list was supplied.
    EmptyInput,
    /// A point coordinate was NaN or infinite.
    NonFinitePoint { index: usize },
    /// Points of mixed dimension were supplied.
    DimensionMismatch { expected: usize, got: usize },
    /// `leaf_size` must be at least one.
    InvalidLeafSize,
    /// The admissibility parameter eta must be positive and finite.
    InvalidEta,
    /// Matrix operands have incompatible shapes.
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    /// Row/column clusters of the operands do not line up.
    ClusterMismatch,
    /// A block grid with ragged rows or columns was supplied.
    RaggedGrid,
    /// A requested subrange is empty or out of bounds.
    InvalidRange,
    /// The two block trees do not share their middle cluster tree.
    IncompatibleTrees,
    /// The operation requires a binary cluster tree below this cluster.
    NonBinaryTree { cluster: usize },
    /// The operation requires a dense (inadmissible) diagonal block.
    AdmissibleDiagonal { cluster: usize },
    /// A dense diagonal block could not be inverted or factored.
    SingularDiagonal { cluster: usize },
    /// Cholesky pivot breakdown (non-positive diagonal) at this cluster.
    NotPositiveDefinite { cluster: usize },
    /// A triangular solve hit a zero diagonal entry at this cluster.
    ZeroDiagonal { cluster: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::EmptyInput => write!(f, "empty input"),
            Error::NonFinitePoint { index } => {
                write!(f, "point {index} has a non-finite coordinate")
            }
            Error::DimensionMismatch { expected, got } => {
                write!(f, "expected {expected}-dimensional points, got {got}")
            }
            Error::InvalidLeafSize => write!(f, "leaf_size must be >= 1"),
            Error::InvalidEta => write!(f, "eta must be positive and finite"),
            Error::ShapeMismatch { expected, got } => write!(
                f,
                "shape mismatch: expected {}x{}, got {}x{}",
                expected.0, expected.1, got.0, got.1
            ),
            Error::ClusterMismatch => write!(f, "operand clusters do not match"),
            Error::RaggedGrid => write!(f, "block grid is ragged or non-conforming"),
            Error::InvalidRange => write!(f, "subrange is empty or out of bounds"),
            Error::IncompatibleTrees => {
                write!(f, "block trees do not share their middle cluster tree")
            }
            Error::NonBinaryTree { cluster } => {
                write!(f, "cluster {cluster} is not binary")
            }
            Error::AdmissibleDiagonal { cluster } => {
                write!(f, "diagonal block of cluster {cluster} is not dense")
            }
            Error::SingularDiagonal { cluster } => {
                write!(f, "singular dense diagonal block at cluster {cluster}")
            }
            Error::NotPositiveDefinite { cluster } => {
                write!(f, "matrix is not positive definite at cluster {cluster}")
            }
            Error::ZeroDiagonal { cluster } => {
                write!(f, "zero diagonal entry in triangular solve at cluster {cluster}")
            }
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
