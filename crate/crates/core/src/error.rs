use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh division number must be at least 1")]
    EmptyMesh,

    #[error("point ({x}, {y}) lies outside the domain")]
    DomainViolation { x: f64, y: f64 },

    #[error("unsupported polynomial degree {0} (supported: 1, 2)")]
    UnsupportedDegree(usize),

    #[error("non-finite value {value} at dof {dof} located at ({x}, {y})")]
    NonFinite { dof: usize, x: f64, y: f64, value: f64 },

    #[error("linear system has no unknowns")]
    EmptySystem,

    #[error("conjugate gradients did not converge in {iterations} iterations (relative residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("conjugate gradients diverged at iteration {iteration}: non-finite value")]
    Divergence { iteration: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric: |A[{row}][{col}] - A[{col}][{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },

    #[error("spaces are built on different meshes")]
    MeshMismatch,

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("geometry inconsistency on element {element}: clipped area {clipped:e}, expected {expected:e}")]
    Geometry {
        element: usize,
        clipped: f64,
        expected: f64,
    },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
