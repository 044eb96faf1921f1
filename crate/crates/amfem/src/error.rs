//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("subdivision count must be at least 1")]
    InvalidSubdivision,

    #[error("mesh is not conforming: {0}")]
    NonConforming(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("refinement closure did not terminate: reference-edge chain exceeded {cap} triangles (cycle in reference-edge compatibility)")]
    ClosureCycle { cap: usize },

    #[error("meshes are not related by refinement: {0}")]
    UnrelatedMeshes(String),

    #[error("marked element index {index} out of range (mesh has {ntri} triangles)")]
    InvalidMark { index: usize, ntri: usize },

    #[error("unsupported element order {order} for {family}")]
    UnsupportedOrder { family: &'static str, order: u8 },

    #[error("quadrature degree {0} not available (max 6)")]
    QuadratureDegree(u32),

    #[error("triangle {0} is degenerate (non-positive area)")]
    DegenerateTriangle(usize),

    #[error("linear system is singular or nearly singular: {0}")]
    SingularSystem(String),

    #[error("linear solver failed: {0}")]
    SolverBreakdown(String),

    #[error("solution residual {residual:.3e} exceeds tolerance {tol:.3e}")]
    ResidualTooLarge { residual: f64, tol: f64 },

    #[error("{what} requires at most {limit} unknowns, got {got}")]
    SizeLimit {
        what: &'static str,
        limit: usize,
        got: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("source term arity does not match problem kind: {0}")]
    SourceMismatch(String),

    #[error("adaptive iteration {iteration} failed: {source}")]
    AfemIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}
