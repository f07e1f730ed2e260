use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("index ({row}, {col}) out of range for a {n_rows}x{n_cols} matrix")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        n_rows: usize,
        n_cols: usize,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("iterative solver did not converge in {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("singular system (pivot {pivot:e} at column {column})")]
    Singular { column: usize, pivot: f64 },
    #[error("invalid mesh: {0}")]
    Validation(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("trace coupling error: {0}")]
    Coupling(String),
    #[error("equilibration failed on the patch of vertex {vertex}: {reason}")]
    Equilibration { vertex: usize, reason: String },
    #[error("patch of vertex {vertex} violates Galerkin orthogonality (residual {residual:e}, scale {scale:e})")]
    Orthogonality {
        vertex: usize,
        residual: f64,
        scale: f64,
    },
    #[error("point ({x}, {y}) is not covered by the mesh")]
    Coverage { x: f64, y: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
