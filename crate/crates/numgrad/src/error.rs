use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("matrix dimensions must be positive, got {rows}x{cols}")]
    EmptyShape { rows: usize, cols: usize },
    #[error("data length {len} does not match {rows}x{cols}")]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("backward requires a 1x1 node, got {0:?}")]
    NonScalarRoot((usize, usize)),
    #[error("column range {start}..{end} out of bounds for width {cols}")]
    OutOfBounds { start: usize, end: usize, cols: usize },
}
