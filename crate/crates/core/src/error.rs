use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("contraction order {r} exceeds tensor order {order}")]
    Order { r: usize, order: usize },
    #[error("index range {lo}:{hi} out of bounds for axis {axis} of length {len}")]
    Range {
        axis: usize,
        lo: usize,
        hi: usize,
        len: usize,
    },
    #[error("invalid tensor shape: {0}")]
    Shape(String),
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("value outside loss domain: {0}")]
    Domain(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn mismatch(expected: &[usize], found: &[usize]) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_vec(),
            found: found.to_vec(),
        }
    }
}
