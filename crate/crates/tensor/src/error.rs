use thiserror::Error;

/// Errors raised by tensor construction, ops and the backward pass.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    /// Two operands (or an operand and a requested shape) do not fit together.
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A precondition of the op was violated.
    #[error("{op}: {msg}")]
    Contract { op: &'static str, msg: String },
    /// An index tensor referenced a row that does not exist.
    #[error("id {id} at position {position} is out of range (limit {limit})")]
    Index {
        position: usize,
        id: usize,
        limit: usize,
    },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    /// `backward` was called a second time on a graph it already consumed.
    #[error("graph already released by an earlier backward pass")]
    GraphReleased,
}

impl TensorError {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Self::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub fn contract(op: &'static str, msg: impl Into<String>) -> Self {
        Self::Contract {
            op,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, TensorError>;
