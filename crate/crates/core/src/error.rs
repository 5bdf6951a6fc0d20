use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised anywhere in the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("cycle in {graph} edges: {}", .cycle.join(" -> "))]
    Cycle { graph: &'static str, cycle: Vec<String> },
    #[error("`{by}` references undeclared variable `{name}`")]
    Reference { name: String, by: String },
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("truncated input: expected {expected} bytes, found {found}")]
    Length { expected: usize, found: usize },
    #[error("non-finite {term} at step {step}")]
    NonFinite { step: usize, term: &'static str },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn dim_err(op: &'static str, left: &[usize], right: &[usize]) -> Error {
    Error::Dimension {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}
