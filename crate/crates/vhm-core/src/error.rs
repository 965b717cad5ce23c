use alloc::string::String;

/// Errors raised by model construction, forward passes and data handling.
///
/// The variants map onto the process exit categories used by the CLI:
/// `Config` -> 2, `Data` -> 3, `Numerics` -> 4 (IO errors only exist in the
/// std companion crate).
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VhmError {
    #[error("shape mismatch in {op}: {lhs} vs {rhs}")]
    Shape { op: &'static str, lhs: String, rhs: String },

    #[error("empty sequence passed to {0}")]
    EmptySequence(&'static str),

    #[error("token id {id} out of vocabulary (size {vocab_size})")]
    Vocab { id: u32, vocab_size: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerics error: {0}")]
    Numerics(String),
}

impl VhmError {
    pub fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        use alloc::format;
        VhmError::Shape { op, lhs: format!("{lhs:?}"), rhs: format!("{rhs:?}") }
    }
}
