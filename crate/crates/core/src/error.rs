use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("NaN gradient for parameter `{0}`")]
    NanGradient(String),
    #[error("no scene text")]
    NoSceneText,
    #[error("invalid word {0:?}: expected non-empty [a-z0-9]")]
    InvalidWord(String),
    #[error("image has zero width or height")]
    ZeroImageSize,
    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("unsupervisable example: no target word is in the vocabulary or the scene text")]
    Unsupervisable,
    #[error("training diverged (non-finite loss) at iteration {0}")]
    Divergence(usize),
    #[error("refusing to augment held-out scene `{0}` (val/test split)")]
    Leakage(String),
    #[error("expected exactly 10 reference answers, got {0}")]
    ReferenceCount(usize),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("scene `{image_id}` invalid: {detail}")]
    InvalidScene { image_id: String, detail: String },
}
