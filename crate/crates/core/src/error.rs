use alloc::string::String;

/// Errors raised by the modeling pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("loss node must be scalar, found {0} entries")]
    NonScalarLoss(usize),
    #[error("training failed: {0}")]
    Training(String),
    #[error("synthetic trajectory diverged at step {step} (|x| = {value}); try a smaller growth rate or diffusion")]
    Divergence { step: usize, value: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;
