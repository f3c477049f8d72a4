use thiserror::Error;

/// Errors produced by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes are incompatible for the requested operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// An argument is outside the operation's domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A model or run configuration violates a documented constraint.
    #[error("configuration error: {0}")]
    Config(String),

    /// The spectrum carries no power (zero image), so no cutoff exists.
    #[error("degenerate spectrum: total power is zero")]
    DegenerateSpectrum,

    /// Batch statistics cannot be formed (fewer than two elements per channel).
    #[error("degenerate statistics: {0}")]
    DegenerateStats(String),

    /// The inverse transform left an imaginary residue above tolerance.
    #[error("numerical residue: {0}")]
    Residue(String),

    /// Training produced a non-finite loss component.
    #[error("non-finite loss: component `{component}` at step {step}")]
    NonFinite { component: String, step: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
