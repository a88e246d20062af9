//! Error taxonomy for the toolkit.

use thiserror::Error;

/// Library-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes across the synthesis pipeline.
///
/// `Dimension` and `Structure` indicate invalid inputs; the remaining
/// variants indicate numerical infeasibility of a well-formed problem.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible matrix or partition dimensions.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A structural precondition on the input is violated (e.g. a plant
    /// block that must be block-diagonal is not, or D ≠ 0 where a strictly
    /// proper system is required).
    #[error("structural precondition violated: {0}")]
    Structure(String),

    /// A matrix required to be Hurwitz is not.
    #[error("matrix is not Hurwitz: {0}")]
    NotHurwitz(String),

    /// A Riccati assumption (R1 definiteness, R2 stabilizability, R3 rank
    /// of the pencil) fails, or the Hamiltonian has imaginary-axis
    /// eigenvalues.
    #[error("Riccati assumption violated: {0}")]
    RiccatiAssumption(String),

    /// An iterative numerical procedure failed to reach its tolerance.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A feedback interconnection is ill-posed (singular I − D₂₂ D_K).
    #[error("algebraic loop: {0}")]
    AlgebraicLoop(String),
}
