//! Centralized numerical tolerances.
//!
//! Every threshold used by the library is defined here with its rationale,
//! so that validation logic never embeds ad-hoc magic numbers.

/// Lyapunov solve residual bound: ‖AᵀW + WA + Q‖_F ≤ LYAP_RESIDUAL·(1 + ‖Q‖_F).
///
/// The Kronecker-vectorized solve is backward stable at desk scale; the
/// bound leaves ~5 digits of headroom over f64 rounding.
pub const LYAP_RESIDUAL: f64 = 1e-10;

/// Hurwitz test margin: A is accepted as Hurwitz iff max Re λ(A) < −HURWITZ_MARGIN.
///
/// Strict margin guards Gramian solves against near-marginal modes.
pub const HURWITZ_MARGIN: f64 = 1e-9;

/// Agreement between the controllability-Gramian and observability-Gramian
/// forms of the squared H2 norm (relative).
pub const H2_DUAL_AGREEMENT: f64 = 1e-9;

/// Riccati residual bound after Newton–Kleinman refinement:
/// ‖AᵀX + XA + CᵀC − (XB + CᵀD)(DᵀD)⁻¹(BᵀX + DᵀC)‖_F ≤ RIC_RESIDUAL·(1 + ‖X‖_F).
pub const RIC_RESIDUAL: f64 = 1e-8;

/// Hamiltonian imaginary-axis rejection: an eigenvalue λ of the 2n×2n
/// Hamiltonian with |Re λ| < HAMILTONIAN_IMAG_AXIS·‖H‖ indicates a Riccati
/// assumption violation (no hyperbolic splitting).
pub const HAMILTONIAN_IMAG_AXIS: f64 = 1e-8;

/// Positive-semidefiniteness floor: X is accepted as PSD iff
/// λ_min(X) ≥ −PSD_FLOOR·(1 + ‖X‖).
pub const PSD_FLOOR: f64 = 1e-9;

/// Frequency-response equivalence of two realizations of the same transfer
/// matrix (absolute, entries are O(1) at desk scale).
pub const FREQ_EQUIV: f64 = 1e-8;

/// FIR quadrature consistency: trapezoid integration of the impulse response
/// against the analytic transfer value.
pub const FIR_QUADRATURE: f64 = 1e-6;

/// Matrix exponential cross-check (relative) between the Padé
/// scaling-and-squaring value and an independent reference.
pub const EXPM_CROSS_CHECK: f64 = 1e-10;

/// Rank decision threshold for minimal-realization reductions, relative to
/// the largest singular value of the examined block.
pub const RANK_TOL: f64 = 1e-8;

/// Empirical-vs-analytic H2 agreement for the delay-aware simulator
/// (relative). Dominated by time discretization and tail truncation.
pub const SIM_H2_REL: f64 = 2e-2;
