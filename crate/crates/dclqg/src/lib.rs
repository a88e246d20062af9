//! H2-optimal decentralized LQG synthesis for networks of dynamically
//! decoupled LTI agents whose controllers exchange measurements over a
//! directed graph with a fixed processing delay τ.
//!
//! The toolkit computes the exact optimal controller (not an approximation
//! in the delay), both as a monolithic transfer matrix and as per-agent
//! observer/regulator realizations with explicit FIR correction blocks and
//! delayed message passing. It also evaluates the optimal cost in closed
//! form for four information patterns (centralized, decentralized,
//! delayed, decentralized + delayed) and ships a delay-aware closed-loop
//! simulator that verifies the analytic costs independently.
//!
//! Module map:
//! - [`lti`]: state-space algebra, Lyapunov/Gramian solves, H2 norms.
//! - [`riccati`]: stabilizing algebraic Riccati solutions (`ric`).
//! - [`topology`]: directed graphs, descendant/ancestor sets, selectors,
//!   sparsity patterns, condensation, multitree detection.
//! - [`delay`]: FIR blocks on [0, τ], adobe delay matrices, and
//!   frequency-domain evaluation of delay-augmented systems.
//! - [`loopshift`]: the Γ loop-shifting transform that reduces an
//!   adobe-input-delay problem to a rational one plus FIR completions.
//! - [`synthesis`]: the four-block plant, Youla parameterization, optimal
//!   delay-free and delayed controllers, and per-agent realizations.
//! - [`cost`]: closed-form optimal costs, cost orderings, and the
//!   suboptimality penalty of a perturbed Youla parameter.
//! - [`sim`]: fixed-step delay-differential closed-loop simulation and
//!   empirical H2 estimation.

pub mod cost;
pub mod delay;
pub mod error;
pub mod lti;
pub mod loopshift;
pub mod matrix;
pub mod riccati;
pub mod sim;
pub mod synthesis;
pub mod tol;
pub mod topology;

pub use error::{Error, Result};
