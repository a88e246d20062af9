//! Non-rational building blocks: pure delays, adobe delay matrices, FIR
//! systems produced by the completion operator π_τ, and sums of rational,
//! FIR, and delayed-rational parts.
//!
//! Delays are handled exactly. A delayed rational system G(s)e^{−sτ}
//! splits as a rational completion plus a finite-impulse-response
//! remainder supported on [0, τ]; no Padé or other rational approximation
//! of e^{−sτ} appears anywhere in this crate.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lti::StateSpace;
use crate::matrix::{expm, phi1_complex, to_complex, van_loan_gramian};

/// The FIR system
///
///   Ψ(s) = C (sI − A)⁻¹ (e^{−Aτ} B − e^{−sτ} B),
///
/// with impulse response h(t) = C e^{A(t−τ)} B on [0, τ] and zero
/// elsewhere. Ψ is entire: the resolvent poles cancel between the two
/// terms.
#[derive(Debug, Clone)]
pub struct FirBlock {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub tau: f64,
}

impl FirBlock {
    pub fn nstates(&self) -> usize {
        self.a.nrows()
    }

    pub fn ninputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn noutputs(&self) -> usize {
        self.c.nrows()
    }

    /// The r×q FIR with no dynamics (identically zero response).
    pub fn zero(r: usize, q: usize, tau: f64) -> Self {
        Self {
            a: DMatrix::zeros(0, 0),
            b: DMatrix::zeros(0, q),
            c: DMatrix::zeros(r, 0),
            tau,
        }
    }

    /// Input matrix of the rational completion: e^{−Aτ} B.
    pub fn b_now(&self) -> DMatrix<f64> {
        expm(&(-&self.a * self.tau)) * &self.b
    }

    /// Input matrix of the subtracted delayed term (the original B).
    pub fn b_delayed(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Value at a complex frequency.
    ///
    /// Computed through the φ₁ integral Ψ(s) = C e^{−Aτ} [∫₀^τ e^{(A−sI)t} dt] B,
    /// which stays finite and accurate even when s hits an eigenvalue of A
    /// (where the resolvent form suffers cancellation).
    pub fn eval(&self, s: Complex64) -> DMatrix<Complex64> {
        let k = self.nstates();
        if k == 0 || self.tau == 0.0 {
            return DMatrix::zeros(self.noutputs(), self.ninputs());
        }
        let mut m = to_complex(&self.a);
        for i in 0..k {
            m[(i, i)] -= s;
        }
        let integral = phi1_complex(&m, self.tau);
        let front = to_complex(&(&self.c * expm(&(-&self.a * self.tau))));
        front * integral * to_complex(&self.b)
    }

    /// Impulse response at time t: C e^{A(t−τ)} B on [0, τ], else zero.
    /// A zero-length support (τ = 0) is the zero system.
    pub fn impulse(&self, t: f64) -> DMatrix<f64> {
        if t < 0.0 || t > self.tau || self.nstates() == 0 || self.tau == 0.0 {
            return DMatrix::zeros(self.noutputs(), self.ninputs());
        }
        &self.c * expm(&(&self.a * (t - self.tau))) * &self.b
    }

    /// Squared H2 norm ∫₀^τ trace(h(t)ᵀ h(t)) dt, via the Van Loan
    /// quadrature trace(Bᵀ W B) with W = ∫₀^τ e^{−Aᵀt} CᵀC e^{−At} dt.
    pub fn h2_norm_sq(&self) -> f64 {
        if self.nstates() == 0 || self.tau == 0.0 {
            return 0.0;
        }
        let w = van_loan_gramian(&(-&self.a), &(self.c.transpose() * &self.c), self.tau);
        (self.b.transpose() * w * &self.b).trace().max(0.0)
    }

    /// Embed into a larger zero matrix: rows placed at `row_offset` within
    /// `total_rows`, columns at `col_offset` within `total_cols`.
    pub fn embed(
        &self,
        total_rows: usize,
        row_offset: usize,
        total_cols: usize,
        col_offset: usize,
    ) -> FirBlock {
        let mut c = DMatrix::zeros(total_rows, self.nstates());
        c.view_mut((row_offset, 0), (self.noutputs(), self.nstates()))
            .copy_from(&self.c);
        let mut b = DMatrix::zeros(self.nstates(), total_cols);
        b.view_mut((0, col_offset), (self.nstates(), self.ninputs()))
            .copy_from(&self.b);
        FirBlock {
            a: self.a.clone(),
            b,
            c,
            tau: self.tau,
        }
    }

    /// Premultiply the output by a constant matrix.
    pub fn premultiply(&self, m: &DMatrix<f64>) -> FirBlock {
        FirBlock {
            a: self.a.clone(),
            b: self.b.clone(),
            c: m * &self.c,
            tau: self.tau,
        }
    }

    /// Postmultiply the input by a constant matrix.
    pub fn postmultiply(&self, m: &DMatrix<f64>) -> FirBlock {
        FirBlock {
            a: self.a.clone(),
            b: &self.b * m,
            c: self.c.clone(),
            tau: self.tau,
        }
    }
}

/// Completion operator: π_τ applied to the delayed rational system
/// G(s)e^{−sτ} with G = [A, B; C, 0] returns the unique FIR remainder
///
///   π_τ{G e^{−sτ}} = [A, e^{−Aτ}B; C, 0] − [A, B; C, 0] e^{−sτ},
///
/// supported on [0, τ].
pub fn pi_tau(g: &StateSpace, tau: f64) -> Result<FirBlock> {
    if g.d.amax() != 0.0 {
        return Err(Error::Structure("pi_tau requires D = 0".into()));
    }
    if tau < 0.0 {
        return Err(Error::Structure("pi_tau requires τ ≥ 0".into()));
    }
    Ok(FirBlock {
        a: g.a.clone(),
        b: g.b.clone(),
        c: g.c.clone(),
        tau,
    })
}

/// The adobe delay Λ^i = blkdiag(I_u, e^{−sτ} I_d): the anchor block
/// passes through undelayed, the strict-descendant blocks are delayed
/// by τ.
#[derive(Debug, Clone)]
pub struct AdobeDelay {
    pub undelayed: usize,
    pub delayed: usize,
    pub tau: f64,
}

impl AdobeDelay {
    pub fn new(undelayed: usize, delayed: usize, tau: f64) -> Self {
        Self {
            undelayed,
            delayed,
            tau,
        }
    }

    pub fn dim(&self) -> usize {
        self.undelayed + self.delayed
    }

    /// Value blkdiag(I, e^{−sτ} I) at a complex frequency.
    pub fn eval(&self, s: Complex64) -> DMatrix<Complex64> {
        let k = self.dim();
        let phase = (-s * self.tau).exp();
        DMatrix::from_fn(k, k, |i, j| {
            if i != j {
                Complex64::new(0.0, 0.0)
            } else if i < self.undelayed {
                Complex64::new(1.0, 0.0)
            } else {
                phase
            }
        })
    }

    /// Sum-of-parts form: diag(I, 0) + e^{−sτ} diag(0, I).
    pub fn as_delayed_system(&self) -> DelayedSystem {
        let k = self.dim();
        let mut now = DMatrix::zeros(k, k);
        for i in 0..self.undelayed {
            now[(i, i)] = 1.0;
        }
        let mut later = DMatrix::zeros(k, k);
        for i in self.undelayed..k {
            later[(i, i)] = 1.0;
        }
        DelayedSystem {
            rational: StateSpace::static_gain(now),
            fir_terms: Vec::new(),
            delay_taps: vec![(self.tau, StateSpace::static_gain(later))],
        }
    }
}

/// A transfer matrix given as a sum of a rational part, FIR parts, and
/// delayed rational parts: G(s) = R(s) + Σ Ψ_k(s) + Σ e^{−s d_k} H_k(s).
#[derive(Debug, Clone)]
pub struct DelayedSystem {
    pub rational: StateSpace,
    pub fir_terms: Vec<FirBlock>,
    pub delay_taps: Vec<(f64, StateSpace)>,
}

impl DelayedSystem {
    pub fn from_rational(g: StateSpace) -> Self {
        Self {
            rational: g,
            fir_terms: Vec::new(),
            delay_taps: Vec::new(),
        }
    }

    pub fn noutputs(&self) -> usize {
        self.rational.noutputs()
    }

    pub fn ninputs(&self) -> usize {
        self.rational.ninputs()
    }

    fn check_dims(&self) -> Result<()> {
        let (r, q) = (self.noutputs(), self.ninputs());
        for f in &self.fir_terms {
            if f.noutputs() != r || f.ninputs() != q {
                return Err(Error::Dimension("FIR term dimension mismatch".into()));
            }
        }
        for (_, g) in &self.delay_taps {
            if g.noutputs() != r || g.ninputs() != q {
                return Err(Error::Dimension("delay tap dimension mismatch".into()));
            }
        }
        Ok(())
    }

    /// Value at a complex frequency: sum over all parts.
    pub fn eval(&self, s: Complex64) -> DMatrix<Complex64> {
        let mut v = self.rational.eval(s);
        for f in &self.fir_terms {
            v += f.eval(s);
        }
        for (d, g) in &self.delay_taps {
            let phase = (-s * *d).exp();
            v += g.eval(s) * phase;
        }
        v
    }

    /// Sum of two delayed systems with matching dimensions.
    pub fn add(&self, other: &DelayedSystem) -> Result<DelayedSystem> {
        if self.noutputs() != other.noutputs() || self.ninputs() != other.ninputs() {
            return Err(Error::Dimension("DelayedSystem add: dimension mismatch".into()));
        }
        let out = DelayedSystem {
            rational: self.rational.parallel(&other.rational)?,
            fir_terms: self
                .fir_terms
                .iter()
                .chain(other.fir_terms.iter())
                .cloned()
                .collect(),
            delay_taps: self
                .delay_taps
                .iter()
                .chain(other.delay_taps.iter())
                .cloned()
                .collect(),
        };
        out.check_dims()?;
        Ok(out)
    }

    /// Premultiply by a constant matrix (acts on every part).
    pub fn premultiply(&self, m: &DMatrix<f64>) -> Result<DelayedSystem> {
        let fixed = StateSpace::static_gain(m.clone());
        Ok(DelayedSystem {
            rational: fixed.series(&self.rational)?,
            fir_terms: self.fir_terms.iter().map(|f| f.premultiply(m)).collect(),
            delay_taps: self
                .delay_taps
                .iter()
                .map(|(d, g)| Ok((*d, fixed.series(g)?)))
                .collect::<Result<Vec<_>>>()?,
        })
    }

    /// Postmultiply by a constant matrix (acts on every part).
    pub fn postmultiply(&self, m: &DMatrix<f64>) -> Result<DelayedSystem> {
        let fixed = StateSpace::static_gain(m.clone());
        Ok(DelayedSystem {
            rational: self.rational.series(&fixed)?,
            fir_terms: self.fir_terms.iter().map(|f| f.postmultiply(m)).collect(),
            delay_taps: self
                .delay_taps
                .iter()
                .map(|(d, g)| Ok((*d, g.series(&fixed)?)))
                .collect::<Result<Vec<_>>>()?,
        })
    }

    /// Maximum absolute entry deviation from another delayed system over a
    /// frequency grid.
    pub fn max_deviation(&self, other: &DelayedSystem, grid: &[Complex64]) -> f64 {
        grid.iter()
            .map(|&s| {
                let d = self.eval(s) - other.eval(s);
                d.iter().map(|z| z.norm()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

/// Assemble Π_u = [I, Π̃_u; 0, I] from the FIR coupling block.
///
/// `undelayed` is the anchor input size (rows of Π̃_u), `delayed` the
/// strict-descendant input size (columns of Π̃_u).
pub fn assemble_pi_u(pi_u_tilde: &FirBlock, undelayed: usize, delayed: usize) -> Result<DelayedSystem> {
    if pi_u_tilde.noutputs() != undelayed || pi_u_tilde.ninputs() != delayed {
        return Err(Error::Dimension(format!(
            "Π̃_u must be {undelayed}×{delayed}, got {}×{}",
            pi_u_tilde.noutputs(),
            pi_u_tilde.ninputs()
        )));
    }
    let m = undelayed + delayed;
    Ok(DelayedSystem {
        rational: StateSpace::identity(m),
        fir_terms: vec![pi_u_tilde.embed(m, 0, m, undelayed)],
        delay_taps: Vec::new(),
    })
}

/// Assemble Π_b = [0, Π̃_b] from the FIR coupling block.
pub fn assemble_pi_b(pi_b_tilde: &FirBlock, undelayed: usize, delayed: usize) -> Result<DelayedSystem> {
    if pi_b_tilde.ninputs() != delayed {
        return Err(Error::Dimension(format!(
            "Π̃_b must have {delayed} inputs, got {}",
            pi_b_tilde.ninputs()
        )));
    }
    let m = undelayed + delayed;
    let rows = pi_b_tilde.noutputs();
    Ok(DelayedSystem {
        rational: StateSpace::zero(rows, m),
        fir_terms: vec![pi_b_tilde.embed(rows, 0, m, undelayed)],
        delay_taps: Vec::new(),
    })
}
