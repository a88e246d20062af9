//! The loop-shifting transformation Γ: maps a four-block plant with an
//! adobe input delay to a rational modified plant plus FIR blocks Π_u and
//! Π_b, together with the D12 column normalization used to reach the
//! orthonormal case the transformation assumes.

use nalgebra::DMatrix;

use crate::delay::{assemble_pi_b, assemble_pi_u, pi_tau, AdobeDelay, DelayedSystem, FirBlock};
use crate::error::{Error, Result};
use crate::lti::StateSpace;
use crate::matrix::{block2x2, expm, hstack, solve, sym_sqrt_inv, vstack};

/// A standard four-block plant
///
///   ẋ = A x + B1 w + B2 u,   z = C1 x + D12 u,   y = C2 x + D21 w,
///
/// with D11 = 0 and D22 = 0 throughout this crate.
#[derive(Debug, Clone)]
pub struct FourBlockPlant {
    pub a: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub c1: DMatrix<f64>,
    pub c2: DMatrix<f64>,
    pub d12: DMatrix<f64>,
    pub d21: DMatrix<f64>,
}

impl FourBlockPlant {
    pub fn new(
        a: DMatrix<f64>,
        b1: DMatrix<f64>,
        b2: DMatrix<f64>,
        c1: DMatrix<f64>,
        c2: DMatrix<f64>,
        d12: DMatrix<f64>,
        d21: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b1.nrows() != n || b2.nrows() != n || c1.ncols() != n || c2.ncols() != n
        {
            return Err(Error::Dimension("four-block plant: state dimensions disagree".into()));
        }
        if d12.nrows() != c1.nrows() || d12.ncols() != b2.ncols() {
            return Err(Error::Dimension("D12 must be (dim z × dim u)".into()));
        }
        if d21.nrows() != c2.nrows() || d21.ncols() != b1.ncols() {
            return Err(Error::Dimension("D21 must be (dim y × dim w)".into()));
        }
        Ok(Self {
            a,
            b1,
            b2,
            c1,
            c2,
            d12,
            d21,
        })
    }

    pub fn nstates(&self) -> usize {
        self.a.nrows()
    }

    pub fn ninputs_w(&self) -> usize {
        self.b1.ncols()
    }

    pub fn ninputs_u(&self) -> usize {
        self.b2.ncols()
    }

    pub fn noutputs_z(&self) -> usize {
        self.c1.nrows()
    }

    pub fn noutputs_y(&self) -> usize {
        self.c2.nrows()
    }

    /// The 2×2-partitioned generalized plant [z; y] ← [w; u].
    pub fn generalized(&self) -> StateSpace {
        let b = hstack(&[&self.b1, &self.b2]);
        let c = vstack(&[&self.c1, &self.c2]);
        let d = block2x2(
            &DMatrix::zeros(self.noutputs_z(), self.ninputs_w()),
            &self.d12,
            &self.d21,
            &DMatrix::zeros(self.noutputs_y(), self.ninputs_u()),
        );
        StateSpace::new(self.a.clone(), b, c, d)
            .and_then(|g| {
                g.with_partitions(
                    vec![self.noutputs_z(), self.noutputs_y()],
                    vec![self.ninputs_w(), self.ninputs_u()],
                )
            })
            .expect("dimensions validated at construction")
    }

    /// Whether D12ᵀD12 = I holds to the working tolerance.
    pub fn d12_is_orthonormal(&self) -> bool {
        let m = self.d12.transpose() * &self.d12;
        (&m - DMatrix::identity(m.nrows(), m.ncols())).amax() <= 1e-8
    }
}

/// Output of the Γ transformation.
#[derive(Debug, Clone)]
pub struct GammaResult {
    /// Rational plant with B̃2 and C̃1 in place of B2 and C1; the blocks
    /// A, B1, C2, D21, D12 are untouched, so the estimation-side ARE is
    /// identical before and after (the transform is control-sided).
    pub modified_plant: FourBlockPlant,
    /// Π_u = [I, Π̃_u; 0, I].
    pub pi_u: DelayedSystem,
    /// Π_b = [0, Π̃_b].
    pub pi_b: DelayedSystem,
    pub pi_u_tilde: FirBlock,
    pub pi_b_tilde: FirBlock,
    /// Σ = e^{Hτ}.
    pub sigma: DMatrix<f64>,
    pub hamiltonian: DMatrix<f64>,
    /// Condition number of Σ22 (ratio of extreme singular values).
    pub sigma22_cond: f64,
    pub m_undelayed: usize,
    pub m_delayed: usize,
}

/// Normalize D12 to orthonormal columns by the input change of variables
/// u = M^{−1/2} u′ with M = D12ᵀD12 (symmetric square root).
///
/// Returns the rescaled plant and the back-map matrix M^{−1/2}: a gain or
/// controller designed for the normalized plant maps back by
/// premultiplication with it.
pub fn normalize_d12(p: &FourBlockPlant) -> Result<(FourBlockPlant, DMatrix<f64>)> {
    let m = self_adjoint(&(p.d12.transpose() * &p.d12));
    let m_inv_sqrt = sym_sqrt_inv(&m).map_err(|_| {
        Error::RiccatiAssumption("D12ᵀD12 is singular; cannot normalize (R1)".into())
    })?;
    let mut q = p.clone();
    q.b2 = &p.b2 * &m_inv_sqrt;
    q.d12 = &p.d12 * &m_inv_sqrt;
    Ok((q, m_inv_sqrt))
}

fn self_adjoint(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + &m.transpose()) * 0.5
}

/// The Γ Hamiltonian for a normalized plant whose first `m0` inputs are
/// undelayed:
///
///   H = [A − B2₀D12₀ᵀC1,  −B2₀B2₀ᵀ;  −C1ᵀP_τC1,  −Aᵀ + C1ᵀD12₀B2₀ᵀ],
///
/// with P₀ = D12₀D12₀ᵀ and P_τ = I − P₀.
pub fn build_hamiltonian(p: &FourBlockPlant, m0: usize) -> Result<DMatrix<f64>> {
    if m0 > p.ninputs_u() {
        return Err(Error::Dimension("undelayed split exceeds input count".into()));
    }
    if !p.d12_is_orthonormal() {
        return Err(Error::Structure(
            "Γ requires D12 with orthonormal columns; call normalize_d12 first".into(),
        ));
    }
    let b2_0 = p.b2.columns(0, m0).into_owned();
    let d12_0 = p.d12.columns(0, m0).into_owned();
    let p0 = &d12_0 * d12_0.transpose();
    let p_tau = DMatrix::identity(p0.nrows(), p0.ncols()) - &p0;
    let h11 = &p.a - &b2_0 * d12_0.transpose() * &p.c1;
    let h12 = -(&b2_0 * b2_0.transpose());
    let h21 = -(p.c1.transpose() * &p_tau * &p.c1);
    let h22 = -p.a.transpose() + p.c1.transpose() * &d12_0 * b2_0.transpose();
    Ok(block2x2(&h11, &h12, &h21, &h22))
}

/// Σ = e^{Hτ} by scaling and squaring.
pub fn sigma_exp(h: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    expm(&(h * tau))
}

/// The loop-shifting transformation Γ(P, Λ).
///
/// The plant's B2/D12 columns must already be ordered per the adobe
/// split (anchor inputs first, strict-descendant inputs after), and D12
/// must have orthonormal columns.
pub fn gamma(p: &FourBlockPlant, lam: &AdobeDelay) -> Result<GammaResult> {
    if lam.dim() != p.ninputs_u() {
        return Err(Error::Dimension(format!(
            "adobe delay covers {} inputs, plant has {}",
            lam.dim(),
            p.ninputs_u()
        )));
    }
    if lam.tau < 0.0 {
        return Err(Error::Structure("Γ requires τ ≥ 0".into()));
    }
    if !p.d12_is_orthonormal() {
        return Err(Error::Structure(
            "Γ requires D12 with orthonormal columns; call normalize_d12 first".into(),
        ));
    }
    let (m0, m_tau, tau) = (lam.undelayed, lam.delayed, lam.tau);
    let n = p.nstates();
    let h = build_hamiltonian(p, m0)?;
    let sigma = sigma_exp(&h, tau);

    // With no delayed inputs the shift has empty content: the plant passes
    // through unchanged and Π_u = I, Π_b = 0.
    if m_tau == 0 || tau == 0.0 {
        let zero_u = FirBlock::zero(m0, m_tau, tau);
        let zero_b = FirBlock::zero(p.noutputs_y(), m_tau, tau);
        return Ok(GammaResult {
            modified_plant: p.clone(),
            pi_u: assemble_pi_u(&zero_u, m0, m_tau)?,
            pi_b: assemble_pi_b(&zero_b, m0, m_tau)?,
            pi_u_tilde: zero_u,
            pi_b_tilde: zero_b,
            sigma,
            hamiltonian: h,
            sigma22_cond: 1.0,
            m_undelayed: m0,
            m_delayed: m_tau,
        });
    }

    let b2_0 = p.b2.columns(0, m0).into_owned();
    let b2_tau = p.b2.columns(m0, m_tau).into_owned();
    let d12_0 = p.d12.columns(0, m0).into_owned();
    let d12_tau = p.d12.columns(m0, m_tau).into_owned();
    let p0 = &d12_0 * d12_0.transpose();
    let p_tau_mat = DMatrix::identity(p0.nrows(), p0.ncols()) - &p0;

    let s12 = sigma.view((0, n), (n, n)).into_owned();
    let s21 = sigma.view((n, 0), (n, n)).into_owned();
    let s22 = sigma.view((n, n), (n, n)).into_owned();
    let svals = s22.clone().svd(false, false).singular_values;
    let (s_max, s_min) = (
        svals.iter().cloned().fold(0.0, f64::max),
        svals.iter().cloned().fold(f64::INFINITY, f64::min),
    );
    let cond = s_max / s_min.max(f64::MIN_POSITIVE);
    if !cond.is_finite() || cond > 1e12 {
        return Err(Error::Numerical(format!(
            "Σ22 is numerically singular (cond ≈ {cond:.3e}); reduce τ"
        )));
    }

    let b2_mod = hstack(&[
        &b2_0,
        &(s12.transpose() * p.c1.transpose() * &d12_tau + s22.transpose() * &b2_tau),
    ]);
    // C̃1 = (P_τC1 + P₀C1Σ22ᵀ − D12₀B2₀ᵀΣ21ᵀ) Σ22⁻ᵀ, via a solve with Σ22.
    let y = &p_tau_mat * &p.c1 + &p0 * &p.c1 * s22.transpose() - &d12_0 * b2_0.transpose() * s21.transpose();
    let c1_mod = solve(&s22, &y.transpose(), "Σ22 solve for C̃1")?.transpose();

    // FIR couplings: [Π̃_u; Π̃_b] = π_τ over the Hamiltonian realization.
    let fir_b = vstack(&[&b2_tau, &(-(p.c1.transpose() * &d12_tau))]);
    let c_u = hstack(&[&(d12_0.transpose() * &p.c1), &b2_0.transpose()]);
    let c_b = hstack(&[&p.c2, &DMatrix::zeros(p.noutputs_y(), n)]);
    let pi_u_tilde = pi_tau(
        &StateSpace::new(h.clone(), fir_b.clone(), c_u.clone(), DMatrix::zeros(m0, m_tau))?,
        tau,
    )?;
    let pi_b_tilde = pi_tau(
        &StateSpace::new(h.clone(), fir_b, c_b, DMatrix::zeros(p.noutputs_y(), m_tau))?,
        tau,
    )?;

    let modified_plant = FourBlockPlant::new(
        p.a.clone(),
        p.b1.clone(),
        b2_mod,
        c1_mod,
        p.c2.clone(),
        p.d12.clone(),
        p.d21.clone(),
    )?;
    Ok(GammaResult {
        pi_u: assemble_pi_u(&pi_u_tilde, m0, m_tau)?,
        pi_b: assemble_pi_b(&pi_b_tilde, m0, m_tau)?,
        pi_u_tilde,
        pi_b_tilde,
        modified_plant,
        sigma,
        hamiltonian: h,
        sigma22_cond: cond,
        m_undelayed: m0,
        m_delayed: m_tau,
    })
}
