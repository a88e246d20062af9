//! Closed-form H2 costs of the four information structures.
//!
//! With the block-diagonal Kalman gain L = blkdiag({L^i}), the optimal
//! cost under each structure shares the form
//!
//!   J = trace(Y C₁ᵀC₁) + trace(X L D₂₁D₂₁ᵀ Lᵀ),   Y = blkdiag({Y^i}),
//!
//! and only X changes with the structure:
//!   centralized                 X_cen (full Riccati solution),
//!   decentralized               blkdiag of the anchor blocks of X^i,
//!   delayed, complete graph     blkdiag of the anchor blocks of Ξ_c^i,
//!   decentralized and delayed   blkdiag of the anchor blocks of Ξ_τ^i.
//!
//! The delay corrections Ξ come from loop-shifting each column subproblem
//! to a rational one: with Σ = e^{Hτ} for the anchor-input Hamiltonian H
//! of the modified column plant, Ξ = X̃ − (Σ₂₂⁻¹Σ₂₁)ᵀ corrects the
//! modified Riccati solution X̃ over one delay horizon.
//!
//! The module also exposes the Lyapunov certificates behind the cost
//! orderings (W_X, W_Y, and the lifted closed-loop Gramian Θ) and the
//! exact penalty ‖T₁₂ Q_Δ D₂₁‖₂² incurred by perturbing the optimal
//! parameter by Q_Δ.

use nalgebra::DMatrix;

use crate::delay::{AdobeDelay, DelayedSystem};
use crate::error::{Error, Result};
use crate::loopshift::{build_hamiltonian, gamma, normalize_d12, FourBlockPlant};
use crate::lti::{h2_norm_sq, is_hurwitz, lyapunov_solve, minimal_realization, sylvester_solve, StateSpace};
use crate::matrix::{blkdiag, block2x2, expm, hstack, min_singular_value, min_symmetric_eig, solve, vstack};
use crate::riccati::ric;
use crate::synthesis::{anchor_embed, column_riccati, default_f_d, kalman_gain, Plant};
use crate::tol;
use crate::topology::{selector, DiGraph, IndexSet};

/// Smallest eigenvalues of the four cost-ordering differences. Every
/// margin is nonnegative up to the numerical floor for a well-posed
/// instance; a clearly negative value indicates an invalid problem or a
/// numerical failure upstream.
#[derive(Debug, Clone, Copy)]
pub struct OrderingMargins {
    /// λ_min(X_dec − blkdiag({X_cen,ii})).
    pub dec_vs_cen: f64,
    /// λ_min(X_dec,del − X_dec).
    pub decdel_vs_dec: f64,
    /// λ_min(X_del − blkdiag({X_cen,ii})).
    pub del_vs_cen: f64,
    /// λ_min(X_dec,del − X_del).
    pub decdel_vs_del: f64,
}

impl OrderingMargins {
    /// The most negative of the four margins.
    pub fn worst(&self) -> f64 {
        self.dec_vs_cen
            .min(self.decdel_vs_dec)
            .min(self.del_vs_cen)
            .min(self.decdel_vs_del)
    }
}

/// The four optimal costs together with the matrices that generate them.
#[derive(Debug, Clone)]
pub struct CostReport {
    pub j_cen: f64,
    pub j_dec: f64,
    pub j_del: f64,
    pub j_decdel: f64,
    /// blkdiag({X^i(1,1)}).
    pub x_dec: DMatrix<f64>,
    /// blkdiag({Ξ_c^i(1,1)}).
    pub x_del: DMatrix<f64>,
    /// blkdiag({Ξ_τ^i(1,1)}).
    pub x_decdel: DMatrix<f64>,
    /// blkdiag({Y^i}).
    pub y_cen: DMatrix<f64>,
    pub ordering_margins: OrderingMargins,
}

/// blkdiag({Y^i}) and blkdiag({L^i}) over the agents.
fn estimation_data(p: &Plant) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut ys = Vec::new();
    let mut ls = Vec::new();
    for i in 1..=p.n_agents() {
        let (y, l) = kalman_gain(p, i)?;
        ys.push(y);
        ls.push(l);
    }
    Ok((
        blkdiag(&ys.iter().collect::<Vec<_>>()),
        blkdiag(&ls.iter().collect::<Vec<_>>()),
    ))
}

/// trace(Y C₁ᵀC₁) + trace(X L D₂₁D₂₁ᵀ Lᵀ).
fn structural_cost(p: &Plant, x: &DMatrix<f64>, y: &DMatrix<f64>, l: &DMatrix<f64>) -> f64 {
    let estimation = (y * (p.c1.transpose() * &p.c1)).trace();
    let ld = l * &p.d21;
    let regulation = (x * (&ld * ld.transpose())).trace();
    estimation + regulation
}

fn x_cen(p: &Plant) -> Result<DMatrix<f64>> {
    ric(&p.a, &p.b2, &p.c1, &p.d12).map(|(x, _)| x)
}

/// Leading n_i×n_i block of a column-ordered matrix (the anchor is listed
/// first in every descendant set).
fn anchor_block(p: &Plant, i: usize, x: &DMatrix<f64>) -> DMatrix<f64> {
    let n_i = p.n_part.size(i);
    x.view((0, 0), (n_i, n_i)).into_owned()
}

/// blkdiag of the agent-diagonal blocks of a global n×n matrix.
fn agent_diag_of(p: &Plant, x: &DMatrix<f64>) -> DMatrix<f64> {
    let blocks: Vec<DMatrix<f64>> = (1..=p.n_agents())
        .map(|i| {
            x.view(
                (p.n_part.offset(i), p.n_part.offset(i)),
                (p.n_part.size(i), p.n_part.size(i)),
            )
            .into_owned()
        })
        .collect();
    blkdiag(&blocks.iter().collect::<Vec<_>>())
}

fn x_dec(p: &Plant) -> Result<DMatrix<f64>> {
    let blocks = (1..=p.n_agents())
        .map(|i| column_riccati(p, i).map(|(x, _)| anchor_block(p, i, &x)))
        .collect::<Result<Vec<_>>>()?;
    Ok(blkdiag(&blocks.iter().collect::<Vec<_>>()))
}

fn x_decdel(p: &Plant) -> Result<DMatrix<f64>> {
    let blocks = (1..=p.n_agents())
        .map(|i| xi_tau(p, i).map(|x| anchor_block(p, i, &x)))
        .collect::<Result<Vec<_>>>()?;
    Ok(blkdiag(&blocks.iter().collect::<Vec<_>>()))
}

fn x_del(p: &Plant) -> Result<DMatrix<f64>> {
    let blocks = (1..=p.n_agents())
        .map(|i| xi_c_tau(p, i).map(|x| anchor_block(p, i, &x)))
        .collect::<Result<Vec<_>>>()?;
    Ok(blkdiag(&blocks.iter().collect::<Vec<_>>()))
}

/// Optimal centralized cost
/// trace(Y_cen C₁ᵀC₁) + trace(X_cen L D₂₁D₂₁ᵀ Lᵀ); the estimation problem
/// separates per agent, so Y_cen = blkdiag({Y^i}) and L = blkdiag({L^i}).
pub fn cost_centralized(p: &Plant) -> Result<f64> {
    let (y, l) = estimation_data(p)?;
    Ok(structural_cost(p, &x_cen(p)?, &y, &l))
}

/// Dual form of the centralized cost,
/// trace(X_cen B₁B₁ᵀ) + trace(Y_cen F_cenᵀ D₁₂ᵀD₁₂ F_cen).
pub fn cost_centralized_dual(p: &Plant) -> Result<f64> {
    let (y, _) = estimation_data(p)?;
    let (x, f) = ric(&p.a, &p.b2, &p.c1, &p.d12)?;
    let df = &p.d12 * &f;
    Ok((x * (&p.b1 * p.b1.transpose())).trace() + (y * (df.transpose() * &df)).trace())
}

/// Optimal cost under the plant's own topology with instantaneous links.
pub fn cost_decentralized(p: &Plant) -> Result<f64> {
    let (y, l) = estimation_data(p)?;
    Ok(structural_cost(p, &x_dec(p)?, &y, &l))
}

/// Optimal cost with all-to-all links that carry the plant's delay τ.
pub fn cost_delayed(p: &Plant) -> Result<f64> {
    let (y, l) = estimation_data(p)?;
    Ok(structural_cost(p, &x_del(p)?, &y, &l))
}

/// Optimal cost under the plant's own topology with delay τ on every link.
pub fn cost_dec_delayed(p: &Plant) -> Result<f64> {
    let (y, l) = estimation_data(p)?;
    Ok(structural_cost(p, &x_decdel(p)?, &y, &l))
}

/// Delay-corrected column Riccati matrix Ξ_τ^i on agent i's descendant
/// coordinates. Equals the plain column solution X^i when τ = 0 or the
/// column has no delayed inputs.
pub fn xi_tau(p: &Plant, i: usize) -> Result<DMatrix<f64>> {
    let (m0, mt) = p.adobe_split(i)?;
    xi_of_column(&p.subproblem(i)?, m0, mt, p.tau, i)
}

/// Ξ_{c,τ}^i: the same correction computed as if every pair of agents
/// were linked with delay τ. Enters the delayed-information cost.
pub fn xi_c_tau(p: &Plant, i: usize) -> Result<DMatrix<f64>> {
    let pc = complete_variant(p)?;
    let (m0, mt) = pc.adobe_split(i)?;
    xi_of_column(&pc.subproblem(i)?, m0, mt, pc.tau, i)
}

/// The same agents and weights on the complete communication graph.
fn complete_variant(p: &Plant) -> Result<Plant> {
    p.with_topology(DiGraph::complete(p.n_agents()), p.tau)
}

fn xi_of_column(
    sub: &FourBlockPlant,
    m0: usize,
    mt: usize,
    tau: f64,
    agent: usize,
) -> Result<DMatrix<f64>> {
    if mt == 0 || tau == 0.0 {
        let (x, _) = ric(&sub.a, &sub.b2, &sub.c1, &sub.d12)
            .map_err(|e| Error::RiccatiAssumption(format!("column {agent} control ARE: {e}")))?;
        return Ok(x);
    }
    let (sub_n, w_inv) = normalize_d12(sub)?;
    let cross = w_inv.view((0, m0), (m0, mt)).amax();
    if cross > 1e-10 * w_inv.amax().max(1.0) {
        return Err(Error::Structure(format!(
            "D12 couples the inputs of agent {agent} with its delayed descendant \
             inputs; the column delay structure does not survive input normalization"
        )));
    }
    let g = gamma(&sub_n, &AdobeDelay::new(m0, mt, tau))?;
    let mp = &g.modified_plant;
    let (x_tilde, _) = ric(&mp.a, &mp.b2, &mp.c1, &mp.d12).map_err(|e| {
        Error::RiccatiAssumption(format!("modified column {agent} control ARE: {e}"))
    })?;
    let h = build_hamiltonian(mp, m0)?;
    let nsub = mp.nstates();
    let sig = expm(&(&h * tau));
    let s21 = sig.view((nsub, 0), (nsub, nsub)).into_owned();
    let s22 = sig.view((nsub, nsub), (nsub, nsub)).into_owned();
    let minsv = min_singular_value(&s22);
    if minsv <= 0.0 || s22.norm() / minsv > 1e12 {
        return Err(Error::Numerical(format!(
            "Σ₂₂ in the delay correction for agent {agent} is ill-conditioned at τ = {tau}"
        )));
    }
    let correction = -solve(&s22, &s21, "Σ₂₂ in the delay correction")?.transpose();
    let xi = &x_tilde + correction;
    Ok((&xi + xi.transpose()) * 0.5)
}

/// Certificate W_X^i = X^i − X_cen,i̲i̲ ⪰ 0, computed from the Lyapunov
/// equation with the gain-mismatch forcing
/// (E_m F^i − F_cen E_n)ᵀ D₁₂ᵀD₁₂ (E_m F^i − F_cen E_n)
/// and cross-checked against the definitional Riccati difference.
pub fn gramian_w_x(p: &Plant, i: usize) -> Result<DMatrix<f64>> {
    let set = p.descendants(i)?;
    let (x_i, f_i) = column_riccati(p, i)?;
    let (x_full, f_full) = ric(&p.a, &p.b2, &p.c1, &p.d12)?;
    let a_cl = p.a_sub(&set) + p.b2_sub(&set) * &f_i;
    let e_m = selector(&p.m_part, &set)?;
    let e_n = selector(&p.n_part, &set)?;
    let mismatch = &p.d12 * (&e_m * &f_i - &f_full * &e_n);
    let w = lyapunov_solve(&a_cl, &(mismatch.transpose() * &mismatch))?;
    let w_def = &x_i - e_n.transpose() * &x_full * &e_n;
    let scale = 1.0 + w.norm().max(w_def.norm());
    if (&w - &w_def).norm() > 1e-8 * scale {
        return Err(Error::Numerical(format!(
            "W_X certificate for agent {i} disagrees with the Riccati difference"
        )));
    }
    Ok(w)
}

/// Certificate W_Y^i ⪰ 0 solving
/// (A+B₂F^i) W + W (A+B₂F^i)ᵀ + (E L^i) D₂₁,ii D₂₁,iiᵀ (E L^i)ᵀ = 0
/// on the column coordinates, with E the anchor embedding.
pub fn gramian_w_y(p: &Plant, i: usize) -> Result<DMatrix<f64>> {
    let set = p.descendants(i)?;
    let (_, f_i) = column_riccati(p, i)?;
    let (_, l_i) = kalman_gain(p, i)?;
    let a_cl = p.a_sub(&set) + p.b2_sub(&set) * &f_i;
    let eld = anchor_embed(&p.n_part, &set)? * &l_i * p.d21_block(i);
    let w = lyapunov_solve(&a_cl.transpose(), &(&eld * eld.transpose()))?;
    if min_symmetric_eig(&w) < -tol::PSD_FLOOR * (1.0 + w.norm()) {
        return Err(Error::Numerical(format!(
            "W_Y certificate for agent {i} is not positive semidefinite"
        )));
    }
    Ok(w)
}

/// 1_N ⊗ I_k.
fn ones_stack(nn: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_element(nn, 1, 1.0).kronecker(&DMatrix::identity(k, k))
}

/// Realization of the optimal delay-free closed-loop map w → z on the
/// lifted coordinates (N observer copies, then the plant state).
pub fn closed_loop_map(p: &Plant) -> Result<StateSpace> {
    let nn = p.n_agents();
    let eye_nn = DMatrix::<f64>::identity(nn, nn);
    let a_bar = eye_nn.kronecker(&p.a);
    let b_bar = eye_nn.kronecker(&p.b2);
    let c_bar = eye_nn.kronecker(&p.c2);
    let n = p.nstates();
    let mut f_blocks = Vec::new();
    let mut l_blocks = Vec::new();
    for i in 1..=nn {
        let set = p.descendants(i)?;
        let (_, f_i) = column_riccati(p, i)?;
        let e_m = selector(&p.m_part, &set)?;
        let e_n = selector(&p.n_part, &set)?;
        f_blocks.push(&e_m * &f_i * e_n.transpose());
        let (_, l_i) = kalman_gain(p, i)?;
        let own = IndexSet::new(vec![i])?;
        let e_ni = selector(&p.n_part, &own)?;
        let e_pi = selector(&p.p_part, &own)?;
        l_blocks.push(&e_ni * &l_i * e_pi.transpose());
    }
    let f_bar = blkdiag(&f_blocks.iter().collect::<Vec<_>>());
    let l_bar = blkdiag(&l_blocks.iter().collect::<Vec<_>>());
    let (_, l) = estimation_data(p)?;
    let one_n = ones_stack(nn, n);
    let one_m = ones_stack(nn, p.ninputs());
    let one_p = ones_stack(nn, p.nmeas());
    let a_cl = block2x2(
        &(&a_bar + &b_bar * &f_bar),
        &(-(&l_bar * &c_bar * &one_n)),
        &DMatrix::zeros(n, nn * n),
        &(&p.a + &l * &p.c2),
    );
    let b_cl = vstack(&[&(-(&l_bar * &one_p * &p.d21)), &(&p.b1 + &l * &p.d21)]);
    let c_cl = hstack(&[
        &(&p.c1 * one_n.transpose() + &p.d12 * one_m.transpose() * &f_bar),
        &p.c1,
    ]);
    let d = DMatrix::zeros(p.nperf(), p.nnoise());
    StateSpace::new(a_cl, b_cl, c_cl, d)
}

/// Θ = blkdiag({E_{n_i̲} W_Y^i E_{n_i̲}ᵀ}, Y_cen): the controllability
/// Gramian of [`closed_loop_map`] assembled from the per-agent
/// certificates instead of one large Lyapunov solve.
pub fn gramian_theta(p: &Plant) -> Result<DMatrix<f64>> {
    let mut blocks = Vec::new();
    for i in 1..=p.n_agents() {
        let set = p.descendants(i)?;
        let e_n = selector(&p.n_part, &set)?;
        let w_y = gramian_w_y(p, i)?;
        blocks.push(&e_n * w_y * e_n.transpose());
    }
    let (y_cen, _) = estimation_data(p)?;
    blocks.push(y_cen);
    Ok(blkdiag(&blocks.iter().collect::<Vec<_>>()))
}

/// Smallest eigenvalues of the four ordering differences between the
/// structure matrices. All are nonnegative in exact arithmetic.
pub fn ordering_check(p: &Plant) -> Result<OrderingMargins> {
    let xd = agent_diag_of(p, &x_cen(p)?);
    margins(&xd, &x_dec(p)?, &x_del(p)?, &x_decdel(p)?)
}

fn margins(
    xd: &DMatrix<f64>,
    x_dec: &DMatrix<f64>,
    x_del: &DMatrix<f64>,
    x_decdel: &DMatrix<f64>,
) -> Result<OrderingMargins> {
    Ok(OrderingMargins {
        dec_vs_cen: min_symmetric_eig(&(x_dec - xd)),
        decdel_vs_dec: min_symmetric_eig(&(x_decdel - x_dec)),
        del_vs_cen: min_symmetric_eig(&(x_del - xd)),
        decdel_vs_del: min_symmetric_eig(&(x_decdel - x_del)),
    })
}

/// All four costs, the structure matrices, and the ordering margins.
pub fn cost_report(p: &Plant) -> Result<CostReport> {
    let (y, l) = estimation_data(p)?;
    let x_full = x_cen(p)?;
    let xd = agent_diag_of(p, &x_full);
    let x_dec_m = x_dec(p)?;
    let x_del_m = x_del(p)?;
    let x_dd_m = x_decdel(p)?;
    let ordering_margins = margins(&xd, &x_dec_m, &x_del_m, &x_dd_m)?;
    Ok(CostReport {
        j_cen: structural_cost(p, &x_full, &y, &l),
        j_dec: structural_cost(p, &x_dec_m, &y, &l),
        j_del: structural_cost(p, &x_del_m, &y, &l),
        j_decdel: structural_cost(p, &x_dd_m, &y, &l),
        x_dec: x_dec_m,
        x_del: x_del_m,
        x_decdel: x_dd_m,
        y_cen: y,
        ordering_margins,
    })
}

/// Exact H2 penalty ‖T₁₂ Q_Δ D₂₁‖₂² of running the controller whose
/// parameter deviates from the optimum by Q_Δ. The deviation must be
/// stable and strictly proper; delay taps at arbitrary nonnegative lags
/// are supported, FIR terms are not.
///
/// The norm of Σ_k e^{−s θ_k} G_k(s) expands into per-term norms plus
/// lagged inner products 2·trace(B_lᵀ S e^{A_k θ} B_k) with
/// A_lᵀS + S A_k + C_lᵀC_k = 0 and θ = θ_l − θ_k, so no delay-free
/// approximation is involved.
pub fn cost_suboptimal_penalty(p: &Plant, q_delta: &DelayedSystem) -> Result<f64> {
    if !q_delta.fir_terms.is_empty() {
        return Err(Error::Structure(
            "the penalty formula does not support FIR terms in the deviation".into(),
        ));
    }
    if q_delta.noutputs() != p.ninputs() || q_delta.ninputs() != p.nmeas() {
        return Err(Error::Dimension(
            "the deviation must map measurements to control inputs".into(),
        ));
    }
    let f_d = default_f_d(p)?;
    let t12 = StateSpace::new(
        &p.a + &p.b2 * &f_d,
        p.b2.clone(),
        &p.c1 + &p.d12 * &f_d,
        p.d12.clone(),
    )?;
    let d21_gain = StateSpace::static_gain(p.d21.clone());
    let mut terms: Vec<(f64, &StateSpace)> = vec![(0.0, &q_delta.rational)];
    for (lag, g) in &q_delta.delay_taps {
        if *lag < 0.0 {
            return Err(Error::Structure("deviation lags must be nonnegative".into()));
        }
        terms.push((*lag, g));
    }
    terms.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("finite lags"));
    let mut parts: Vec<(f64, StateSpace)> = Vec::new();
    for (lag, g) in terms {
        if g.d.amax() != 0.0 {
            return Err(Error::Structure("the deviation must be strictly proper".into()));
        }
        if g.nstates() == 0 || g.b.amax() == 0.0 || g.c.amax() == 0.0 {
            continue;
        }
        let gk = minimal_realization(&t12.series(g)?.series(&d21_gain)?, 1e-11);
        if !is_hurwitz(&gk.a) {
            return Err(Error::NotHurwitz("the deviation must be stable".into()));
        }
        parts.push((lag, gk));
    }
    let mut total = 0.0;
    for (idx, (lag_k, g_k)) in parts.iter().enumerate() {
        total += h2_norm_sq(g_k)?;
        for (lag_l, g_l) in parts.iter().skip(idx + 1) {
            let s = sylvester_solve(&g_l.a, &g_k.a, &(g_l.c.transpose() * &g_k.c))?;
            let shift = expm(&(&g_k.a * (lag_l - lag_k)));
            total += 2.0 * (g_l.b.transpose() * s * shift * &g_k.b).trace();
        }
    }
    Ok(total.max(0.0))
}
