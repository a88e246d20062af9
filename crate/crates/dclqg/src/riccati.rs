//! Continuous-time algebraic Riccati equations via the ordered real Schur
//! decomposition of the associated Hamiltonian, with Newton–Kleinman
//! polishing of the stabilizing solution.
//!
//! The central operation `ric(A, B, C, D)` returns the pair (X, F) with
//!
//!   AᵀX + XA + CᵀC − (XB + CᵀD)(DᵀD)⁻¹(BᵀX + DᵀC) = 0,
//!   F = −(DᵀD)⁻¹(BᵀX + DᵀC),   A + BF Hurwitz,  X = Xᵀ ⪰ 0.
//!
//! Admissibility is guarded by three checks performed up front:
//! regularity of DᵀD, PBH stabilizability of (A, B), and absence of
//! eigenvalues of the Hamiltonian on the imaginary axis.

use nalgebra::{DMatrix, Schur};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lti::{is_hurwitz, lyapunov_solve};
use crate::matrix::{block2x2, hstack, min_symmetric_eig, solve};
use crate::tol;

/// An ordered real Schur decomposition M = Q T Qᵀ where the diagonal
/// blocks of T whose eigenvalues satisfy the selection predicate occupy
/// the leading rows, spanning the invariant subspace Q[:, 0..n_selected].
#[derive(Debug, Clone)]
pub struct OrderedSchur {
    pub q: DMatrix<f64>,
    pub t: DMatrix<f64>,
    pub n_selected: usize,
}

/// Sizes and positions of the quasi-triangular diagonal blocks of T.
fn diagonal_blocks(t: &DMatrix<f64>, tol_sub: f64) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)].abs() > tol_sub {
            blocks.push((i, 2));
            i += 2;
        } else {
            blocks.push((i, 1));
            i += 1;
        }
    }
    blocks
}

/// Eigenvalues of a 1×1 or 2×2 diagonal block.
fn block_eigs(t: &DMatrix<f64>, start: usize, size: usize) -> Vec<Complex64> {
    if size == 1 {
        vec![Complex64::new(t[(start, start)], 0.0)]
    } else {
        let (a, b) = (t[(start, start)], t[(start, start + 1)]);
        let (c, d) = (t[(start + 1, start)], t[(start + 1, start + 1)]);
        let mean = 0.5 * (a + d);
        let disc = 0.25 * (a - d) * (a - d) + b * c;
        if disc >= 0.0 {
            let r = disc.sqrt();
            vec![
                Complex64::new(mean + r, 0.0),
                Complex64::new(mean - r, 0.0),
            ]
        } else {
            let im = (-disc).sqrt();
            vec![Complex64::new(mean, im), Complex64::new(mean, -im)]
        }
    }
}

/// Apply a 2×2 rotation G (columns orthonormal) as a similarity on rows
/// and columns (i, i+1) of T, and on the columns of Q.
fn apply_pair_rotation(t: &mut DMatrix<f64>, q: &mut DMatrix<f64>, i: usize, g: &DMatrix<f64>) {
    let n = t.nrows();
    for col in 0..n {
        let (x, y) = (t[(i, col)], t[(i + 1, col)]);
        t[(i, col)] = g[(0, 0)] * x + g[(1, 0)] * y;
        t[(i + 1, col)] = g[(0, 1)] * x + g[(1, 1)] * y;
    }
    for row in 0..n {
        let (x, y) = (t[(row, i)], t[(row, i + 1)]);
        t[(row, i)] = x * g[(0, 0)] + y * g[(1, 0)];
        t[(row, i + 1)] = x * g[(0, 1)] + y * g[(1, 1)];
    }
    for row in 0..q.nrows() {
        let (x, y) = (q[(row, i)], q[(row, i + 1)]);
        q[(row, i)] = x * g[(0, 0)] + y * g[(1, 0)];
        q[(row, i + 1)] = x * g[(0, 1)] + y * g[(1, 1)];
    }
}

/// Split every 2×2 diagonal block with real eigenvalues into two 1×1
/// blocks by an orthogonal similarity (standardized real Schur form).
fn split_real_2x2_blocks(t: &mut DMatrix<f64>, q: &mut DMatrix<f64>, tol_sub: f64) {
    let n = t.nrows();
    let mut i = 0;
    while i + 1 < n {
        if t[(i + 1, i)].abs() <= tol_sub {
            t[(i + 1, i)] = 0.0;
            i += 1;
            continue;
        }
        let (a, b) = (t[(i, i)], t[(i, i + 1)]);
        let (c, d) = (t[(i + 1, i)], t[(i + 1, i + 1)]);
        let disc = 0.25 * (a - d) * (a - d) + b * c;
        if disc < 0.0 {
            i += 2;
            continue;
        }
        // Real eigenvalues: rotate an eigenvector for λ₁ into e₁.
        let lambda = 0.5 * (a + d) + disc.sqrt();
        let v_a = (b, lambda - a);
        let v_b = (lambda - d, c);
        let (v1, v2) = if v_a.0.hypot(v_a.1) >= v_b.0.hypot(v_b.1) {
            v_a
        } else {
            v_b
        };
        let norm = v1.hypot(v2);
        let g = DMatrix::from_row_slice(2, 2, &[v1 / norm, -v2 / norm, v2 / norm, v1 / norm]);
        apply_pair_rotation(t, q, i, &g);
        t[(i + 1, i)] = 0.0;
        i += 1;
    }
}

/// Swap the adjacent diagonal blocks at (i, p) and (i+p, s2) by the
/// direct method: solve the small Sylvester equation for the coupling,
/// orthonormalize the invariant-subspace basis, and apply it.
fn swap_adjacent_blocks(
    t: &mut DMatrix<f64>,
    q: &mut DMatrix<f64>,
    i: usize,
    p: usize,
    s2: usize,
) -> Result<()> {
    let t11 = t.view((i, i), (p, p)).into_owned();
    let t22 = t.view((i + p, i + p), (s2, s2)).into_owned();
    let t12 = t.view((i, i + p), (p, s2)).into_owned();
    // T11 X − X T22 = T12, vectorized.
    let m = DMatrix::<f64>::identity(s2, s2).kronecker(&t11)
        - t22.transpose().kronecker(&DMatrix::identity(p, p));
    let rhs = DMatrix::from_column_slice(p * s2, 1, t12.as_slice());
    let x = solve(&m, &rhs, "Schur block swap (eigenvalues too close)")?;
    let x = DMatrix::from_column_slice(p, s2, x.as_slice());

    // Columns of [−X; I] span the T22-invariant subspace; complete to an
    // orthogonal basis with Householder QR of the padded square matrix.
    let k = p + s2;
    let mut w = DMatrix::zeros(k, k);
    w.view_mut((0, 0), (p, s2)).copy_from(&(-&x));
    w.view_mut((p, 0), (s2, s2)).copy_from(&DMatrix::identity(s2, s2));
    w.view_mut((0, s2), (p, p)).copy_from(&DMatrix::identity(p, p));
    let z = w.qr().q();

    // Similarity on the trailing principal submatrix rows/cols [i, i+k).
    let n = t.nrows();
    let mut t_rows = t.view((i, 0), (k, n)).into_owned();
    t_rows = z.transpose() * t_rows;
    t.view_mut((i, 0), (k, n)).copy_from(&t_rows);
    let mut t_cols = t.view((0, i), (n, k)).into_owned();
    t_cols = t_cols * &z;
    t.view_mut((0, i), (n, k)).copy_from(&t_cols);
    let mut q_cols = q.view((0, i), (q.nrows(), k)).into_owned();
    q_cols = q_cols * &z;
    q.view_mut((0, i), (q.nrows(), k)).copy_from(&q_cols);

    // The sub-block that must vanish after the swap.
    let leak = t.view((i + s2, i), (p, s2)).amax();
    let scale = t.amax().max(1.0);
    if leak > 1e-7 * scale {
        return Err(Error::Numerical(format!(
            "Schur block swap left residual {leak:.3e}"
        )));
    }
    for r in 0..p {
        for c in 0..s2 {
            t[(i + s2 + r, i + c)] = 0.0;
        }
    }
    Ok(())
}

/// Real Schur decomposition with the eigenvalues satisfying `select`
/// moved to the leading diagonal blocks.
///
/// 2×2 blocks carrying real eigenvalues are first split so that every
/// remaining 2×2 block is a complex-conjugate pair; blocks are then
/// bubbled into place with direct swaps.
pub fn ordered_real_schur(
    m: &DMatrix<f64>,
    select: impl Fn(Complex64) -> bool,
) -> Result<OrderedSchur> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Dimension("ordered_real_schur requires a square matrix".into()));
    }
    if n == 0 {
        return Ok(OrderedSchur {
            q: DMatrix::zeros(0, 0),
            t: DMatrix::zeros(0, 0),
            n_selected: 0,
        });
    }
    let scale = m.amax().max(1.0);
    let schur = Schur::try_new(m.clone(), 1e-14, 10_000)
        .ok_or_else(|| Error::Numerical("real Schur iteration failed to converge".into()))?;
    let (mut q, mut t) = schur.unpack();
    // Clear everything below the first subdiagonal and negligible
    // subdiagonal entries.
    let tol_sub = 1e-13 * scale;
    for c in 0..n {
        for r in c + 2..n {
            t[(r, c)] = 0.0;
        }
    }
    split_real_2x2_blocks(&mut t, &mut q, tol_sub);

    // Bubble selected blocks to the front.
    loop {
        let blocks = diagonal_blocks(&t, tol_sub);
        let flags: Vec<bool> = blocks
            .iter()
            .map(|&(s, sz)| select(block_eigs(&t, s, sz)[0]))
            .collect();
        let mut swapped = false;
        for k in 0..blocks.len().saturating_sub(1) {
            if !flags[k] && flags[k + 1] {
                let (i, p) = blocks[k];
                let (_, s2) = blocks[k + 1];
                swap_adjacent_blocks(&mut t, &mut q, i, p, s2)?;
                swapped = true;
                break;
            }
        }
        if !swapped {
            break;
        }
    }

    let blocks = diagonal_blocks(&t, tol_sub);
    let n_selected = blocks
        .iter()
        .take_while(|&&(s, sz)| select(block_eigs(&t, s, sz)[0]))
        .map(|&(_, sz)| sz)
        .sum();

    // Decomposition residual guard.
    let resid = (&q * &t * q.transpose() - m).amax();
    if resid > 1e-9 * scale {
        return Err(Error::Numerical(format!(
            "ordered Schur residual {resid:.3e} exceeds 1e-9·‖M‖"
        )));
    }
    Ok(OrderedSchur { q, t, n_selected })
}

/// The Hamiltonian matrix of the ARE associated with (A, B, C, D).
pub fn hamiltonian(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let r = d.transpose() * d;
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::RiccatiAssumption("DᵀD is singular".into()))?;
    let s = c.transpose() * d;
    let a0 = a - b * &r_inv * s.transpose();
    let q0 = c.transpose() * c - &s * &r_inv * s.transpose();
    Ok(block2x2(
        &a0,
        &(-(b * &r_inv * b.transpose())),
        &(-q0),
        &(-a0.transpose()),
    ))
}

/// Validate the three admissibility conditions for `ric(A, B, C, D)`:
/// DᵀD ≻ 0, PBH stabilizability of (A, B), and a Hamiltonian spectrum
/// bounded away from the imaginary axis.
pub fn check_riccati_assumptions(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
) -> Result<()> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || c.ncols() != n || d.ncols() != b.ncols() || d.nrows() != c.nrows() {
        return Err(Error::Dimension("ric: incompatible (A, B, C, D) dimensions".into()));
    }
    // R1: DᵀD nonsingular (positive definite).
    let r = d.transpose() * d;
    let r_scale = r.amax().max(1.0);
    if min_symmetric_eig(&r) <= tol::PSD_FLOOR * r_scale {
        return Err(Error::RiccatiAssumption(
            "DᵀD is not positive definite (R1)".into(),
        ));
    }
    // R2: PBH stabilizability of (A, B): [A − λI, B] has full row rank at
    // every eigenvalue λ with Re λ ≥ 0.
    let scale = a.amax().max(b.amax()).max(1.0);
    for lam in a.complex_eigenvalues().iter() {
        if lam.re < 0.0 {
            continue;
        }
        let pencil = crate::matrix::to_complex(&hstack(&[a, b]));
        let mut shifted = pencil;
        for i in 0..n {
            shifted[(i, i)] -= lam;
        }
        if crate::matrix::min_singular_value_complex(&shifted) <= tol::RANK_TOL * scale {
            return Err(Error::RiccatiAssumption(format!(
                "(A, B) is not stabilizable: PBH rank drop at λ = {lam} (R2)"
            )));
        }
    }
    // R3: no Hamiltonian eigenvalues on the imaginary axis.
    let h = hamiltonian(a, b, c, d)?;
    let h_scale = h.amax().max(1.0);
    for lam in h.complex_eigenvalues().iter() {
        if lam.re.abs() <= tol::HAMILTONIAN_IMAG_AXIS * h_scale {
            return Err(Error::RiccatiAssumption(format!(
                "Hamiltonian eigenvalue {lam} within 1e-8·‖H‖ of the imaginary axis (R3)"
            )));
        }
    }
    Ok(())
}

/// Riccati residual AᵀX + XA + CᵀC − (XB + CᵀD)(DᵀD)⁻¹(BᵀX + DᵀC).
fn ric_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> DMatrix<f64> {
    let r = d.transpose() * d;
    let r_inv = r.try_inverse().expect("R1 already checked");
    let s = c.transpose() * d;
    let gain_t = x * b + &s;
    a.transpose() * x + x * a + c.transpose() * c - &gain_t * r_inv * gain_t.transpose()
}

/// Gain from the current Riccati iterate: F = −(DᵀD)⁻¹(BᵀX + DᵀC).
fn gain_from(
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> DMatrix<f64> {
    let r = d.transpose() * d;
    let r_inv = r.try_inverse().expect("R1 already checked");
    -(r_inv * (b.transpose() * x + d.transpose() * c))
}

/// Solve the ARE for (A, B, C, D) and return the stabilizing pair (X, F).
///
/// The stable invariant subspace of the Hamiltonian gives the initial
/// iterate, which is then polished with Newton–Kleinman steps until the
/// residual falls below 1e-8·(1 + ‖X‖_F).
pub fn ric(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_riccati_assumptions(a, b, c, d)?;
    let n = a.nrows();
    let h = hamiltonian(a, b, c, d)?;
    let schur = ordered_real_schur(&h, |l| l.re < 0.0)?;
    if schur.n_selected != n {
        return Err(Error::Numerical(format!(
            "Hamiltonian has {} stable eigenvalues, expected {n}",
            schur.n_selected
        )));
    }
    let u = schur.q.columns(0, n).into_owned();
    let u1 = u.rows(0, n).into_owned();
    let u2 = u.rows(n, n).into_owned();
    if crate::matrix::min_singular_value(&u1) <= tol::RANK_TOL {
        return Err(Error::Numerical(
            "stable invariant subspace has singular leading block".into(),
        ));
    }
    // X = U2 U1⁻¹, via U1ᵀ Xᵀ = U2ᵀ.
    let xt = solve(&u1.transpose(), &u2.transpose(), "Riccati subspace extraction")?;
    let mut x = xt.transpose();
    x = (&x + &x.transpose()) * 0.5;

    // Newton–Kleinman polish.
    let mut best = x.clone();
    let mut best_resid = ric_residual(a, b, c, d, &best).norm();
    for _ in 0..20 {
        let bound = tol::RIC_RESIDUAL * (1.0 + best.norm());
        if best_resid <= bound {
            break;
        }
        let f = gain_from(b, c, d, &x);
        let a_cl = a + b * &f;
        if !is_hurwitz(&a_cl) {
            break;
        }
        let c_cl = c + d * &f;
        let x_next = lyapunov_solve(&a_cl, &(c_cl.transpose() * &c_cl))?;
        let resid = ric_residual(a, b, c, d, &x_next).norm();
        if resid < best_resid {
            best = x_next.clone();
            best_resid = resid;
        }
        x = x_next;
    }
    let x = best;
    let bound = tol::RIC_RESIDUAL * (1.0 + x.norm());
    if best_resid > bound {
        return Err(Error::Numerical(format!(
            "Riccati residual {best_resid:.3e} exceeds bound {bound:.3e}"
        )));
    }
    let f = gain_from(b, c, d, &x);
    let a_cl = a + b * &f;
    if !is_hurwitz(&a_cl) {
        return Err(Error::Numerical("Riccati gain failed to stabilize A + BF".into()));
    }
    if min_symmetric_eig(&x) < -tol::PSD_FLOOR * (1.0 + x.amax()) {
        return Err(Error::Numerical(
            "stabilizing Riccati solution is not positive semidefinite".into(),
        ));
    }
    Ok((x, f))
}

/// Filter-form convenience: solve the dual ARE for (Aᵀ, Cᵀ, Bᵀ, Dᵀ)
/// and return (Y, L) with L = Fᵀ so that A + LC is Hurwitz.
pub fn ric_dual(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    b: &DMatrix<f64>,
    d: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (y, ft) = ric(&a.transpose(), &c.transpose(), &b.transpose(), &d.transpose())?;
    Ok((y, ft.transpose()))
}
