//! Dense-matrix helpers shared across the toolkit: block assembly, the
//! scaling-and-squaring matrix exponential, finite-horizon Gramian
//! integrals, and small spectral utilities.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Horizontal concatenation. All blocks must share a row count.
pub fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    assert!(!blocks.is_empty(), "hstack of no blocks");
    let rows = blocks[0].nrows();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c0 = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hstack row mismatch");
        out.view_mut((0, c0), (rows, b.ncols())).copy_from(*b);
        c0 += b.ncols();
    }
    out
}

/// Vertical concatenation. All blocks must share a column count.
pub fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    assert!(!blocks.is_empty(), "vstack of no blocks");
    let cols = blocks[0].ncols();
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r0 = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack column mismatch");
        out.view_mut((r0, 0), (b.nrows(), cols)).copy_from(*b);
        r0 += b.nrows();
    }
    out
}

/// Block-diagonal assembly of rectangular blocks.
pub fn blkdiag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        out.view_mut((r0, c0), (b.nrows(), b.ncols())).copy_from(*b);
        r0 += b.nrows();
        c0 += b.ncols();
    }
    out
}

/// 2×2 block assembly [a, b; c, d].
pub fn block2x2(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
) -> DMatrix<f64> {
    vstack(&[&hstack(&[a, b]), &hstack(&[c, d])])
}

/// Promote a real matrix to complex entries.
pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Matrix exponential by Padé scaling and squaring (order 13).
///
/// Follows Higham's revisited scaling-and-squaring method: the 1-norm of
/// the input selects a Padé order in {3,5,7,9,13}; above the order-13
/// threshold the matrix is scaled by 2^{-k} and the result squared k times.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), a.ncols(), "expm of a non-square matrix");
    let norm = one_norm(a);
    let (num, den, squarings) = if norm < 1.495_585_217_958_292e-2 {
        let (u, v) = pade_uv(a, &[120.0, 60.0, 12.0, 1.0]);
        (u, v, 0)
    } else if norm < 2.539_398_330_063_230e-1 {
        let (u, v) = pade_uv(a, &[30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0]);
        (u, v, 0)
    } else if norm < 9.504_178_996_162_932e-1 {
        let (u, v) = pade_uv(
            a,
            &[17_297_280.0, 8_648_640.0, 1_995_840.0, 277_200.0, 25_200.0, 1_512.0, 56.0, 1.0],
        );
        (u, v, 0)
    } else if norm < 2.097_847_961_257_068 {
        let (u, v) = pade_uv(
            a,
            &[
                17_643_225_600.0,
                8_821_612_800.0,
                2_075_673_600.0,
                302_702_400.0,
                30_270_240.0,
                2_162_160.0,
                110_880.0,
                3_960.0,
                90.0,
                1.0,
            ],
        );
        (u, v, 0)
    } else {
        const THETA13: f64 = 5.371_920_351_148_152;
        let squarings = ((norm / THETA13).log2().ceil() as i32).max(0);
        let scaled = a * 2f64.powi(-squarings);
        let (u, v) = pade13_uv(&scaled);
        (u, v, squarings)
    };

    // Padé approximant is (V + U)/(V − U); solve (V − U) R = (V + U).
    let rhs = &den + &num;
    let lhs = &den - &num;
    let mut r = lhs
        .lu()
        .solve(&rhs)
        .expect("expm: singular Padé denominator");
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

/// Maximum absolute column sum.
pub fn one_norm(a: &DMatrix<f64>) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Padé numerator/denominator for orders up to 9 from the coefficient table.
fn pade_uv(a: &DMatrix<f64>, b: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let eye = DMatrix::identity(n, n);
    let a2 = a * a;
    // Even powers of A² accumulate into odd (U) and even (V) parts.
    let mut u = &eye * b[1];
    let mut v = &eye * b[0];
    let mut a_pow = eye;
    for k in 1..=(b.len() / 2 - 1) {
        a_pow = &a_pow * &a2;
        u += &a_pow * b[2 * k + 1];
        v += &a_pow * b[2 * k];
    }
    (a * u, v)
}

/// Order-13 Padé numerator/denominator (Higham's economical evaluation).
fn pade13_uv(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    const B: [f64; 14] = [
        64_764_752_532_480_000.0,
        32_382_376_266_240_000.0,
        7_771_770_303_897_600.0,
        1_187_353_796_428_800.0,
        129_060_195_264_000.0,
        10_559_470_521_600.0,
        670_442_572_800.0,
        33_522_128_640.0,
        1_323_241_920.0,
        40_840_800.0,
        960_960.0,
        16_380.0,
        182.0,
        1.0,
    ];
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let u_hi = &a6 * (&a6 * B[13] + &a4 * B[11] + &a2 * B[9]);
    let u_lo = &a6 * B[7] + &a4 * B[5] + &a2 * B[3] + &eye * B[1];
    let u = a * (u_hi + u_lo);
    let v_hi = &a6 * (&a6 * B[12] + &a4 * B[10] + &a2 * B[8]);
    let v = v_hi + &a6 * B[6] + &a4 * B[4] + &a2 * B[2] + &eye * B[0];
    (u, v)
}

/// Finite-horizon Gramian integral ∫₀^τ e^{Aᵀt} Q e^{At} dt via the Van Loan
/// augmented exponential.
///
/// Exponentiates [[−Aᵀ, Q], [0, A]]·τ; the (1,2) block G satisfies
/// W = (e^{Aτ})ᵀ G.
pub fn van_loan_gramian(a: &DMatrix<f64>, q: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let n = a.nrows();
    assert_eq!(q.nrows(), n);
    assert_eq!(q.ncols(), n);
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&(-a.transpose()));
    m.view_mut((0, n), (n, n)).copy_from(q);
    m.view_mut((n, n), (n, n)).copy_from(a);
    let e = expm(&(m * tau));
    let g = e.view((0, n), (n, n)).into_owned();
    let ea = e.view((n, n), (n, n)).into_owned();
    let w = ea.transpose() * g;
    // Symmetrize: the integrand is symmetric whenever Q is.
    (&w + &w.transpose()) * 0.5
}

/// Complex matrix exponential via the real 2n×2n embedding
/// Z = X + iY ↦ [[X, −Y], [Y, X]], which is an algebra homomorphism.
pub fn expm_complex(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let n = m.nrows();
    assert_eq!(m.ncols(), n);
    let mut r = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = m[(i, j)];
            r[(i, j)] = z.re;
            r[(i, j + n)] = -z.im;
            r[(i + n, j)] = z.im;
            r[(i + n, j + n)] = z.re;
        }
    }
    let e = expm(&r);
    DMatrix::from_fn(n, n, |i, j| Complex64::new(e[(i, j)], e[(i + n, j)]))
}

/// The φ₁ integral ∫₀^τ e^{Mt} dt for complex M, via the augmented
/// exponential of [[M, I], [0, 0]]·τ (top-right block). Well defined for
/// singular M, unlike the resolvent form M⁻¹(e^{Mτ} − I).
pub fn phi1_complex(m: &DMatrix<Complex64>, tau: f64) -> DMatrix<Complex64> {
    let n = m.nrows();
    assert_eq!(m.ncols(), n);
    let mut aug = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            aug[(i, j)] = m[(i, j)] * Complex64::new(tau, 0.0);
        }
        aug[(i, i + n)] = Complex64::new(tau, 0.0);
    }
    let e = expm_complex(&aug);
    e.view((0, n), (n, n)).into_owned()
}

/// Largest entry magnitude of a complex matrix.
pub fn cmax(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Minimum eigenvalue of the symmetric part of `m`.
pub fn min_symmetric_eig(m: &DMatrix<f64>) -> f64 {
    let sym = (m + &m.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Check that `m` is PSD up to the floor −tol·(1 + ‖m‖_F).
pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    min_symmetric_eig(m) >= -tol * (1.0 + m.norm())
}

/// Solve the dense linear system M·x = rhs, failing on (numerical) singularity.
pub fn solve(m: &DMatrix<f64>, rhs: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::Numerical(format!("singular system in {context}")))
}

/// Solve the complex dense linear system M·x = rhs.
pub fn solve_complex(
    m: &DMatrix<Complex64>,
    rhs: &DMatrix<Complex64>,
    context: &str,
) -> Result<DMatrix<Complex64>> {
    m.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::Numerical(format!("singular complex system in {context}")))
}

/// Minimum singular value (0 for an empty matrix).
pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Minimum singular value of a complex matrix.
pub fn min_singular_value_complex(m: &DMatrix<Complex64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Numerical rank at a relative threshold on singular values.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Symmetric square root of a symmetric positive-definite matrix.
pub fn sym_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + &m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    for &lam in eig.eigenvalues.iter() {
        if lam <= 0.0 {
            return Err(Error::Structure(
                "symmetric square root of a non-positive-definite matrix".into(),
            ));
        }
    }
    let d = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| l.sqrt()),
    );
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose())
}

/// Inverse of the symmetric square root of a symmetric positive-definite matrix.
pub fn sym_sqrt_inv(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + &m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    for &lam in eig.eigenvalues.iter() {
        if lam <= 0.0 {
            return Err(Error::Structure(
                "inverse symmetric square root of a non-positive-definite matrix".into(),
            ));
        }
    }
    let d = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| 1.0 / l.sqrt()),
    );
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn stacking_assembles_blocks_in_order() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let b = DMatrix::from_row_slice(1, 1, &[3.0]);
        let h = hstack(&[&a, &b]);
        assert_eq!(h, DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]));
        let v = vstack(&[&h, &DMatrix::from_row_slice(1, 3, &[4.0, 5.0, 6.0])]);
        assert_eq!(v[(1, 2)], 6.0);
        let d = blkdiag(&[&a, &b]);
        assert_eq!(d.nrows(), 2);
        assert_eq!(d.ncols(), 3);
        assert_eq!(d[(1, 2)], 3.0);
        assert_eq!(d[(1, 0)], 0.0);
    }

    #[test]
    fn expm_zero_is_identity() {
        let z = DMatrix::<f64>::zeros(3, 3);
        assert_relative_eq!(expm(&z), DMatrix::identity(3, 3), epsilon = 1e-14);
    }

    #[test]
    fn expm_scalar_matches_exp() {
        for &a in &[-3.0, -0.2, 0.0, 0.7, 4.5] {
            let m = DMatrix::from_element(1, 1, a);
            assert_relative_eq!(expm(&m)[(0, 0)], a.exp(), max_relative = 1e-13);
        }
    }

    #[test]
    fn expm_nilpotent_matches_truncated_series() {
        // A = [[0,1],[0,0]] has A² = 0, so e^A = I + A exactly.
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let e = expm(&a);
        assert_relative_eq!(e[(0, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(e[(0, 1)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(e[(1, 0)], 0.0, epsilon = 1e-14);
        assert_relative_eq!(e[(1, 1)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn expm_rotation_matches_trig() {
        let th: f64 = 2.3;
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -th, th, 0.0]);
        let e = expm(&a);
        assert_relative_eq!(e[(0, 0)], th.cos(), epsilon = 1e-13);
        assert_relative_eq!(e[(1, 0)], th.sin(), epsilon = 1e-13);
    }

    #[test]
    fn expm_large_norm_uses_squaring_consistently() {
        // e^{A} = (e^{A/2})² independently of the branch taken.
        let a = DMatrix::from_row_slice(
            3,
            3,
            &[-8.0, 3.0, 0.5, 1.0, -12.0, 2.0, 0.0, 4.0, -6.0],
        );
        let half = expm(&(&a * 0.5));
        assert_relative_eq!(expm(&a), &half * &half, max_relative = 1e-11);
    }

    #[test]
    fn van_loan_matches_scalar_integral() {
        // ∫₀^τ e^{2at} q dt = q(e^{2aτ} − 1)/(2a).
        let a = -0.8;
        let q = 1.7;
        let tau = 1.3;
        let w = van_loan_gramian(
            &DMatrix::from_element(1, 1, a),
            &DMatrix::from_element(1, 1, q),
            tau,
        );
        let expect = q * ((2.0 * a * tau).exp() - 1.0) / (2.0 * a);
        assert_relative_eq!(w[(0, 0)], expect, max_relative = 1e-12);
    }

    #[test]
    fn van_loan_matches_trapezoid_quadrature() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -0.4]);
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 2.0]);
        let tau = 0.9;
        let w = van_loan_gramian(&a, &q, tau);
        // Trapezoid on a fine grid as an independent oracle.
        let steps = 20_000;
        let dt = tau / steps as f64;
        let mut acc = DMatrix::zeros(2, 2);
        for k in 0..=steps {
            let t = k as f64 * dt;
            let e = expm(&(&a * t));
            let term = e.transpose() * &q * &e;
            let weight = if k == 0 || k == steps { 0.5 } else { 1.0 };
            acc += term * (weight * dt);
        }
        assert_relative_eq!(w, acc, max_relative = 1e-6);
    }

    #[test]
    fn sym_sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let r = sym_sqrt(&m).unwrap();
        assert_relative_eq!(&r * &r, m, max_relative = 1e-12);
        let ri = sym_sqrt_inv(&m).unwrap();
        assert_relative_eq!(&r * &ri, DMatrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn rank_counts_significant_singular_values() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(rank(&m, 1e-8), 1);
        assert_eq!(rank(&DMatrix::<f64>::identity(3, 3), 1e-8), 3);
        assert_eq!(rank(&DMatrix::<f64>::zeros(2, 3), 1e-8), 0);
    }

    #[test]
    fn expm_complex_scalar_matches_exp() {
        let z = Complex64::new(-0.4, 1.3);
        let e = expm_complex(&DMatrix::from_element(1, 1, z));
        let expect = z.exp();
        assert_relative_eq!(e[(0, 0)].re, expect.re, epsilon = 1e-12);
        assert_relative_eq!(e[(0, 0)].im, expect.im, epsilon = 1e-12);
    }

    #[test]
    fn expm_complex_agrees_with_real_on_real_input() {
        let a = DMatrix::from_row_slice(2, 2, &[0.1, -1.0, 0.7, -0.3]);
        let ec = expm_complex(&to_complex(&a));
        let er = expm(&a);
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(ec[(i, j)].re, er[(i, j)], epsilon = 1e-12);
                assert_relative_eq!(ec[(i, j)].im, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn phi1_handles_zero_and_invertible_cases() {
        // M = 0: ∫₀^τ I dt = τ·I.
        let zero = DMatrix::from_element(1, 1, Complex64::new(0.0, 0.0));
        let p = phi1_complex(&zero, 2.5);
        assert_relative_eq!(p[(0, 0)].re, 2.5, epsilon = 1e-12);
        // Scalar m: (e^{mτ} − 1)/m.
        let m = Complex64::new(-0.8, 0.6);
        let p = phi1_complex(&DMatrix::from_element(1, 1, m), 1.7);
        let expect = ((m * 1.7).exp() - 1.0) / m;
        assert_relative_eq!(p[(0, 0)].re, expect.re, epsilon = 1e-12);
        assert_relative_eq!(p[(0, 0)].im, expect.im, epsilon = 1e-12);
    }
}
