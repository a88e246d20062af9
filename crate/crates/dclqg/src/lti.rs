//! State-space algebra: realizations, interconnections, Lyapunov solves,
//! H2 norms, and frequency-response evaluation.
//!
//! A rational transfer matrix G(s) = D + C(sI − A)⁻¹B is stored as the
//! quadruple (A, B, C, D) plus optional input/output block partitions.
//! Realizations produced by interconnection are not minimized; equivalence
//! of systems is established by comparing frequency responses on a grid.
//! An explicit Kalman reduction is available for pole analysis of
//! structurally non-minimal realizations.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::matrix::{blkdiag, hstack, solve, solve_complex, to_complex, vstack};
use crate::tol;

/// A rational LTI system (A, B, C, D) with optional block-partition
/// metadata on its inputs and outputs.
#[derive(Debug, Clone)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    /// Output block sizes; must sum to the row count of C/D when present.
    pub row_partition: Option<Vec<usize>>,
    /// Input block sizes; must sum to the column count of B/D when present.
    pub col_partition: Option<Vec<usize>>,
}

/// A transfer-matrix value at one complex frequency.
#[derive(Debug, Clone)]
pub struct FrequencySample {
    pub s: Complex64,
    pub value: DMatrix<Complex64>,
}

impl StateSpace {
    /// Build a system from its realization matrices, checking dimensions.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Dimension("A must be square".into()));
        }
        if b.nrows() != a.nrows() {
            return Err(Error::Dimension("B must have as many rows as A".into()));
        }
        if c.ncols() != a.ncols() {
            return Err(Error::Dimension("C must have as many columns as A".into()));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::Dimension("D must be (outputs × inputs)".into()));
        }
        Ok(Self {
            a,
            b,
            c,
            d,
            row_partition: None,
            col_partition: None,
        })
    }

    /// A static (memoryless) system y = D u.
    pub fn static_gain(d: DMatrix<f64>) -> Self {
        let (r, q) = (d.nrows(), d.ncols());
        Self {
            a: DMatrix::zeros(0, 0),
            b: DMatrix::zeros(0, q),
            c: DMatrix::zeros(r, 0),
            d,
            row_partition: None,
            col_partition: None,
        }
    }

    /// The k×k identity as a static system.
    pub fn identity(k: usize) -> Self {
        Self::static_gain(DMatrix::identity(k, k))
    }

    /// The r×q zero system.
    pub fn zero(r: usize, q: usize) -> Self {
        Self::static_gain(DMatrix::zeros(r, q))
    }

    /// Attach 2×2 (or finer) block partitions to inputs and outputs.
    pub fn with_partitions(mut self, rows: Vec<usize>, cols: Vec<usize>) -> Result<Self> {
        if rows.iter().sum::<usize>() != self.noutputs() {
            return Err(Error::Dimension("row partition does not sum to output count".into()));
        }
        if cols.iter().sum::<usize>() != self.ninputs() {
            return Err(Error::Dimension("col partition does not sum to input count".into()));
        }
        self.row_partition = Some(rows);
        self.col_partition = Some(cols);
        Ok(self)
    }

    pub fn nstates(&self) -> usize {
        self.a.nrows()
    }

    pub fn ninputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn noutputs(&self) -> usize {
        self.c.nrows()
    }

    /// Transfer-matrix value D + C(sI − A)⁻¹B at one frequency.
    pub fn eval(&self, s: Complex64) -> DMatrix<Complex64> {
        let n = self.nstates();
        let dc = to_complex(&self.d);
        if n == 0 {
            return dc;
        }
        let si_a = DMatrix::from_fn(n, n, |i, j| {
            let diag = if i == j { s } else { Complex64::new(0.0, 0.0) };
            diag - Complex64::new(self.a[(i, j)], 0.0)
        });
        let x = solve_complex(&si_a, &to_complex(&self.b), "transfer evaluation")
            .expect("frequency on the spectrum of A");
        to_complex(&self.c) * x + dc
    }

    /// Frequency response on a grid of complex frequencies.
    pub fn freq_response(&self, grid: &[Complex64]) -> Vec<FrequencySample> {
        grid.iter()
            .map(|&s| FrequencySample {
                s,
                value: self.eval(s),
            })
            .collect()
    }

    /// Eigenvalues of A (system poles counted with the realization).
    pub fn poles(&self) -> Vec<Complex64> {
        if self.nstates() == 0 {
            return Vec::new();
        }
        self.a.complex_eigenvalues().iter().cloned().collect()
    }

    /// Largest real part over the spectrum of A (−∞ for a static system).
    pub fn max_real_pole(&self) -> f64 {
        self.poles()
            .iter()
            .map(|l| l.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Conjugate system G~(s) with G~(iω) = G(iω)* for all ω.
    ///
    /// Realization (−Aᵀ, Cᵀ, −Bᵀ, Dᵀ).
    pub fn conj_transpose(&self) -> Self {
        Self {
            a: -self.a.transpose(),
            b: self.c.transpose(),
            c: -self.b.transpose(),
            d: self.d.transpose(),
            row_partition: self.col_partition.clone(),
            col_partition: self.row_partition.clone(),
        }
    }

    /// Series interconnection self ∘ g (u → g → self → y).
    pub fn series(&self, g: &StateSpace) -> Result<StateSpace> {
        if g.noutputs() != self.ninputs() {
            return Err(Error::Dimension("series: inner outputs must match outer inputs".into()));
        }
        let a = vstack(&[
            &hstack(&[&g.a, &DMatrix::zeros(g.nstates(), self.nstates())]),
            &hstack(&[&(&self.b * &g.c), &self.a]),
        ]);
        let b = vstack(&[&g.b, &(&self.b * &g.d)]);
        let c = hstack(&[&(&self.d * &g.c), &self.c]);
        let d = &self.d * &g.d;
        StateSpace::new(a, b, c, d)
    }

    /// Parallel interconnection self + g (shared input, summed output).
    pub fn parallel(&self, g: &StateSpace) -> Result<StateSpace> {
        if g.ninputs() != self.ninputs() || g.noutputs() != self.noutputs() {
            return Err(Error::Dimension("parallel: dimensions must agree".into()));
        }
        let a = blkdiag(&[&self.a, &g.a]);
        let b = vstack(&[&self.b, &g.b]);
        let c = hstack(&[&self.c, &g.c]);
        let d = &self.d + &g.d;
        StateSpace::new(a, b, c, d)
    }

    /// Block-diagonal stacking diag(self, g): independent channels.
    pub fn stack(&self, g: &StateSpace) -> StateSpace {
        StateSpace {
            a: blkdiag(&[&self.a, &g.a]),
            b: blkdiag(&[&self.b, &g.b]),
            c: blkdiag(&[&self.c, &g.c]),
            d: blkdiag(&[&self.d, &g.d]),
            row_partition: None,
            col_partition: None,
        }
    }

    /// Side-by-side inputs [self, g]: shared output space.
    pub fn hcat(&self, g: &StateSpace) -> Result<StateSpace> {
        if g.noutputs() != self.noutputs() {
            return Err(Error::Dimension("hcat: output counts must agree".into()));
        }
        StateSpace::new(
            blkdiag(&[&self.a, &g.a]),
            blkdiag(&[&self.b, &g.b]),
            hstack(&[&self.c, &g.c]),
            hstack(&[&self.d, &g.d]),
        )
    }

    /// Stacked outputs [self; g]: shared input.
    pub fn vcat(&self, g: &StateSpace) -> Result<StateSpace> {
        if g.ninputs() != self.ninputs() {
            return Err(Error::Dimension("vcat: input counts must agree".into()));
        }
        StateSpace::new(
            blkdiag(&[&self.a, &g.a]),
            vstack(&[&self.b, &g.b]),
            blkdiag(&[&self.c, &g.c]),
            vstack(&[&self.d, &g.d]),
        )
    }

    /// Negate the output.
    pub fn neg(&self) -> StateSpace {
        StateSpace {
            a: self.a.clone(),
            b: self.b.clone(),
            c: -&self.c,
            d: -&self.d,
            row_partition: self.row_partition.clone(),
            col_partition: self.col_partition.clone(),
        }
    }

    /// Keep only the listed output rows.
    pub fn select_outputs(&self, rows: &[usize]) -> StateSpace {
        let c = DMatrix::from_fn(rows.len(), self.nstates(), |i, j| self.c[(rows[i], j)]);
        let d = DMatrix::from_fn(rows.len(), self.ninputs(), |i, j| self.d[(rows[i], j)]);
        StateSpace {
            a: self.a.clone(),
            b: self.b.clone(),
            c,
            d,
            row_partition: None,
            col_partition: self.col_partition.clone(),
        }
    }

    /// Keep only the listed input columns.
    pub fn select_inputs(&self, cols: &[usize]) -> StateSpace {
        let b = DMatrix::from_fn(self.nstates(), cols.len(), |i, j| self.b[(i, cols[j])]);
        let d = DMatrix::from_fn(self.noutputs(), cols.len(), |i, j| self.d[(i, cols[j])]);
        StateSpace {
            a: self.a.clone(),
            b,
            c: self.c.clone(),
            d,
            row_partition: self.row_partition.clone(),
            col_partition: None,
        }
    }

    /// The four sub-blocks of a 2×2-partitioned system, as index ranges
    /// (r1, q1) = sizes of the first output/input blocks.
    fn split_2x2(&self) -> Result<(usize, usize)> {
        let rp = self
            .row_partition
            .as_ref()
            .ok_or_else(|| Error::Structure("missing 2×2 row partition".into()))?;
        let cp = self
            .col_partition
            .as_ref()
            .ok_or_else(|| Error::Structure("missing 2×2 col partition".into()))?;
        if rp.len() != 2 || cp.len() != 2 {
            return Err(Error::Structure("partition is not 2×2".into()));
        }
        Ok((rp[0], cp[0]))
    }
}

/// Check whether A is Hurwitz with a strict margin: max Re λ(A) < −1e-9.
pub fn is_hurwitz(a: &DMatrix<f64>) -> bool {
    if a.nrows() == 0 {
        return true;
    }
    a.complex_eigenvalues()
        .iter()
        .all(|l| l.re < -tol::HURWITZ_MARGIN)
}

/// Solve the Lyapunov equation AᵀW + WA + Q = 0 for symmetric Q.
///
/// Kronecker-vectorized direct solve followed by one step of iterative
/// refinement; residual is guaranteed ≤ 1e-10·(1 + ‖Q‖_F). Refuses a
/// non-Hurwitz A because the Gramian interpretation then fails.
pub fn lyapunov_solve(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::Dimension("lyapunov_solve: A, Q must be square of equal size".into()));
    }
    if !is_hurwitz(a) {
        return Err(Error::NotHurwitz("lyapunov_solve requires a Hurwitz A".into()));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    // vec(AᵀW + WA) = (I ⊗ Aᵀ + Aᵀ ⊗ I) vec(W)
    let m = eye.kronecker(&at) + at.kronecker(&eye);
    let lu = m.lu();
    let solve_step = |rhs: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let vec_rhs = DMatrix::from_column_slice(n * n, 1, rhs.as_slice());
        let w = lu
            .solve(&(-vec_rhs))
            .ok_or_else(|| Error::Numerical("singular Lyapunov operator".into()))?;
        let w = DMatrix::from_column_slice(n, n, w.as_slice());
        Ok((&w + &w.transpose()) * 0.5)
    };
    let mut w = solve_step(q)?;
    let bound = tol::LYAP_RESIDUAL * (1.0 + q.norm());
    for _ in 0..3 {
        let resid = &at * &w + &w * a + q;
        if resid.norm() <= bound {
            return Ok(w);
        }
        w += solve_step(&resid)?;
    }
    let resid = (&at * &w + &w * a + q).norm();
    if resid <= bound {
        Ok(w)
    } else {
        Err(Error::Numerical(format!(
            "Lyapunov residual {resid:.3e} exceeds bound {bound:.3e}"
        )))
    }
}

/// Squared H2 norm of a strictly proper stable system.
///
/// Computed as trace(C W_c Cᵀ) with the controllability Gramian and
/// cross-checked against trace(Bᵀ W_o B) with the observability Gramian;
/// the two must agree to 1e-9 relative.
pub fn h2_norm_sq(g: &StateSpace) -> Result<f64> {
    if g.d.amax() > 0.0 {
        return Err(Error::Structure("h2_norm_sq requires D = 0 (else the norm is infinite)".into()));
    }
    if !is_hurwitz(&g.a) {
        return Err(Error::NotHurwitz("h2_norm_sq requires a Hurwitz A".into()));
    }
    if g.nstates() == 0 {
        return Ok(0.0);
    }
    let wc = lyapunov_solve(&g.a.transpose(), &(&g.b * g.b.transpose()))?;
    let wo = lyapunov_solve(&g.a, &(g.c.transpose() * &g.c))?;
    let via_c = (&g.c * &wc * g.c.transpose()).trace();
    let via_o = (g.b.transpose() * &wo * &g.b).trace();
    let scale = via_c.abs().max(via_o.abs()).max(f64::MIN_POSITIVE);
    if (via_c - via_o).abs() > tol::H2_DUAL_AGREEMENT * scale.max(1.0) {
        return Err(Error::Numerical(format!(
            "H2 Gramian forms disagree: {via_c:.12e} vs {via_o:.12e}"
        )));
    }
    Ok(0.5 * (via_c + via_o))
}

/// Lower linear fractional transformation F_l(P, K) = P11 + P12 K (I − P22 K)⁻¹ P21.
///
/// `p` must carry a 2×2 partition (outputs z/y, inputs w/u); K closes the
/// loop from y to u. The result maps w → z and has state dimension
/// dim(P) + dim(K).
pub fn lft_lower(p: &StateSpace, k: &StateSpace) -> Result<StateSpace> {
    let (r1, q1) = p.split_2x2()?;
    let (r2, q2) = (p.noutputs() - r1, p.ninputs() - q1);
    if k.ninputs() != r2 || k.noutputs() != q2 {
        return Err(Error::Dimension(format!(
            "lft_lower: K must be {q2}×{r2}, got {}×{}",
            k.noutputs(),
            k.ninputs()
        )));
    }
    let b1 = p.b.columns(0, q1).into_owned();
    let b2 = p.b.columns(q1, q2).into_owned();
    let c1 = p.c.rows(0, r1).into_owned();
    let c2 = p.c.rows(r1, r2).into_owned();
    let d11 = p.d.view((0, 0), (r1, q1)).into_owned();
    let d12 = p.d.view((0, q1), (r1, q2)).into_owned();
    let d21 = p.d.view((r1, 0), (r2, q1)).into_owned();
    let d22 = p.d.view((r1, q1), (r2, q2)).into_owned();

    // Well-posedness: I − D22·D_K invertible.
    let loop_mat = DMatrix::identity(r2, r2) - &d22 * &k.d;
    let delta = loop_mat
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::AlgebraicLoop("singular I − D22·D_K in lft_lower".into()))?;
    let delta_t = DMatrix::identity(q2, q2) + &k.d * &delta * &d22;

    let kd_delta = &k.d * &delta;
    let a11 = &p.a + &b2 * &kd_delta * &c2;
    let a = vstack(&[
        &hstack(&[&a11, &(&b2 * &delta_t * &k.c)]),
        &hstack(&[&(&k.b * &delta * &c2), &(&k.a + &k.b * &delta * &d22 * &k.c)]),
    ]);
    let b = vstack(&[
        &(&b1 + &b2 * &kd_delta * &d21),
        &(&k.b * &delta * &d21),
    ]);
    let c = hstack(&[
        &(&c1 + &d12 * &kd_delta * &c2),
        &(&d12 * &delta_t * &k.c),
    ]);
    let d = &d11 + &d12 * &kd_delta * &d21;
    StateSpace::new(a, b, c, d)
}

/// Upper linear fractional transformation F_u(P, K) = P22 + P21 K (I − P11 K)⁻¹ P12.
///
/// K closes the loop from the first output block back to the first input
/// block. Implemented by swapping the two block rows and columns of P and
/// delegating to [`lft_lower`].
pub fn lft_upper(p: &StateSpace, k: &StateSpace) -> Result<StateSpace> {
    let (r1, q1) = p.split_2x2()?;
    let (r2, q2) = (p.noutputs() - r1, p.ninputs() - q1);
    let row_order: Vec<usize> = (r1..r1 + r2).chain(0..r1).collect();
    let col_order: Vec<usize> = (q1..q1 + q2).chain(0..q1).collect();
    let swapped = p
        .select_outputs(&row_order)
        .select_inputs(&col_order)
        .with_partitions(vec![r2, r1], vec![q2, q1])?;
    lft_lower(&swapped, k)
}

/// The default evaluation grid: s = iω for ω = 0 plus 50 logarithmically
/// spaced points in [1e-3, 1e3] rad/s.
pub fn standard_frequency_grid() -> Vec<Complex64> {
    let mut grid = vec![Complex64::new(0.0, 0.0)];
    let (lo, hi, count) = (1e-3f64, 1e3f64, 50);
    for k in 0..count {
        let t = k as f64 / (count - 1) as f64;
        let w = lo * (hi / lo).powf(t);
        grid.push(Complex64::new(0.0, w));
    }
    grid
}

/// Maximum absolute entry difference of two frequency responses on a grid.
pub fn max_freq_deviation(g1: &StateSpace, g2: &StateSpace, grid: &[Complex64]) -> f64 {
    assert_eq!(g1.noutputs(), g2.noutputs());
    assert_eq!(g1.ninputs(), g2.ninputs());
    grid.iter()
        .map(|&s| {
            let d = g1.eval(s) - g2.eval(s);
            d.iter().map(|z| z.norm()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// One-sided solve of the Sylvester equation A₁ᵀS + SA₂ + Q = 0 by
/// Kronecker vectorization. Both A₁ and A₂ must be Hurwitz (the solution
/// is then the convergent integral ∫₀^∞ e^{A₁ᵀt} Q e^{A₂t} dt).
pub fn sylvester_solve(
    a1: &DMatrix<f64>,
    a2: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (n1, n2) = (a1.nrows(), a2.nrows());
    if q.nrows() != n1 || q.ncols() != n2 {
        return Err(Error::Dimension("sylvester_solve: Q must be n1×n2".into()));
    }
    if !is_hurwitz(a1) || !is_hurwitz(a2) {
        return Err(Error::NotHurwitz("sylvester_solve requires Hurwitz coefficients".into()));
    }
    if n1 == 0 || n2 == 0 {
        return Ok(DMatrix::zeros(n1, n2));
    }
    // vec(A₁ᵀ S + S A₂) = (I ⊗ A₁ᵀ + A₂ᵀ ⊗ I) vec(S)
    let m = DMatrix::<f64>::identity(n2, n2).kronecker(&a1.transpose())
        + a2.transpose().kronecker(&DMatrix::identity(n1, n1));
    let rhs = DMatrix::from_column_slice(n1 * n2, 1, q.as_slice());
    let s = solve(&m, &(-rhs), "sylvester_solve")?;
    Ok(DMatrix::from_column_slice(n1, n2, s.as_slice()))
}

/// Solve the general Sylvester equation A X − X B = Q by Kronecker
/// vectorization. No stability is assumed; solvability requires the
/// spectra of A and B to be disjoint, which is checked a posteriori
/// through the residual.
pub fn sylvester_general(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (n1, n2) = (a.nrows(), b.nrows());
    if q.nrows() != n1 || q.ncols() != n2 {
        return Err(Error::Dimension("sylvester_general: Q must be n1×n2".into()));
    }
    if n1 == 0 || n2 == 0 {
        return Ok(DMatrix::zeros(n1, n2));
    }
    // vec(A X − X B) = (I ⊗ A − Bᵀ ⊗ I) vec(X)
    let m = DMatrix::<f64>::identity(n2, n2).kronecker(a)
        - b.transpose().kronecker(&DMatrix::identity(n1, n1));
    let rhs = DMatrix::from_column_slice(n1 * n2, 1, q.as_slice());
    let x_vec = solve(&m, &rhs, "sylvester_general")?;
    let x = DMatrix::from_column_slice(n1, n2, x_vec.as_slice());
    let residual = (a * &x - &x * b - q).amax();
    let scale = 1.0 + q.amax() + x.amax() * (a.amax() + b.amax());
    if residual > 1e-8 * scale {
        return Err(Error::Numerical(format!(
            "sylvester_general: residual {residual:.3e} exceeds tolerance; \
             the coefficient spectra are too close"
        )));
    }
    Ok(x)
}

/// Realization of (I − G)⁻¹ for a strictly proper square G: the unity
/// feedback loop {A + BC, B, C, I}.
pub fn inverse_feedback(g: &StateSpace) -> Result<StateSpace> {
    if g.ninputs() != g.noutputs() {
        return Err(Error::Dimension("inverse_feedback: G must be square".into()));
    }
    if g.d.amax() != 0.0 {
        return Err(Error::Structure("inverse_feedback requires D = 0".into()));
    }
    StateSpace::new(
        &g.a + &g.b * &g.c,
        g.b.clone(),
        g.c.clone(),
        DMatrix::identity(g.ninputs(), g.ninputs()),
    )
}

/// Orthonormal basis of the smallest A-invariant subspace containing the
/// columns of B, grown by orthogonal iteration with an SVD rank cut at
/// each step.
fn reachable_basis(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let mut basis: Option<DMatrix<f64>> = None;
    let mut frontier = b.clone();
    for _ in 0..=n {
        // Project the frontier onto the orthogonal complement of the basis.
        let mut residual = frontier.clone();
        if let Some(v) = &basis {
            residual -= v * (v.transpose() * &frontier);
        }
        let scale = frontier.amax().max(b.amax()).max(1.0);
        let svd = residual.svd(true, false);
        let u = svd.u.as_ref().expect("svd with u");
        let mut new_cols = Vec::new();
        for (k, sv) in svd.singular_values.iter().enumerate() {
            if *sv > tol * scale {
                new_cols.push(u.column(k).into_owned());
            }
        }
        if new_cols.is_empty() {
            break;
        }
        let added = DMatrix::from_columns(&new_cols);
        frontier = a * &added;
        basis = Some(match basis {
            None => added,
            Some(v) => {
                let joint = hstack(&[&v, &added]);
                // Re-orthonormalize the joint basis for numerical hygiene.
                let svd = joint.svd(true, false);
                let u = svd.u.expect("svd with u");
                let rank = svd
                    .singular_values
                    .iter()
                    .filter(|sv| **sv > tol)
                    .count();
                u.columns(0, rank).into_owned()
            }
        });
        if basis.as_ref().map(|v| v.ncols()) == Some(n) {
            break;
        }
    }
    basis.unwrap_or_else(|| DMatrix::zeros(n, 0))
}

/// Kalman reduction: remove unreachable and unobservable modes by
/// orthogonal projection, preserving the transfer matrix. `tol` is the
/// relative rank tolerance for the subspace computations.
pub fn minimal_realization(g: &StateSpace, tol: f64) -> StateSpace {
    // Reachable restriction.
    let vc = reachable_basis(&g.a, &g.b, tol);
    let a1 = vc.transpose() * &g.a * &vc;
    let b1 = vc.transpose() * &g.b;
    let c1 = &g.c * &vc;
    // Observable restriction = reachable restriction of the dual.
    let vo = reachable_basis(&a1.transpose(), &c1.transpose(), tol);
    let a2 = vo.transpose() * &a1 * &vo;
    let b2 = vo.transpose() * &b1;
    let c2 = &c1 * &vo;
    StateSpace::new(a2, b2, c2, g.d.clone()).expect("projected dimensions are consistent")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::expm;
    use approx::assert_relative_eq;

    fn first_order(a: f64, c: f64) -> StateSpace {
        // c/(s + a)
        StateSpace::new(
            DMatrix::from_element(1, 1, -a),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, c),
            DMatrix::zeros(1, 1),
        )
        .unwrap()
    }

    #[test]
    fn lyapunov_scalar() {
        // A = −1, Q = 2 → 2W = Q gives W = 1.
        let w = lyapunov_solve(
            &DMatrix::from_element(1, 1, -1.0),
            &DMatrix::from_element(1, 1, 2.0),
        )
        .unwrap();
        assert_relative_eq!(w[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn lyapunov_decoupled_diagonal() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, -2.0]));
        let w = lyapunov_solve(&a, &DMatrix::identity(2, 2)).unwrap();
        assert_relative_eq!(w[(0, 0)], 0.5, epsilon = 1e-12);
        assert_relative_eq!(w[(1, 1)], 0.25, epsilon = 1e-12);
        assert_relative_eq!(w[(0, 1)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn lyapunov_matches_quadrature_oracle() {
        // W = ∫₀^∞ e^{Aᵀt} Q e^{At} dt, truncated where the integrand is
        // negligible, on a fine trapezoid grid.
        let a = DMatrix::from_row_slice(3, 3, &[-1.0, 0.5, 0.0, 0.0, -2.0, 1.0, -0.3, 0.0, -1.5]);
        let c = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 0.0, 1.0, -1.0]);
        let q = c.transpose() * &c;
        let w = lyapunov_solve(&a, &q).unwrap();
        let (t_end, steps) = (30.0, 60_000);
        let dt = t_end / steps as f64;
        let mut acc = DMatrix::zeros(3, 3);
        let step = expm(&(&a * dt));
        let mut e = DMatrix::<f64>::identity(3, 3);
        for k in 0..=steps {
            let term = e.transpose() * &q * &e;
            let weight = if k == 0 || k == steps { 0.5 } else { 1.0 };
            acc += term * (weight * dt);
            e = &e * &step;
        }
        assert_relative_eq!(w, acc, max_relative = 1e-6);
    }

    #[test]
    fn lyapunov_refuses_unstable_a() {
        let err = lyapunov_solve(
            &DMatrix::from_element(1, 1, 0.5),
            &DMatrix::from_element(1, 1, 1.0),
        );
        assert!(matches!(err, Err(Error::NotHurwitz(_))));
    }

    #[test]
    fn h2_of_first_order_lag() {
        // ‖1/(s+1)‖² = (1/2π)∫ dω/(1+ω²) = 1/2.
        let g = first_order(1.0, 1.0);
        assert_relative_eq!(h2_norm_sq(&g).unwrap(), 0.5, epsilon = 1e-12);
        // ‖c/(s+a)‖² = c²/(2a).
        let g = first_order(3.0, 2.0);
        assert_relative_eq!(h2_norm_sq(&g).unwrap(), 4.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn h2_additive_over_diagonal_stack() {
        let g1 = first_order(1.0, 1.0);
        let g2 = first_order(2.0, 3.0);
        let stacked = g1.stack(&g2);
        assert_relative_eq!(
            h2_norm_sq(&stacked).unwrap(),
            h2_norm_sq(&g1).unwrap() + h2_norm_sq(&g2).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn h2_rejects_feedthrough_and_instability() {
        let with_d = StateSpace::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 0.1),
        )
        .unwrap();
        assert!(matches!(h2_norm_sq(&with_d), Err(Error::Structure(_))));
        let unstable = first_order(-0.2, 1.0);
        assert!(matches!(h2_norm_sq(&unstable), Err(Error::NotHurwitz(_))));
    }

    #[test]
    fn conj_transpose_static_is_transpose() {
        let d = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let g = StateSpace::static_gain(d.clone()).conj_transpose();
        assert_eq!(g.d, d.transpose());
    }

    #[test]
    fn conj_transpose_matches_pointwise_adjoint() {
        // For G = 1/(s+1): G~(i)·G(i) = |G(i)|² = 1/2.
        let g = first_order(1.0, 1.0);
        let gt = g.conj_transpose();
        let s = Complex64::new(0.0, 1.0);
        let prod = gt.eval(s)[(0, 0)] * g.eval(s)[(0, 0)];
        assert_relative_eq!(prod.re, 0.5, epsilon = 1e-12);
        assert_relative_eq!(prod.im, 0.0, epsilon = 1e-12);
        // Pointwise adjoint identity on the standard grid.
        for s in standard_frequency_grid() {
            let lhs = gt.eval(s)[(0, 0)];
            let rhs = g.eval(s)[(0, 0)].conj();
            assert_relative_eq!(lhs.re, rhs.re, epsilon = 1e-12);
            assert_relative_eq!(lhs.im, rhs.im, epsilon = 1e-12);
        }
    }

    #[test]
    fn conj_transpose_is_involution() {
        let g = StateSpace::new(
            DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -2.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.5]),
            DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            DMatrix::from_element(1, 1, 0.3),
        )
        .unwrap();
        let gtt = g.conj_transpose().conj_transpose();
        assert!(max_freq_deviation(&g, &gtt, &standard_frequency_grid()) < 1e-12);
    }

    #[test]
    fn series_of_lags_is_squared_lag() {
        let g = first_order(1.0, 1.0);
        let gg = g.series(&g).unwrap();
        for s in standard_frequency_grid() {
            let expect = (Complex64::new(1.0, 0.0) / (s + Complex64::new(1.0, 0.0))).powi(2);
            let got = gg.eval(s)[(0, 0)];
            assert_relative_eq!(got.re, expect.re, epsilon = 1e-10);
            assert_relative_eq!(got.im, expect.im, epsilon = 1e-10);
        }
    }

    #[test]
    fn parallel_with_negation_is_zero() {
        let g = first_order(1.5, 2.0);
        let z = g.parallel(&g.neg()).unwrap();
        assert!(max_freq_deviation(&z, &StateSpace::zero(1, 1), &standard_frequency_grid()) < 1e-12);
    }

    #[test]
    fn lft_lower_static_hand_value() {
        // P = [[0,1],[1,0]] static, K = 2 → F_l = 0 + 1·2·(1 − 0)⁻¹·1 = 2.
        let p = StateSpace::static_gain(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]))
            .with_partitions(vec![1, 1], vec![1, 1])
            .unwrap();
        let k = StateSpace::static_gain(DMatrix::from_element(1, 1, 2.0));
        let cl = lft_lower(&p, &k).unwrap();
        assert_relative_eq!(cl.d[(0, 0)], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn lft_upper_static_hand_value() {
        let p = StateSpace::static_gain(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]))
            .with_partitions(vec![1, 1], vec![1, 1])
            .unwrap();
        let k = StateSpace::static_gain(DMatrix::from_element(1, 1, 3.0));
        let cl = lft_upper(&p, &k).unwrap();
        assert_relative_eq!(cl.d[(0, 0)], 3.0, epsilon = 1e-14);
    }

    #[test]
    fn lft_lower_zero_controller_returns_p11() {
        let p = StateSpace::new(
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.2, 0.0, -2.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 1.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            DMatrix::zeros(2, 2),
        )
        .unwrap()
        .with_partitions(vec![1, 1], vec![1, 1])
        .unwrap();
        let cl = lft_lower(&p, &StateSpace::zero(1, 1)).unwrap();
        let p11 = p.select_outputs(&[0]).select_inputs(&[0]);
        assert!(max_freq_deviation(&cl, &p11, &standard_frequency_grid()) < 1e-12);
    }

    #[test]
    fn lft_lower_without_feedback_is_series_parallel() {
        // P22 = 0 (zero C2 row and zero D22) → F_l(P,K) = P11 + P12·K·P21.
        let p = StateSpace::new(
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 1.0, -3.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        )
        .unwrap()
        .with_partitions(vec![1, 1], vec![1, 1])
        .unwrap();
        let k = first_order(2.0, 1.0);
        let cl = lft_lower(&p, &k).unwrap();
        let p11 = p.select_outputs(&[0]).select_inputs(&[0]);
        let p12 = p.select_outputs(&[0]).select_inputs(&[1]);
        let p21 = p.select_outputs(&[1]).select_inputs(&[0]);
        let composed = p11.parallel(&p12.series(&k).unwrap().series(&p21).unwrap()).unwrap();
        assert!(max_freq_deviation(&cl, &composed, &standard_frequency_grid()) < 1e-10);
    }

    #[test]
    fn lft_inversion_round_trip() {
        // For invertible static J: Q = F_u(J⁻¹, F_l(J, Q)) pointwise.
        let j_mat = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 2.0]);
        let j = StateSpace::static_gain(j_mat.clone())
            .with_partitions(vec![1, 1], vec![1, 1])
            .unwrap();
        let j_inv = StateSpace::static_gain(j_mat.try_inverse().unwrap())
            .with_partitions(vec![1, 1], vec![1, 1])
            .unwrap();
        let q = first_order(1.0, 0.7);
        let k = lft_lower(&j, &q).unwrap();
        let q_back = lft_upper(&j_inv, &k).unwrap();
        assert!(max_freq_deviation(&q, &q_back, &standard_frequency_grid()) < 1e-8);
    }

    #[test]
    fn lft_detects_algebraic_loop() {
        let p = StateSpace::static_gain(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 1.0]))
            .with_partitions(vec![1, 1], vec![1, 1])
            .unwrap();
        let k = StateSpace::static_gain(DMatrix::from_element(1, 1, 1.0));
        assert!(matches!(lft_lower(&p, &k), Err(Error::AlgebraicLoop(_))));
    }

    #[test]
    fn sylvester_matches_lyapunov_special_case() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, 0.0, -2.0]);
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 0.5]);
        let s = sylvester_solve(&a, &a, &q).unwrap();
        let w = lyapunov_solve(&a, &q).unwrap();
        assert_relative_eq!(s, w, max_relative = 1e-10);
    }

    #[test]
    fn sylvester_general_recovers_known_solution() {
        // A has an unstable eigenvalue; only spectral disjointness matters.
        let a = DMatrix::from_row_slice(2, 2, &[1.5, 0.3, -0.2, 0.8]);
        let b = DMatrix::from_row_slice(3, 3, &[-1.0, 0.1, 0.0, 0.0, -2.0, 0.4, 0.2, 0.0, -3.0]);
        let x_true = DMatrix::from_row_slice(2, 3, &[0.7, -0.3, 1.1, 0.2, 0.9, -0.5]);
        let q = &a * &x_true - &x_true * &b;
        let x = sylvester_general(&a, &b, &q).unwrap();
        assert_relative_eq!(x, x_true, max_relative = 1e-9);
    }

    #[test]
    fn sylvester_general_rejects_shared_spectrum() {
        let a = DMatrix::from_element(1, 1, 2.0);
        let b = DMatrix::from_element(1, 1, 2.0);
        let q = DMatrix::from_element(1, 1, 1.0);
        assert!(sylvester_general(&a, &b, &q).is_err());
    }

    #[test]
    fn inverse_feedback_pointwise() {
        let g = StateSpace::new(
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -2.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.3, 1.0]),
            DMatrix::from_row_slice(2, 2, &[0.4, 0.1, -0.2, 0.6]),
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        let inv = inverse_feedback(&g).unwrap();
        for &s in &standard_frequency_grid() {
            let lhs = (DMatrix::<Complex64>::identity(2, 2) - g.eval(s))
                .lu()
                .solve(&DMatrix::identity(2, 2))
                .unwrap();
            let dev = (lhs - inv.eval(s)).iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(dev < 1e-10, "deviation {dev:.3e}");
        }
    }

    #[test]
    fn minimal_realization_drops_hidden_unstable_mode() {
        // Reachable+observable stable mode at −1, plus an unreachable
        // unstable mode at +3 that must disappear from the reduction.
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.2, 0.0, 3.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let g = StateSpace::new(a, b, c, DMatrix::zeros(1, 1)).unwrap();
        let m = minimal_realization(&g, 1e-8);
        assert_eq!(m.nstates(), 1);
        assert!(max_freq_deviation(&g, &m, &standard_frequency_grid()) < 1e-9);
        assert!(m.max_real_pole() < -0.9);
    }

    #[test]
    fn minimal_realization_keeps_minimal_systems() {
        let g = StateSpace::new(
            DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -2.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let m = minimal_realization(&g, 1e-8);
        assert_eq!(m.nstates(), 2);
        assert!(max_freq_deviation(&g, &m, &standard_frequency_grid()) < 1e-9);
    }
}
