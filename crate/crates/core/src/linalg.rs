//! Dense real linear algebra for the small (at most a few hundred rows)
//! matrices that appear in the modal design problems.
//!
//! The central routine is [`solve_care`], which returns the stabilizing
//! solution of
//!
//! ```text
//! P A + Aᵀ P − P S P + Q = 0
//! ```
//!
//! for symmetric, possibly indefinite `S`. This covers both the H∞ state
//! feedback equation (`S = B R⁻¹ Bᵀ − γ⁻² E Eᵀ`) and the bounded real
//! lemma (`S = −γ⁻² E Eᵀ`).

use nalgebra::linalg::balancing::balance_parlett_reinsch;
use nalgebra::{DMatrix, Schur, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type DenseMatrix = DMatrix<f64>;

const SCHUR_MAX_ITER: usize = 100_000;

pub fn max_abs(m: &DenseMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn check_finite(m: &DenseMatrix, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteInput(what))
    }
}

/// Largest entry of `|M − Mᵀ|`.
pub fn asymmetry(m: &DenseMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Symmetry test used for every symmetric-flagged matrix in the crate.
pub fn is_symmetric(m: &DenseMatrix) -> bool {
    m.is_square() && asymmetry(m) <= 1e-12 * (1.0 + max_abs(m))
}

pub fn symmetrize(m: &DenseMatrix) -> DenseMatrix {
    (m + m.transpose()) * 0.5
}

/// A continuous algebraic Riccati problem `P A + Aᵀ P − P S P + Q = 0`.
#[derive(Debug, Clone)]
pub struct CareProblem {
    pub a: DenseMatrix,
    pub s: DenseMatrix,
    pub q: DenseMatrix,
}

impl CareProblem {
    pub fn new(a: DenseMatrix, s: DenseMatrix, q: DenseMatrix) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "state matrix must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        for (m, name) in [(&s, "S"), (&q, "Q")] {
            if m.shape() != (n, n) {
                return Err(Error::DimensionMismatch(format!(
                    "{name} is {}x{}, expected {n}x{n}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        check_finite(&a, "A")?;
        check_finite(&s, "S")?;
        check_finite(&q, "Q")?;
        for m in [&s, &q] {
            if !is_symmetric(m) {
                return Err(Error::NonSymmetricInput {
                    asymmetry: asymmetry(m),
                });
            }
        }
        Ok(Self { a, s, q })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// The 2n×2n Hamiltonian `[[A, −S], [−Q, −Aᵀ]]`.
    pub fn hamiltonian(&self) -> DenseMatrix {
        let n = self.dim();
        let mut h = DenseMatrix::zeros(2 * n, 2 * n);
        h.view_mut((0, 0), (n, n)).copy_from(&self.a);
        h.view_mut((0, n), (n, n)).copy_from(&(-&self.s));
        h.view_mut((n, 0), (n, n)).copy_from(&(-&self.q));
        h.view_mut((n, n), (n, n)).copy_from(&(-self.a.transpose()));
        h
    }

    /// `P A + Aᵀ P − P S P + Q`.
    pub fn residual(&self, p: &DenseMatrix) -> DenseMatrix {
        let pa = p * &self.a;
        &pa + pa.transpose() - p * &self.s * p + &self.q
    }

    /// `A − S P`, the closed-loop matrix associated with a solution.
    pub fn closed_loop(&self, p: &DenseMatrix) -> DenseMatrix {
        &self.a - &self.s * p
    }
}

/// Tolerances for [`solve_care_with`].
#[derive(Debug, Clone, Copy)]
pub struct CareOptions {
    /// Hamiltonian eigenvalues with `|Re λ| ≤ axis_margin·max(1, |λ|)` are
    /// treated as lying on the imaginary axis.
    pub axis_margin: f64,
    /// Accept when `|res|_max ≤ residual_tol·(1 + |P|_max²)`.
    pub residual_tol: f64,
    /// Upper bound on Newton refinement steps after the subspace solve.
    pub refinement_steps: usize,
}

impl Default for CareOptions {
    fn default() -> Self {
        Self {
            axis_margin: 1e-9,
            residual_tol: 1e-8,
            refinement_steps: 3,
        }
    }
}

pub fn solve_care(prob: &CareProblem) -> Result<DenseMatrix> {
    solve_care_with(prob, &CareOptions::default())
}

/// Stabilizing solution of the Riccati equation in `prob`.
///
/// The stable invariant subspace of the Hamiltonian is taken from its
/// matrix sign function, then the solution is polished with Newton steps
/// (each one a Lyapunov solve). The returned matrix is symmetric, meets the
/// residual tolerance and makes `A − S P` Hurwitz; anything else is an
/// error.
pub fn solve_care_with(prob: &CareProblem, opts: &CareOptions) -> Result<DenseMatrix> {
    let n = prob.dim();
    let h = prob.hamiltonian();

    let eig = eigenvalues(&h)?;
    if let Some(lam) = eig
        .iter()
        .find(|l| l.re.abs() <= opts.axis_margin * l.norm().max(1.0))
    {
        return Err(Error::NoStabilizingSolution(format!(
            "Hamiltonian eigenvalue {lam} on the imaginary axis"
        )));
    }

    let sign = matrix_sign(&h)?;
    // (W + I) [I; P] = 0  ⇒  [W12; W22 + I] P = −[W11 + I; W21]
    let mut lhs = DenseMatrix::zeros(2 * n, n);
    let mut rhs = DenseMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n))
        .copy_from(&sign.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n))
        .copy_from(&(sign.view((n, n), (n, n)) + DenseMatrix::identity(n, n)));
    rhs.view_mut((0, 0), (n, n))
        .copy_from(&(-(sign.view((0, 0), (n, n)) + DenseMatrix::identity(n, n))));
    rhs.view_mut((n, 0), (n, n))
        .copy_from(&(-sign.view((n, 0), (n, n))));

    let mut p = least_squares(&lhs, &rhs)
        .ok_or_else(|| Error::NoStabilizingSolution("stable subspace basis is singular".into()))?;
    if !p.iter().all(|v| v.is_finite()) {
        return Err(Error::NoStabilizingSolution(
            "stable subspace basis is singular".into(),
        ));
    }
    p = symmetrize(&p);

    let scaled = |p: &DenseMatrix| {
        let pm = max_abs(p);
        max_abs(&prob.residual(p)) / (1.0 + pm * pm)
    };
    let mut err = scaled(&p);
    for _ in 0..opts.refinement_steps {
        if err <= 1e-3 * opts.residual_tol {
            break;
        }
        let f = prob.closed_loop(&p);
        let res = prob.residual(&p);
        let Ok(x) = solve_lyapunov(&f, &(-res)) else {
            break;
        };
        let cand = symmetrize(&(&p + x));
        let cand_err = scaled(&cand);
        if !(cand_err < err) {
            break;
        }
        p = cand;
        err = cand_err;
    }

    if !(err <= opts.residual_tol) {
        return Err(Error::NoStabilizingSolution(format!(
            "residual {err:e} above tolerance {:e}",
            opts.residual_tol
        )));
    }
    if !is_hurwitz(&prob.closed_loop(&p), 0.0)? {
        return Err(Error::NoStabilizingSolution(
            "closed-loop matrix A - S P is not Hurwitz".into(),
        ));
    }
    Ok(p)
}

/// All eigenvalues of a general square matrix (balanced Francis QR).
pub fn eigenvalues(a: &DenseMatrix) -> Result<Vec<Complex64>> {
    check_finite(a, "matrix")?;
    if !a.is_square() {
        return Err(Error::DimensionMismatch("eigenvalues of a non-square matrix".into()));
    }
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    let mut work = a.clone();
    balance_parlett_reinsch(&mut work);
    let schur = Schur::try_new(work, f64::EPSILON, SCHUR_MAX_ITER).ok_or(Error::NoConvergence)?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Largest real part over the spectrum.
pub fn spectral_abscissa(a: &DenseMatrix) -> Result<f64> {
    Ok(eigenvalues(a)?
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &DenseMatrix) -> Result<f64> {
    Ok(eigenvalues(a)?.iter().map(|l| l.norm()).fold(0.0, f64::max))
}

/// True iff every eigenvalue satisfies `Re λ < −margin`.
pub fn is_hurwitz(a: &DenseMatrix, margin: f64) -> Result<bool> {
    Ok(spectral_abscissa(a)? < -margin)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_symmetric_eigenvalue(m: &DenseMatrix) -> Result<f64> {
    check_finite(m, "matrix")?;
    if !is_symmetric(m) {
        return Err(Error::NonSymmetricInput {
            asymmetry: asymmetry(m),
        });
    }
    let eig = SymmetricEigen::try_new(symmetrize(m), f64::EPSILON, SCHUR_MAX_ITER)
        .ok_or(Error::NoConvergence)?;
    Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

pub fn is_positive_definite(m: &DenseMatrix, tol: f64) -> Result<bool> {
    Ok(min_symmetric_eigenvalue(m)? > tol)
}

/// Sign function of a matrix with no imaginary-axis eigenvalues, by the
/// determinant-scaled Newton iteration `Z ← (cZ + (cZ)⁻¹)/2`.
pub fn matrix_sign(h: &DenseMatrix) -> Result<DenseMatrix> {
    let m = h.nrows();
    let mut z = h.clone();
    let mut scaling = true;
    let mut prev_change = f64::INFINITY;
    for _ in 0..200 {
        let lu = z.clone().lu();
        let c = if scaling {
            let log_det: f64 = lu.u().diagonal().iter().map(|d| d.abs().ln()).sum();
            (-log_det / m as f64).exp()
        } else {
            1.0
        };
        let inv = lu
            .try_inverse()
            .ok_or_else(|| Error::NoStabilizingSolution("singular iterate in sign iteration".into()))?;
        let next = (&z * c + inv / c) * 0.5;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NoStabilizingSolution("sign iteration diverged".into()));
        }
        let change = (&next - &z).abs().sum();
        let size = next.abs().sum();
        z = next;
        if change <= 1e-2 * size {
            // Scaling only speeds up the early phase; once close, plain
            // Newton converges quadratically.
            scaling = false;
        }
        if change <= 1e-13 * size {
            return Ok(z);
        }
        // Close to the imaginary axis the iterates stall at a rounding floor
        // well above 1e-13; stop once quadratic progress has ended.
        if !scaling && change <= 1e-6 * size && change >= 0.5 * prev_change {
            return Ok(z);
        }
        prev_change = change;
    }
    Err(Error::NoConvergence)
}

fn least_squares(a: &DenseMatrix, b: &DenseMatrix) -> Option<DenseMatrix> {
    let n = a.ncols();
    let qr = a.clone().qr();
    let r = qr.r();
    let qtb = qr.q().transpose() * b;
    let rmax = r.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if r.diagonal().iter().any(|d| d.abs() <= 1e-14 * rmax) {
        return None;
    }
    r.solve_upper_triangular(&qtb.rows(0, n).into_owned())
}

/// Solves `Fᵀ X + X F = C` by Bartels–Stewart on the real Schur form of `F`.
///
/// Requires `λᵢ(F) + λⱼ(F) ≠ 0` for all pairs, which holds whenever `F` is
/// Hurwitz.
pub fn solve_lyapunov(f: &DenseMatrix, c: &DenseMatrix) -> Result<DenseMatrix> {
    let n = f.nrows();
    if !f.is_square() || c.shape() != (n, n) {
        return Err(Error::DimensionMismatch("Lyapunov operands".into()));
    }
    check_finite(f, "F")?;
    check_finite(c, "C")?;
    let (u, t) = Schur::try_new(f.clone(), f64::EPSILON, SCHUR_MAX_ITER)
        .ok_or(Error::NoConvergence)?
        .unpack();
    let ct = u.transpose() * c * &u;

    // Diagonal blocks of the quasi-triangular factor: (start, size).
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)] != 0.0 {
            blocks.push((i, 2));
            i += 2;
        } else {
            blocks.push((i, 1));
            i += 1;
        }
    }

    let mut y = DenseMatrix::zeros(n, n);
    for &(jb, js) in &blocks {
        for &(ib, is) in &blocks {
            // rhs = C_ij − Σ_{k<i} T_kiᵀ Y_kj − Σ_{l<j} Y_il T_lj
            let mut rhs = ct.view((ib, jb), (is, js)).into_owned();
            if ib > 0 {
                rhs -= t.view((0, ib), (ib, is)).transpose() * y.view((0, jb), (ib, js));
            }
            if jb > 0 {
                rhs -= y.view((ib, 0), (is, jb)) * t.view((0, jb), (jb, js));
            }
            let tii = t.view((ib, ib), (is, is));
            let tjj = t.view((jb, jb), (js, js));
            // vec(Tiiᵀ Y + Y Tjj) = (I ⊗ Tiiᵀ + Tjjᵀ ⊗ I) vec(Y), column-major vec.
            let dim = is * js;
            let mut k = DenseMatrix::zeros(dim, dim);
            for q in 0..js {
                for p in 0..is {
                    let row = q * is + p;
                    for r in 0..is {
                        k[(row, q * is + r)] += tii[(r, p)];
                    }
                    for s in 0..js {
                        k[(row, s * is + p)] += tjj[(s, q)];
                    }
                }
            }
            let mut vec_rhs = nalgebra::DVector::zeros(dim);
            for q in 0..js {
                for p in 0..is {
                    vec_rhs[q * is + p] = rhs[(p, q)];
                }
            }
            let sol = k.lu().solve(&vec_rhs).ok_or_else(|| {
                Error::NoStabilizingSolution("singular Lyapunov operator".into())
            })?;
            for q in 0..js {
                for p in 0..is {
                    y[(ib + p, jb + q)] = sol[q * is + p];
                }
            }
        }
    }
    Ok(&u * y * u.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> DenseMatrix {
        DenseMatrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn scalar_zero_cost_gives_zero() {
        let prob = CareProblem::new(m(1, 1, &[-1.0]), m(1, 1, &[0.0]), m(1, 1, &[0.0])).unwrap();
        let p = solve_care(&prob).unwrap();
        assert!(p[(0, 0)].abs() < 1e-14);
    }

    #[test]
    fn scalar_quadratic_root() {
        // −2p − p² + 1 = 0, positive root √2 − 1
        let prob = CareProblem::new(m(1, 1, &[-1.0]), m(1, 1, &[1.0]), m(1, 1, &[1.0])).unwrap();
        let p = solve_care(&prob).unwrap();
        assert!((p[(0, 0)] - (2f64.sqrt() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn indefinite_quadratic_term() {
        // Bounded real lemma for ẋ = −x + v, y = x at γ = 2: −2p + p²/4 + 1 = 0.
        let prob = CareProblem::new(m(1, 1, &[-1.0]), m(1, 1, &[-0.25]), m(1, 1, &[1.0])).unwrap();
        let p = solve_care(&prob).unwrap();
        let expected = 4.0 - 2.0 * 3f64.sqrt();
        assert!((p[(0, 0)] - expected).abs() < 1e-12);
    }

    #[test]
    fn gain_below_norm_has_no_solution() {
        // H∞ norm of 1/(s+1) is 1; γ = 0.9 is infeasible.
        let g2 = 1.0 / 0.81;
        let prob = CareProblem::new(m(1, 1, &[-1.0]), m(1, 1, &[-g2]), m(1, 1, &[1.0])).unwrap();
        assert!(matches!(
            solve_care(&prob),
            Err(Error::NoStabilizingSolution(_))
        ));
    }

    #[test]
    fn rejects_nonfinite_and_asymmetric() {
        assert!(matches!(
            CareProblem::new(m(1, 1, &[f64::NAN]), m(1, 1, &[0.0]), m(1, 1, &[0.0])),
            Err(Error::NonFiniteInput(_))
        ));
        assert!(matches!(
            CareProblem::new(
                DenseMatrix::identity(2, 2),
                m(2, 2, &[1.0, 2.0, 0.0, 1.0]),
                DenseMatrix::identity(2, 2)
            ),
            Err(Error::NonSymmetricInput { .. })
        ));
    }

    #[test]
    fn undamped_oscillator_is_not_hurwitz() {
        assert!(!is_hurwitz(&m(2, 2, &[0.0, 1.0, -1.0, 0.0]), 0.0).unwrap());
        assert!(is_hurwitz(&m(1, 1, &[-1.0]), 0.0).unwrap());
        assert!(!is_hurwitz(&m(1, 1, &[-1.0]), 1.0).unwrap());
    }

    #[test]
    fn definiteness() {
        assert!(is_positive_definite(&DenseMatrix::identity(2, 2), 0.0).unwrap());
        assert!(!is_positive_definite(&m(2, 2, &[1.0, 2.0, 2.0, 1.0]), 0.0).unwrap());
        assert!(matches!(
            is_positive_definite(&m(2, 2, &[1.0, 2.0, 0.0, 1.0]), 0.0),
            Err(Error::NonSymmetricInput { .. })
        ));
    }

    #[test]
    fn lyapunov_with_complex_blocks() {
        let f = m(
            3,
            3,
            &[-0.1, 2.0, 0.3, -2.0, -0.2, 0.0, 0.5, 0.1, -3.0],
        );
        let c = m(3, 3, &[1.0, 0.2, 0.0, 0.2, 2.0, 0.1, 0.0, 0.1, 3.0]);
        let x = solve_lyapunov(&f, &c).unwrap();
        let res = f.transpose() * &x + &x * &f - &c;
        assert!(max_abs(&res) < 1e-12);
    }

    #[test]
    fn sign_of_diagonalizable_matrix() {
        let h = m(2, 2, &[-3.0, 1.0, 0.0, 2.0]);
        let s = matrix_sign(&h).unwrap();
        // eigenvalues −3, 2 ⇒ sign has the same eigenvectors with ∓1
        assert!((s.trace()).abs() < 1e-12);
        assert!(max_abs(&(&s * &s - DenseMatrix::identity(2, 2))) < 1e-12);
    }
}
