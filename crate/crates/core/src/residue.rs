//! Residue modes `n > N`: the control input is treated as a disturbance in
//! each of them, and the per-mode bounded real lemma gives the smallest
//! weight `ρₙ` with `∫[(1+ρₓωₙ²)zₙ² − ρₙu² − γ²wₙ²] ≤ 0`. The weights are
//! summed (with a Parseval tail bound) into `ρ∞`, which is then added to
//! the control weight of the finite-dimensional design.
//!
//! Every mode's Riccati equation is 2×2 and has the explicit solution
//! implemented in [`closed_form_p_n`].

use std::f64::consts::SQRT_2;

use nalgebra::Matrix2;

use crate::beam::{mode_coefficients, BeamNd, ModeCoefficients};
use crate::error::{Error, Result};
use crate::linalg::{CareProblem, DenseMatrix};

/// `4ωₙ⁴ζₙ²(1−ζₙ²)` when `2ζₙ² ≤ 1`, otherwise `ωₙ⁴`.
///
/// Mode n's 2×2 Riccati equation is solvable iff `αₙ(1+ρₓωₙ²)` does not
/// exceed this level. At `2ζₙ² = 1` both expressions agree.
pub fn feasibility_level(mode: &ModeCoefficients) -> f64 {
    let w4 = mode.omega.powi(4);
    if 2.0 * mode.zeta * mode.zeta <= 1.0 {
        4.0 * w4 * mode.zeta * mode.zeta * (1.0 - mode.zeta * mode.zeta)
    } else {
        w4
    }
}

/// Largest `αₙ = bₙ²/ρₙ + γ⁻²` for which mode n's Riccati equation has a
/// real solution.
pub fn max_alpha(mode: &ModeCoefficients, rho_x: f64) -> f64 {
    feasibility_level(mode) / mode.position_weight(rho_x)
}

fn inv_gamma_sq(gamma: f64) -> f64 {
    if gamma.is_infinite() {
        0.0
    } else {
        1.0 / (gamma * gamma)
    }
}

/// Smallest `ρₙ` for which mode n satisfies the bounded real lemma with
/// disturbance `(√ρₙ u/γ, wₙ)`. `gamma = f64::INFINITY` is allowed.
pub fn rho_n(nd: &BeamNd, n: usize, gamma: f64, rho_x: f64) -> Result<f64> {
    check_weights(gamma, rho_x)?;
    let mode = mode_coefficients(nd, n);
    let q = mode.position_weight(rho_x);
    let denominator = feasibility_level(&mode) - q * inv_gamma_sq(gamma);
    if !(denominator > 0.0) {
        return Err(Error::GammaTooSmallForMode {
            n,
            gamma,
            denominator,
        });
    }
    Ok(mode.b * mode.b * q / denominator)
}

fn check_weights(gamma: f64, rho_x: f64) -> Result<()> {
    if !(gamma > 0.0) || gamma.is_nan() {
        return Err(Error::InvalidParameter {
            name: "gamma",
            reason: format!("must be positive, got {gamma}"),
        });
    }
    if !(rho_x >= 0.0 && rho_x.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "rho_x",
            reason: format!("must be finite and non-negative, got {rho_x}"),
        });
    }
    Ok(())
}

/// Sign in front of the square root in the `p₃` entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Root {
    /// Smallest solution; the stabilizing one for `αₙ` below its maximum.
    Minus,
    /// The larger root, used in the Lyapunov functional for strongly damped
    /// modes. Its `p₃` tends to `2c₂ρₓ` as n grows.
    Plus,
}

/// Mode n's Riccati equation
/// `PAₙ + AₙᵀP + αₙ P e₂e₂ᵀ P + diag(1+ρₓωₙ², 0) = 0` as a [`CareProblem`].
pub fn mode_care_problem(nd: &BeamNd, n: usize, alpha: f64, rho_x: f64) -> CareProblem {
    let mode = mode_coefficients(nd, n);
    let w2 = mode.omega * mode.omega;
    let a = DenseMatrix::from_row_slice(2, 2, &[0.0, 1.0, -w2, -2.0 * mode.zeta * mode.omega]);
    let s = DenseMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -alpha]);
    let q = DenseMatrix::from_row_slice(2, 2, &[mode.position_weight(rho_x), 0.0, 0.0, 0.0]);
    CareProblem::new(a, s, q).expect("mode problem is well formed")
}

/// Explicit solution of mode n's Riccati equation, `p₂` taken with "−"
/// and `p₃` with the sign of `root`.
pub fn closed_form_p_n_with_root(
    nd: &BeamNd,
    n: usize,
    alpha: f64,
    rho_x: f64,
    root: Root,
) -> Result<Matrix2<f64>> {
    let mode = mode_coefficients(nd, n);
    let w = mode.omega;
    let z = mode.zeta;
    let q = mode.position_weight(rho_x);
    let infeasible = || Error::InfeasibleAlpha {
        n,
        alpha,
        max: max_alpha(&mode, rho_x),
    };
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(infeasible());
    }
    let w4 = w.powi(4);
    let disc2 = w4 - alpha * q;
    if disc2 < -1e-10 * w4 {
        return Err(infeasible());
    }
    let sq2 = disc2.max(0.0).sqrt();
    // (ω² − √d)/α rewritten without cancellation
    let p2 = q / (w * w + sq2);
    let disc3 = 4.0 * z * z * w * w - 2.0 * alpha * p2;
    if disc3 < -1e-10 * (4.0 * z * z * w * w) {
        return Err(infeasible());
    }
    let sq3 = disc3.max(0.0).sqrt();
    let p3 = match root {
        Root::Minus => 2.0 * p2 / (2.0 * z * w + sq3),
        Root::Plus => (2.0 * z * w + sq3) / alpha,
    };
    let p1 = 2.0 * z * w * p2 + p3 * w * w - alpha * p2 * p3;
    Ok(Matrix2::new(p1, p2, p2, p3))
}

/// Explicit solution used by the Lyapunov functional ("+" root for
/// strongly damped modes; at the maximal `αₙ` of a lightly damped mode the
/// two roots coincide).
pub fn closed_form_p_n(nd: &BeamNd, n: usize, alpha: f64, rho_x: f64) -> Result<Matrix2<f64>> {
    closed_form_p_n_with_root(nd, n, alpha, rho_x, Root::Plus)
}

/// `Pₙ` at the maximal `αₙ`, i.e. for `ρₙ` as returned by [`rho_n`].
pub fn residue_p_n(nd: &BeamNd, n: usize, rho_x: f64) -> Result<Matrix2<f64>> {
    let mode = mode_coefficients(nd, n);
    closed_form_p_n(nd, n, max_alpha(&mode, rho_x), rho_x)
}

/// `M = max{N, ⌊√((1+√(1−2c₁c₂))/(√2 c₂))⌋}`; every mode above `M` has
/// `2ζₙ² > 1`.
pub fn cutoff_m(nd: &BeamNd, n_modes: usize) -> usize {
    let inner = (1.0 + (1.0 - 2.0 * nd.c1 * nd.c2).sqrt()) / (SQRT_2 * nd.c2);
    n_modes.max(inner.sqrt().floor() as usize)
}

/// `|x_R − x_L| − Σ_{n=1}^{M} bₙ²/ωₙ²`, clamped at zero.
pub fn parseval_tail(nd: &BeamNd, m: usize) -> f64 {
    let partial: f64 = (1..=m)
        .map(|n| {
            let mode = mode_coefficients(nd, n);
            (mode.b / mode.omega).powi(2)
        })
        .sum();
    (nd.actuator_width() - partial).max(0.0)
}

/// `γ₀ = 2√(1+ρₓ)/((c₁+c₂)√(4−(c₁+c₂)²))`, a certified L² gain of the
/// beam without control.
pub fn gamma_no_control(nd: &BeamNd, rho_x: f64) -> f64 {
    let s = nd.c1 + nd.c2;
    2.0 * (1.0 + rho_x).sqrt() / (s * (4.0 - s * s).sqrt())
}

/// Smallest γ for which every residue denominator in [`rho_infinity`]
/// (modes `N+1..=M` and the tail constant at `M+1`) is positive.
/// `rho_infinity` succeeds for every γ strictly above this value.
pub fn residue_gamma_threshold(nd: &BeamNd, n_modes: usize, rho_x: f64) -> f64 {
    let m = cutoff_m(nd, n_modes);
    let mut worst = 0.0_f64;
    for n in (n_modes + 1)..=m {
        let mode = mode_coefficients(nd, n);
        worst = worst.max((mode.position_weight(rho_x) / feasibility_level(&mode)).sqrt());
    }
    let tail = mode_coefficients(nd, m + 1);
    worst.max((tail.position_weight(rho_x) / tail.omega.powi(4)).sqrt())
}

/// Certified bound `ρ∞ ≥ Σ_{n>N} ρₙ` together with its ingredients.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidueCertificate {
    pub n_modes: usize,
    pub gamma: f64,
    pub rho_x: f64,
    /// Cutoff index `M`.
    pub cutoff: usize,
    /// `C_M`
    pub tail_constant: f64,
    /// `|x_R − x_L| − Σ_{n≤M} bₙ²/ωₙ²`
    pub parseval_tail: f64,
    /// `(n, ρₙ)` for `n = N+1..=M`.
    pub rho_n: Vec<(usize, f64)>,
    pub rho_infinity: f64,
}

impl ResidueCertificate {
    /// `Pₙ` used for residue mode n in the Lyapunov functional.
    pub fn p_n(&self, nd: &BeamNd, n: usize) -> Result<Matrix2<f64>> {
        residue_p_n(nd, n, self.rho_x)
    }
}

/// `ρ∞ = Σ_{n=N+1}^{M} ρₙ + C_M·[|x_R−x_L| − Σ_{n=1}^{M} bₙ²/ωₙ²]`.
pub fn rho_infinity(nd: &BeamNd, n_modes: usize, gamma: f64, rho_x: f64) -> Result<ResidueCertificate> {
    check_weights(gamma, rho_x)?;
    let cutoff = cutoff_m(nd, n_modes);
    let mut rho = Vec::with_capacity(cutoff.saturating_sub(n_modes));
    for n in (n_modes + 1)..=cutoff {
        match rho_n(nd, n, gamma, rho_x) {
            Ok(r) => rho.push((n, r)),
            Err(Error::GammaTooSmallForMode { n, gamma, .. }) => {
                return Err(Error::GammaTooSmallForResidue { n, gamma })
            }
            Err(e) => return Err(e),
        }
    }
    let next = mode_coefficients(nd, cutoff + 1);
    let q = next.position_weight(rho_x);
    let denominator = next.omega.powi(4) - q * inv_gamma_sq(gamma);
    if !(denominator > 0.0) {
        return Err(Error::GammaTooSmallForResidue {
            n: cutoff + 1,
            gamma,
        });
    }
    let tail_constant = next.omega * next.omega * q / denominator;
    let tail = parseval_tail(nd, cutoff);
    let sum: f64 = rho.iter().map(|&(_, r)| r).sum();
    Ok(ResidueCertificate {
        n_modes,
        gamma,
        rho_x,
        cutoff,
        tail_constant,
        parseval_tail: tail,
        rho_n: rho,
        rho_infinity: sum + tail_constant * tail,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beam::{nondimensionalize, BeamPhysical};

    fn reference() -> BeamNd {
        nondimensionalize(&BeamPhysical::aluminum_reference()).unwrap()
    }

    #[test]
    fn infinite_gamma_limit() {
        let nd = reference();
        for n in [33, 40, 70] {
            let mode = mode_coefficients(&nd, n);
            assert!(mode.is_strongly_damped());
            let q = mode.position_weight(0.1);
            let expected = mode.b * mode.b * q / mode.omega.powi(4);
            let got = rho_n(&nd, n, f64::INFINITY, 0.1).unwrap();
            assert!((got - expected).abs() <= 1e-15 * expected.max(1e-300));
        }
    }

    #[test]
    fn unactuated_mode_has_zero_weight() {
        // xL = π/4, xR = 3π/4 ⇒ cos(2xR) = cos(2xL) ⇒ b₂ = 0
        let nd = BeamNd::new(1e-3, 1e-3, std::f64::consts::FRAC_PI_4, 3.0 * std::f64::consts::FRAC_PI_4).unwrap();
        assert!(mode_coefficients(&nd, 2).b.abs() < 1e-15);
        let r2 = rho_n(&nd, 2, 50.0, 0.1).unwrap();
        let r3 = rho_n(&nd, 3, 50.0, 0.1).unwrap();
        assert!(r2 < 1e-20 * r3);
    }

    #[test]
    fn too_small_gamma_is_reported_per_mode() {
        let nd = reference();
        match rho_n(&nd, 9, 1e-3, 0.1) {
            Err(Error::GammaTooSmallForMode { n, .. }) => assert_eq!(n, 9),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cutoff_values() {
        let nd = reference();
        assert_eq!(cutoff_m(&nd, 8), 32);
        assert_eq!(cutoff_m(&nd, 40), 40);
        let m = cutoff_m(&nd, 1);
        let zm = mode_coefficients(&nd, m).zeta;
        let zn = mode_coefficients(&nd, m + 1).zeta;
        assert!(zm * zm <= 0.5 && zn * zn > 0.5);
    }

    #[test]
    fn closed_forms_at_maximal_alpha() {
        let nd = reference();
        let rho_x = 0.1;
        // lightly damped branch
        let m9 = mode_coefficients(&nd, 9);
        let a9 = max_alpha(&m9, rho_x);
        let p9 = closed_form_p_n(&nd, 9, a9, rho_x).unwrap();
        let (w, z) = (m9.omega, m9.zeta);
        let k = 2.0 * z * w / a9;
        let expect = Matrix2::new(k * w * w, k * z * w, k * z * w, k);
        assert!((p9 - expect).abs().max() <= 1e-8 * expect.abs().max());
        // strongly damped branch, "+" root
        let m40 = mode_coefficients(&nd, 40);
        let a40 = max_alpha(&m40, rho_x);
        let p40 = closed_form_p_n(&nd, 40, a40, rho_x).unwrap();
        let (w, z) = (m40.omega, m40.zeta);
        let k = w / a40;
        let expect = Matrix2::new(
            k * 2.0 * z * w * w,
            k * w,
            k * w,
            k * (2.0 * z + (4.0 * z * z - 2.0).sqrt()),
        );
        for i in 0..2 {
            for j in 0..2 {
                assert!((p40[(i, j)] - expect[(i, j)]).abs() <= 1e-10 * expect[(i, j)].abs());
            }
        }
    }

    #[test]
    fn closed_form_rejects_alpha_above_max() {
        let nd = reference();
        let m = mode_coefficients(&nd, 12);
        let a = max_alpha(&m, 0.1) * 1.01;
        assert!(matches!(
            closed_form_p_n(&nd, 12, a, 0.1),
            Err(Error::InfeasibleAlpha { n: 12, .. })
        ));
    }

    #[test]
    fn closed_form_residual_is_small() {
        let nd = reference();
        for n in [1, 2, 9, 31, 32, 33, 50, 100] {
            let m = mode_coefficients(&nd, n);
            for frac in [1.0, 0.999, 0.5] {
                let a = max_alpha(&m, 0.1) * frac;
                for root in [Root::Minus, Root::Plus] {
                    let p = closed_form_p_n_with_root(&nd, n, a, 0.1, root).unwrap();
                    let pd = DenseMatrix::from_row_slice(2, 2, &[p[(0, 0)], p[(0, 1)], p[(1, 0)], p[(1, 1)]]);
                    let res = mode_care_problem(&nd, n, a, 0.1).residual(&pd);
                    let pmax = p.abs().max();
                    // entries of order ωₙ⁴·p are cancelled, so scale by them too
                    let scale = (1.0 + pmax * pmax).max(m.omega.powi(2) * pmax);
                    assert!(
                        crate::linalg::max_abs(&res) <= 1e-10 * scale,
                        "n={n} frac={frac} {root:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn gamma0_boundary_value() {
        let s = SQRT_2;
        let nd = BeamNd::new(s / 2.0, s / 2.0, 0.5, 1.0).unwrap();
        assert!((gamma_no_control(&nd, 0.0) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn parseval_tail_basics() {
        let nd = BeamNd::new(1.4e-3, 1.3e-3, 0.91, 0.97).unwrap();
        assert!((parseval_tail(&nd, 0) - 0.06).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for m in [1, 2, 5, 10, 100, 1000] {
            let t = parseval_tail(&nd, m);
            assert!(t <= prev && t >= 0.0);
            prev = t;
        }
    }

    #[test]
    fn threshold_separates_feasibility() {
        let nd = reference();
        for n_modes in [1, 5, 8, 20] {
            let g = residue_gamma_threshold(&nd, n_modes, 0.1);
            assert!(rho_infinity(&nd, n_modes, g * (1.0 + 1e-9), 0.1).is_ok());
            assert!(matches!(
                rho_infinity(&nd, n_modes, g * (1.0 - 1e-9), 0.1),
                Err(Error::GammaTooSmallForResidue { .. })
            ));
        }
    }
}
