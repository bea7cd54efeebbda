//! Hinged Euler–Bernoulli beam with viscous and Kelvin–Voigt damping and
//! one bending actuator, and its modal state-space form.
//!
//! After scaling space by `a1 = L/π` and time by `a2 = a1²·√(μ/EI)` the
//! beam lives on `[0, π]` and the eigenfunctions are `√(2/π)·sin(n x)`
//! with natural frequencies `ωₙ = n²`.

use std::f64::consts::{FRAC_2_PI, PI, SQRT_2};

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Dimensional beam, actuator and damping parameters (SI units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamPhysical {
    /// m
    pub length: f64,
    /// kg/m
    pub linear_density: f64,
    /// N/m²
    pub youngs_modulus: f64,
    /// m⁴
    pub moment_of_inertia: f64,
    /// kg/(m·s)
    pub viscous_damping: f64,
    /// kg/(m·s)
    pub structural_damping: f64,
    /// m
    pub actuator_left: f64,
    /// m
    pub actuator_right: f64,
}

impl BeamPhysical {
    /// 1 m × 0.1 m × 0.01 m hinged aluminum beam with a 2 cm actuator
    /// starting 29 cm from the left end.
    pub fn aluminum_reference() -> Self {
        Self {
            length: 1.0,
            linear_density: 2.71,
            youngs_modulus: 70e9,
            moment_of_inertia: 8.3e-8,
            viscous_damping: 1.76,
            structural_damping: 2.05e5,
            actuator_left: 0.29,
            actuator_right: 0.31,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("length", self.length),
            ("linear_density", self.linear_density),
            ("youngs_modulus", self.youngs_modulus),
            ("moment_of_inertia", self.moment_of_inertia),
            ("viscous_damping", self.viscous_damping),
            ("structural_damping", self.structural_damping),
            ("actuator_left", self.actuator_left),
            ("actuator_right", self.actuator_right),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be finite and positive, got {v}"),
                });
            }
        }
        if !(self.actuator_left < self.actuator_right && self.actuator_right < self.length) {
            return Err(Error::InvalidParameter {
                name: "actuator_left/actuator_right",
                reason: format!(
                    "need 0 < left < right < length, got {} < {} < {}",
                    self.actuator_left, self.actuator_right, self.length
                ),
            });
        }
        Ok(())
    }
}

/// Nondimensional beam: `z_tt + z_xxxx + c1 z_t + c2 z_xxxxt = [δ'_L − δ'_R] u + w`
/// on `[0, π]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamNd {
    pub c1: f64,
    pub c2: f64,
    pub x_left: f64,
    pub x_right: f64,
    /// Space scale in meters (1 when the beam was specified directly).
    pub a1: f64,
    /// Time scale in seconds (1 when the beam was specified directly).
    pub a2: f64,
}

impl BeamNd {
    pub fn new(c1: f64, c2: f64, x_left: f64, x_right: f64) -> Result<Self> {
        Self::with_scales(c1, c2, x_left, x_right, 1.0, 1.0)
    }

    pub fn with_scales(c1: f64, c2: f64, x_left: f64, x_right: f64, a1: f64, a2: f64) -> Result<Self> {
        for (name, v) in [("c1", c1), ("c2", c2), ("a1", a1), ("a2", a2)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be finite and positive, got {v}"),
                });
            }
        }
        if !(x_left.is_finite() && x_right.is_finite() && 0.0 < x_left && x_left < x_right && x_right < PI)
        {
            return Err(Error::InvalidParameter {
                name: "x_left/x_right",
                reason: format!("need 0 < xL < xR < pi, got xL={x_left}, xR={x_right}"),
            });
        }
        if c1 + c2 > SQRT_2 {
            return Err(Error::ElasticityDominanceViolated { sum: c1 + c2 });
        }
        Ok(Self {
            c1,
            c2,
            x_left,
            x_right,
            a1,
            a2,
        })
    }

    pub fn from_physical(phys: &BeamPhysical) -> Result<Self> {
        nondimensionalize(phys)
    }

    /// Inverse scaling. `E·I` is fixed by `a2`, so the density and the
    /// moment of inertia have to be supplied.
    pub fn to_physical(&self, linear_density: f64, moment_of_inertia: f64) -> BeamPhysical {
        let mu = linear_density;
        let a1 = self.a1;
        let a2 = self.a2;
        let ei = mu * a1.powi(4) / (a2 * a2);
        BeamPhysical {
            length: a1 * PI,
            linear_density: mu,
            youngs_modulus: ei / moment_of_inertia,
            moment_of_inertia,
            viscous_damping: self.c1 * mu / a2,
            structural_damping: self.c2 * mu * a1.powi(4) / (moment_of_inertia * a2),
            actuator_left: self.x_left * a1,
            actuator_right: self.x_right * a1,
        }
    }

    pub fn actuator_width(&self) -> f64 {
        (self.x_right - self.x_left).abs()
    }

    pub fn mode(&self, n: usize) -> ModeCoefficients {
        mode_coefficients(self, n)
    }
}

pub fn nondimensionalize(phys: &BeamPhysical) -> Result<BeamNd> {
    phys.validate()?;
    let a1 = phys.length / PI;
    let ei = phys.youngs_modulus * phys.moment_of_inertia;
    let a2 = a1 * a1 * (phys.linear_density / ei).sqrt();
    let c1 = phys.viscous_damping * a2 / phys.linear_density;
    let c2 = phys.structural_damping * phys.moment_of_inertia * a2 / (phys.linear_density * a1.powi(4));
    BeamNd::with_scales(
        c1,
        c2,
        phys.actuator_left / a1,
        phys.actuator_right / a1,
        a1,
        a2,
    )
}

/// Per-mode scalars of `z̈ₙ + 2ζₙωₙżₙ + ωₙ²zₙ = bₙu + wₙ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeCoefficients {
    pub n: usize,
    pub omega: f64,
    pub zeta: f64,
    pub b: f64,
}

impl ModeCoefficients {
    /// `1 + ρₓωₙ²`, the position weight of mode n in the cost.
    pub fn position_weight(&self, rho_x: f64) -> f64 {
        1.0 + rho_x * self.omega * self.omega
    }

    /// True when `2ζₙ² > 1` (the mode is beyond the cutoff branch).
    pub fn is_strongly_damped(&self) -> bool {
        2.0 * self.zeta * self.zeta > 1.0
    }
}

pub fn mode_coefficients(nd: &BeamNd, n: usize) -> ModeCoefficients {
    assert!(n >= 1, "mode index starts at 1");
    let nf = n as f64;
    let omega = nf * nf;
    let zeta = 0.5 * (nd.c1 / omega + nd.c2 * omega);
    let b = nf * FRAC_2_PI.sqrt() * ((nf * nd.x_right).cos() - (nf * nd.x_left).cos());
    ModeCoefficients { n, omega, zeta, b }
}

/// `(Aₙ, Bₙ, Eₙ)` of `ż̄ₙ = Aₙz̄ₙ + Bₙu + Eₙwₙ` with `z̄ₙ = (zₙ, żₙ)`.
pub fn mode_matrices(nd: &BeamNd, n: usize) -> (Matrix2<f64>, Vector2<f64>, Vector2<f64>) {
    let m = mode_coefficients(nd, n);
    let a = Matrix2::new(0.0, 1.0, -m.omega * m.omega, -2.0 * m.zeta * m.omega);
    (a, Vector2::new(0.0, m.b), Vector2::new(0.0, 1.0))
}

/// `(λₙ⁻, λₙ⁺) = −ωₙ(ζₙ ± √(ζₙ² − 1))`.
pub fn mode_eigenvalues(nd: &BeamNd, n: usize) -> (Complex64, Complex64) {
    let m = mode_coefficients(nd, n);
    let root = Complex64::new(m.zeta * m.zeta - 1.0, 0.0).sqrt();
    let minus = -m.omega * (m.zeta + root);
    // λ⁻·λ⁺ = ωₙ²; dividing avoids cancellation in ζ − √(ζ² − 1).
    let plus = Complex64::new(m.omega * m.omega, 0.0) / minus;
    (minus, plus)
}

/// Modes `1..=N` stacked as `z = (z₁..z_N, ż₁..ż_N)`.
#[derive(Debug, Clone)]
pub struct ModalSystem {
    pub modes: Vec<ModeCoefficients>,
    /// 2N×2N
    pub a: DenseMatrix,
    /// 2N×1
    pub b: DenseMatrix,
    /// 2N×N
    pub e: DenseMatrix,
}

impl ModalSystem {
    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn state_dim(&self) -> usize {
        2 * self.modes.len()
    }
}

pub fn stacked_system(nd: &BeamNd, n_modes: usize) -> ModalSystem {
    assert!(n_modes >= 1, "need at least one mode");
    let modes: Vec<_> = (1..=n_modes).map(|n| mode_coefficients(nd, n)).collect();
    let dim = 2 * n_modes;
    let mut a = DenseMatrix::zeros(dim, dim);
    let mut b = DenseMatrix::zeros(dim, 1);
    let mut e = DenseMatrix::zeros(dim, n_modes);
    for (i, m) in modes.iter().enumerate() {
        let w2 = m.omega * m.omega;
        a[(i, n_modes + i)] = 1.0;
        a[(n_modes + i, i)] = -w2;
        a[(n_modes + i, n_modes + i)] = -(nd.c1 + nd.c2 * w2);
        b[(n_modes + i, 0)] = m.b;
        e[(n_modes + i, i)] = 1.0;
    }
    ModalSystem { modes, a, b, e }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::eigenvalues;

    #[test]
    fn unit_scales() {
        let phys = BeamPhysical {
            length: PI,
            linear_density: 1.0,
            youngs_modulus: 1.0,
            moment_of_inertia: 1.0,
            viscous_damping: 0.1,
            structural_damping: 0.1,
            actuator_left: 1.0,
            actuator_right: 2.0,
        };
        let nd = nondimensionalize(&phys).unwrap();
        assert!((nd.a1 - 1.0).abs() < 1e-15);
        assert!((nd.a2 - 1.0).abs() < 1e-15);
        assert!((nd.c1 - 0.1).abs() < 1e-15);
        assert!((nd.c2 - 0.1).abs() < 1e-15);
    }

    #[test]
    fn aluminum_reference_scaling() {
        let nd = nondimensionalize(&BeamPhysical::aluminum_reference()).unwrap();
        // rounded values: c1 = 1.4e-3, c2 = 1.3e-3, xL = 0.91, xR = 0.97
        assert!((nd.c1 - 1.4e-3).abs() < 0.05e-3);
        assert!((nd.c2 - 1.3e-3).abs() < 0.05e-3);
        assert!((nd.x_left - 0.91).abs() < 0.005);
        assert!((nd.x_right - 0.97).abs() < 0.005);
        // unrounded, from the definitions
        let a1 = 1.0 / std::f64::consts::PI;
        let a2 = a1 * a1 * (2.71_f64 / (70e9 * 8.3e-8)).sqrt();
        assert!((nd.c1 / (1.76 * a2 / 2.71) - 1.0).abs() < 1e-12);
        assert!((nd.c2 / (2.05e5 * 8.3e-8 * a2 / (2.71 * a1.powi(4))) - 1.0).abs() < 1e-12);
        assert!((nd.c1 / 1.42115e-3 - 1.0).abs() < 1e-5);
        assert!((nd.c2 / 1.33832e-3 - 1.0).abs() < 1e-5);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(
            BeamNd::new(1.0, 0.5, 0.9, 1.0),
            Err(Error::ElasticityDominanceViolated { .. })
        ));
        assert!(BeamNd::new(0.0, 1e-3, 0.9, 1.0).is_err());
        assert!(BeamNd::new(1e-3, 0.0, 0.9, 1.0).is_err());
        assert!(BeamNd::new(1e-3, 1e-3, 1.0, 0.9).is_err());
        assert!(BeamNd::new(1e-3, 1e-3, 0.9, 3.2).is_err());
        let mut phys = BeamPhysical::aluminum_reference();
        phys.actuator_right = phys.actuator_left;
        assert!(nondimensionalize(&phys).is_err());
    }

    #[test]
    fn mode_scalars() {
        let nd = BeamNd::new(1.4e-3, 1.3e-3, 0.91, 0.97).unwrap();
        assert_eq!(mode_coefficients(&nd, 3).omega, 9.0);
        let m1 = mode_coefficients(&nd, 1);
        assert!((m1.zeta - 1.35e-3).abs() < 1e-15);
        let b1 = (2.0 / std::f64::consts::PI).sqrt() * (0.97_f64.cos() - 0.91_f64.cos());
        assert!((m1.b - b1).abs() < 1e-15);
        assert!((m1.b + 0.03865).abs() < 1e-5);
        let (a2, _, _) = mode_matrices(&nd, 2);
        assert_eq!(a2[(1, 0)], -16.0);
    }

    #[test]
    fn undamped_stacking_by_hand() {
        // c1 = c2 = 0 is rejected by BeamNd, so build the struct directly.
        let nd = BeamNd {
            c1: 0.0,
            c2: 0.0,
            x_left: 0.91,
            x_right: 0.97,
            a1: 1.0,
            a2: 1.0,
        };
        let sys = stacked_system(&nd, 2);
        let expected = DenseMatrix::from_row_slice(
            4,
            4,
            &[
                0.0, 0.0, 1.0, 0.0, //
                0.0, 0.0, 0.0, 1.0, //
                -1.0, 0.0, 0.0, 0.0, //
                0.0, -16.0, 0.0, 0.0,
            ],
        );
        assert_eq!(sys.a, expected);
        let (a1, _, _) = mode_matrices(&nd, 1);
        assert_eq!(a1, Matrix2::new(0.0, 1.0, -1.0, 0.0));
        let (lm, lp) = mode_eigenvalues(&nd, 1);
        assert!((lm - Complex64::new(0.0, -1.0)).norm() < 1e-15);
        assert!((lp - Complex64::new(0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn single_mode_stack_equals_mode_matrix() {
        let nd = BeamNd::new(1.4e-3, 1.3e-3, 0.91, 0.97).unwrap();
        let sys = stacked_system(&nd, 1);
        let (a1, b1, e1) = mode_matrices(&nd, 1);
        for i in 0..2 {
            for j in 0..2 {
                assert!((sys.a[(i, j)] - a1[(i, j)]).abs() < 1e-15);
            }
            assert_eq!(sys.b[(i, 0)], b1[i]);
            assert_eq!(sys.e[(i, 0)], e1[i]);
        }
    }

    #[test]
    fn eigenvalue_formula_matches_matrix() {
        let nd = BeamNd::new(1.4e-3, 1.3e-3, 0.91, 0.97).unwrap();
        for n in [1, 5, 20, 32, 33, 60] {
            let (a, _, _) = mode_matrices(&nd, n);
            let (lm, lp) = mode_eigenvalues(&nd, n);
            // characteristic polynomial λ² − tr λ + det
            for l in [lm, lp] {
                let val = l * l - l * a.trace() + a.determinant();
                assert!(val.norm() <= 1e-10 * (1.0 + l.norm_sqr()), "n={n}: {val}");
            }
            let num = eigenvalues(&DenseMatrix::from_row_slice(2, 2, a.as_slice()).transpose()).unwrap();
            assert_eq!(num.len(), 2);
        }
    }
}
