//! H∞ state-feedback design for the first N modes with the control weight
//! raised from `ρᵤ` to `ρᵤ+ρ∞`, and the search for the smallest γ.

use rayon::prelude::*;

use crate::beam::{stacked_system, BeamNd, ModalSystem};
use crate::error::{Error, Result};
use crate::linalg::{
    is_hurwitz, min_symmetric_eigenvalue, solve_care_with, CareOptions, CareProblem, DenseMatrix,
};
use crate::residue::{gamma_no_control, residue_gamma_threshold, rho_infinity, ResidueCertificate};

/// Weights of `J = ∫ ‖z‖² + ρₓ‖z_xx‖² + ρᵤu² − γ²‖w‖² dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    pub rho_x: f64,
    pub rho_u: f64,
    pub gamma: f64,
}

impl CostWeights {
    pub fn new(rho_x: f64, rho_u: f64, gamma: f64) -> Result<Self> {
        let w = Self { rho_x, rho_u, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho_x >= 0.0 && self.rho_x.is_finite()) {
            return Err(invalid("rho_x", self.rho_x));
        }
        if !(self.rho_u >= 0.0 && self.rho_u.is_finite()) {
            return Err(invalid("rho_u", self.rho_u));
        }
        if !(self.gamma > 0.0) || self.gamma.is_nan() {
            return Err(invalid("gamma", self.gamma));
        }
        Ok(())
    }

    pub fn with_gamma(self, gamma: f64) -> Self {
        Self { gamma, ..self }
    }
}

fn invalid(name: &'static str, value: f64) -> Error {
    Error::InvalidParameter {
        name,
        reason: format!("got {value}"),
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub n_modes: usize,
    /// 2N×2N stabilizing Riccati solution.
    pub p: DenseMatrix,
    /// Feedback `u = −K x`, a 1×2N row.
    pub k: DenseMatrix,
    pub gamma: f64,
    pub weights: CostWeights,
    pub rho_infinity: f64,
    pub spillover_aware: bool,
    /// Present for spillover-aware designs.
    pub certificate: Option<ResidueCertificate>,
}

impl SynthesisResult {
    /// `A − BK` for the design model.
    pub fn closed_loop(&self, sys: &ModalSystem) -> DenseMatrix {
        &sys.a - &sys.b * &self.k
    }

    /// `K` extended by zeros to an `n_total`-mode state.
    pub fn padded_gain(&self, n_total: usize) -> DenseMatrix {
        pad_gain(&self.k, n_total)
    }
}

/// Places a gain for `(z₁..z_N, ż₁..ż_N)` into an `n_total`-mode state
/// with zeros in the extra slots.
pub fn pad_gain(k: &DenseMatrix, n_total: usize) -> DenseMatrix {
    let n = k.ncols() / 2;
    assert!(n_total >= n, "cannot pad {n} modes down to {n_total}");
    let mut out = DenseMatrix::zeros(1, 2 * n_total);
    for i in 0..n {
        out[(0, i)] = k[(0, i)];
        out[(0, n_total + i)] = k[(0, n + i)];
    }
    out
}

/// `C = [[√(I+ρₓΩ²), 0], [0, 0]]` ((N+1)×2N) and `D = [0, …, 0, √(ρᵤ+ρ∞)]ᵀ`.
pub fn build_cost_matrices(
    sys: &ModalSystem,
    w: &CostWeights,
    rho_infinity: f64,
) -> (DenseMatrix, DenseMatrix) {
    let n = sys.n_modes();
    let mut c = DenseMatrix::zeros(n + 1, 2 * n);
    for (i, mode) in sys.modes.iter().enumerate() {
        c[(i, i)] = mode.position_weight(w.rho_x).sqrt();
    }
    let mut d = DenseMatrix::zeros(n + 1, 1);
    d[(n, 0)] = (w.rho_u + rho_infinity).sqrt();
    (c, d)
}

/// Solves the H∞ Riccati equation
/// `PA + AᵀP − P(BR⁻¹Bᵀ − γ⁻²EEᵀ)P + CᵀC = 0` with `R = ρᵤ+ρ∞` and
/// returns `K = R⁻¹BᵀP`.
pub fn synthesize(
    nd: &BeamNd,
    n_modes: usize,
    w: &CostWeights,
    spillover_aware: bool,
) -> Result<SynthesisResult> {
    synthesize_with(nd, n_modes, w, spillover_aware, &CareOptions::default())
}

pub fn synthesize_with(
    nd: &BeamNd,
    n_modes: usize,
    w: &CostWeights,
    spillover_aware: bool,
    opts: &CareOptions,
) -> Result<SynthesisResult> {
    w.validate()?;
    if n_modes == 0 {
        return Err(Error::InvalidParameter {
            name: "N",
            reason: "at least one controlled mode is required".into(),
        });
    }
    let certificate = if spillover_aware {
        match rho_infinity(nd, n_modes, w.gamma, w.rho_x) {
            Ok(c) => Some(c),
            Err(Error::GammaTooSmallForResidue { n, gamma }) => {
                return Err(Error::ResidueInfeasible { n, gamma })
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let rho_inf = certificate.as_ref().map_or(0.0, |c| c.rho_infinity);
    let r = w.rho_u + rho_inf;
    if !(r > 0.0) {
        return Err(Error::InvalidParameter {
            name: "rho_u",
            reason: "rho_u + rho_infinity must be positive".into(),
        });
    }

    let sys = stacked_system(nd, n_modes);
    let (c, _) = build_cost_matrices(&sys, w, rho_inf);
    let s = &sys.b * sys.b.transpose() / r - &sys.e * sys.e.transpose() / (w.gamma * w.gamma);
    let q = c.transpose() * &c;
    let problem = CareProblem::new(sys.a.clone(), s, q)?;
    let p = solve_care_with(&problem, opts)?;
    let min_eig = min_symmetric_eigenvalue(&p)?;
    if !(min_eig > 0.0) {
        return Err(Error::PNotPositiveDefinite {
            min_eigenvalue: min_eig,
        });
    }
    let k = sys.b.transpose() * &p / r;
    if !is_hurwitz(&(&sys.a - &sys.b * &k), opts.axis_margin)? {
        return Err(Error::NoStabilizingSolution(
            "A - BK is not Hurwitz".into(),
        ));
    }
    Ok(SynthesisResult {
        n_modes,
        p,
        k,
        gamma: w.gamma,
        weights: *w,
        rho_infinity: rho_inf,
        spillover_aware,
        certificate,
    })
}

const GAMMA_CEILING: f64 = 1e6;
const GAMMA_FLOOR: f64 = 1e-6;

/// Smallest γ (to relative `tol`) for which [`synthesize`] succeeds.
///
/// The returned design succeeds at `γ_min` and the search has seen a
/// failure at or above `γ_min·(1−tol)`.
pub fn min_gamma(
    nd: &BeamNd,
    n_modes: usize,
    rho_x: f64,
    rho_u: f64,
    spillover_aware: bool,
    tol: f64,
) -> Result<(f64, SynthesisResult)> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::InvalidParameter {
            name: "tol",
            reason: format!("must lie in (0, 1), got {tol}"),
        });
    }
    let base = CostWeights::new(rho_x, rho_u, 1.0)?;
    let attempt = |gamma: f64| -> Result<Option<SynthesisResult>> {
        match synthesize(nd, n_modes, &base.with_gamma(gamma), spillover_aware) {
            Ok(r) => Ok(Some(r)),
            Err(e) if e.is_infeasibility() => Ok(None),
            Err(e) => Err(e),
        }
    };

    let mut hi = gamma_no_control(nd, rho_x);
    let mut best = loop {
        if let Some(r) = attempt(hi)? {
            break r;
        }
        hi *= 2.0;
        if hi > GAMMA_CEILING {
            return Err(Error::BracketingFailed {
                limit: GAMMA_CEILING,
            });
        }
    };

    let mut lo = if spillover_aware {
        residue_gamma_threshold(nd, n_modes, rho_x).min(hi * (1.0 - tol))
    } else {
        (hi * 0.5).min(1.0)
    };
    while let Some(r) = attempt(lo)? {
        hi = lo;
        best = r;
        lo *= 0.5;
        if lo < GAMMA_FLOOR {
            return Ok((hi, best));
        }
    }

    while lo < hi * (1.0 - tol) {
        let mid = (lo * hi).sqrt();
        match attempt(mid)? {
            Some(r) => {
                hi = mid;
                best = r;
            }
            None => lo = mid,
        }
    }
    Ok((hi, best))
}

/// One row of [`gamma_sweep`].
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub n_modes: usize,
    pub outcome: Result<(f64, SynthesisResult)>,
}

impl SweepRow {
    pub fn gamma_min(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|(g, _)| *g)
    }
}

/// [`min_gamma`] for every N in `n_range`, rows computed in parallel.
pub fn gamma_sweep(
    nd: &BeamNd,
    n_range: std::ops::RangeInclusive<usize>,
    rho_x: f64,
    rho_u: f64,
    spillover_aware: bool,
    tol: f64,
) -> Result<Vec<SweepRow>> {
    if n_range.is_empty() {
        return Err(Error::InvalidParameter {
            name: "N_range",
            reason: "range is empty".into(),
        });
    }
    let ns: Vec<usize> = n_range.collect();
    Ok(ns
        .into_par_iter()
        .map(|n| SweepRow {
            n_modes: n,
            outcome: min_gamma(nd, n, rho_x, rho_u, spillover_aware, tol),
        })
        .collect())
}

/// True if `γ_min(N+1) ≤ γ_min(N)·(1+2·tol)` for every consecutive pair of
/// successful rows.
pub fn sweep_is_monotone(rows: &[SweepRow], tol: f64) -> bool {
    rows.windows(2).all(|w| match (w[0].gamma_min(), w[1].gamma_min()) {
        (Some(a), Some(b)) if w[1].n_modes == w[0].n_modes + 1 => b <= a * (1.0 + 2.0 * tol),
        _ => true,
    })
}
