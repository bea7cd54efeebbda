//! Time-domain runs of the modal beam model under a state feedback over
//! the first `N_ctrl` modes. Modes above `N_ctrl` see the control only as
//! an input (the spillover path).
//!
//! Classical RK4 with a fixed output step `dt`. Each step is split into
//! equal substeps so that `h·ρ(A−BK) ≤ 2.5`, which keeps the heavily
//! damped high modes inside the RK4 stability region. Running integrals
//! of `zₙ²`, `u²` and `wₙ²` are accumulated with Simpson's rule on each
//! substep, the midpoint state coming from cubic Hermite interpolation, so
//! the costs keep the fourth order of the integrator. Cost weights are
//! applied afterwards.

use std::f64::consts::{FRAC_2_PI, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::beam::{stacked_system, BeamNd};
use crate::error::{Error, Result};
use crate::linalg::{solve_care, spectral_radius, CareProblem, DenseMatrix};
use crate::residue::{gamma_no_control, residue_p_n};
use crate::synthesis::{pad_gain, CostWeights};

/// Largest `h·ρ` allowed for one RK4 substep.
pub const RK4_STABILITY_BUDGET: f64 = 2.5;

/// Scratch space for [`rk4_step`].
#[derive(Debug, Clone)]
pub struct Rk4Workspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Workspace {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }
}

/// One classical Runge–Kutta step of `ẋ = f(t, x)`.
pub fn rk4_step<F>(f: &mut F, t: f64, h: f64, x: &mut [f64], ws: &mut Rk4Workspace)
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = x.len();
    f(t, x, &mut ws.k1);
    for i in 0..n {
        ws.tmp[i] = x[i] + 0.5 * h * ws.k1[i];
    }
    f(t + 0.5 * h, &ws.tmp, &mut ws.k2);
    for i in 0..n {
        ws.tmp[i] = x[i] + 0.5 * h * ws.k2[i];
    }
    f(t + 0.5 * h, &ws.tmp, &mut ws.k3);
    for i in 0..n {
        ws.tmp[i] = x[i] + h * ws.k3[i];
    }
    f(t + h, &ws.tmp, &mut ws.k4);
    for i in 0..n {
        x[i] += h / 6.0 * (ws.k1[i] + 2.0 * ws.k2[i] + 2.0 * ws.k3[i] + ws.k4[i]);
    }
}

/// Number of equal substeps of `dt` keeping `h·radius` within the budget.
pub fn substeps_for(dt: f64, radius: f64) -> usize {
    ((dt * radius / RK4_STABILITY_BUDGET).ceil() as usize).max(1)
}

/// States below this magnitude are set to zero after each output step;
/// decaying high modes otherwise sink into subnormal arithmetic.
const FLUSH_BELOW: f64 = 1e-250;

fn flush_tiny(x: &mut [f64]) {
    for v in x.iter_mut() {
        if v.abs() < FLUSH_BELOW {
            *v = 0.0;
        }
    }
}

/// Modal disturbance `w(t) = (w₁(t), …, w_{N_d}(t))`.
pub trait Disturbance: Sync {
    fn n_modes(&self) -> usize;
    /// Writes `n_modes()` values into `out`.
    fn eval(&self, t: f64, out: &mut [f64]);
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroDisturbance;

impl Disturbance for ZeroDisturbance {
    fn n_modes(&self) -> usize {
        0
    }
    fn eval(&self, _t: f64, _out: &mut [f64]) {}
}

/// Samples of `w` and `ẇ` on a uniform grid, cubic Hermite in between and
/// zero outside the grid.
#[derive(Debug, Clone)]
pub struct ModalSeries {
    pub t0: f64,
    pub dt: f64,
    pub n_modes: usize,
    /// Row-major, one row of `n_modes` values per grid point.
    pub values: Vec<f64>,
    pub derivatives: Vec<f64>,
}

impl ModalSeries {
    pub fn len(&self) -> usize {
        if self.n_modes == 0 {
            0
        } else {
            self.values.len() / self.n_modes
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + self.dt * (self.len().saturating_sub(1)) as f64
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_modes..(i + 1) * self.n_modes]
    }
}

impl Disturbance for ModalSeries {
    fn n_modes(&self) -> usize {
        self.n_modes
    }

    fn eval(&self, t: f64, out: &mut [f64]) {
        let len = self.len();
        let slack = 1e-9 * self.dt;
        if len < 2 || t < self.t0 - slack || t > self.t_end() + slack {
            out[..self.n_modes].fill(0.0);
            return;
        }
        let pos = ((t - self.t0) / self.dt).max(0.0);
        let i = (pos.floor() as usize).min(len - 2);
        let s = (pos - i as f64).clamp(0.0, 1.0);
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let m = self.n_modes;
        let (v0, v1) = (&self.values[i * m..], &self.values[(i + 1) * m..]);
        let (d0, d1) = (&self.derivatives[i * m..], &self.derivatives[(i + 1) * m..]);
        for n in 0..m {
            out[n] = h00 * v0[n] + h10 * self.dt * d0[n] + h01 * v1[n] + h11 * self.dt * d1[n];
        }
    }
}

/// Worst-case disturbance of the uncontrolled `N_d`-mode model.
#[derive(Debug, Clone)]
pub struct WorstCase {
    pub gamma: f64,
    /// Bounded real Riccati solution, `2N_d × 2N_d`.
    pub p: DenseMatrix,
    pub series: ModalSeries,
}

/// Solves `PA + AᵀP + γ⁻²PEEᵀP + CᵀC = 0` for the uncontrolled `N_d`-mode
/// system, integrates `ż_d = (A + γ⁻²EEᵀP) z_d` from `z0` and returns
/// `w = γ⁻²EᵀP z_d` on the grid `0, dt, …, T`.
pub fn worst_case_disturbance(
    nd: &BeamNd,
    n_modes: usize,
    gamma: f64,
    rho_x: f64,
    t_final: f64,
    dt: f64,
    z0: &[f64],
) -> Result<WorstCase> {
    if n_modes == 0 || z0.len() != 2 * n_modes {
        return Err(Error::DimensionMismatch(format!(
            "initial state has {} entries, expected {}",
            z0.len(),
            2 * n_modes
        )));
    }
    check_grid(dt, t_final)?;
    let sys = stacked_system(nd, n_modes);
    let ig2 = 1.0 / (gamma * gamma);
    let mut q = DenseMatrix::zeros(2 * n_modes, 2 * n_modes);
    for (i, mode) in sys.modes.iter().enumerate() {
        q[(i, i)] = mode.position_weight(rho_x);
    }
    let s = -(&sys.e * sys.e.transpose()) * ig2;
    let p = solve_care(&CareProblem::new(sys.a.clone(), s, q)?)?;
    let l = sys.e.transpose() * &p * ig2;
    let f = &sys.a + &sys.e * &l;
    let lf = &l * &f;

    let n_steps = step_count(t_final, dt);
    let m = substeps_for(dt, spectral_radius(&f)?);
    let h = dt / m as f64;
    let dim = 2 * n_modes;
    let mut ws = Rk4Workspace::new(dim);
    let mut x = z0.to_vec();
    let mut values = Vec::with_capacity((n_steps + 1) * n_modes);
    let mut derivatives = Vec::with_capacity((n_steps + 1) * n_modes);
    let fcols = f.as_slice();
    let mut rhs = |_t: f64, x: &[f64], dx: &mut [f64]| {
        dx.fill(0.0);
        for (j, col) in fcols.chunks_exact(dim).enumerate() {
            let xj = x[j];
            for (d, c) in dx.iter_mut().zip(col) {
                *d += c * xj;
            }
        }
    };
    for k in 0..=n_steps {
        for n in 0..n_modes {
            values.push((0..dim).map(|j| l[(n, j)] * x[j]).sum());
            derivatives.push((0..dim).map(|j| lf[(n, j)] * x[j]).sum());
        }
        if k == n_steps {
            break;
        }
        let t = k as f64 * dt;
        for j in 0..m {
            rk4_step(&mut rhs, t + j as f64 * h, h, &mut x, &mut ws);
        }
        flush_tiny(&mut x);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState {
                time: (k + 1) as f64 * dt,
            });
        }
    }
    Ok(WorstCase {
        gamma,
        p,
        series: ModalSeries {
            t0: 0.0,
            dt,
            n_modes,
            values,
            derivatives,
        },
    })
}

/// Smooth, compactly supported, band-limited disturbance
/// `wₙ(t) = s(t)·Σₖ aₙₖ sin(νₙₖ t + φₙₖ)` with the envelope
/// `s(t) = sin²(π(t−t_on)/T_s)` on `[t_on, t_on+T_s]`, scaled to a given
/// L² norm.
#[derive(Debug, Clone)]
pub struct RandomDisturbance {
    pub n_modes: usize,
    pub t_on: f64,
    pub support: f64,
    /// `(mode index from 0, amplitude, frequency, phase)`
    pub components: Vec<(usize, f64, f64, f64)>,
}

impl RandomDisturbance {
    /// Draws a disturbance over modes `1..=n_modes` with `per_mode` sine
    /// components of frequency at most `max_frequency`, supported inside
    /// `[0, horizon]`, with `‖w‖_{L²} = l2_norm`.
    pub fn generate(
        seed: u64,
        n_modes: usize,
        per_mode: usize,
        max_frequency: f64,
        horizon: f64,
        l2_norm: f64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let support = horizon * rng.random_range(0.1..0.5);
        let t_on = rng.random_range(0.0..(horizon - support) * 0.2);
        let mut components = Vec::with_capacity(n_modes * per_mode);
        for n in 0..n_modes {
            for _ in 0..per_mode {
                let amp = rng.random_range(-1.0..1.0) / (n + 1) as f64;
                let freq = rng.random_range(0.0..max_frequency);
                let phase = rng.random_range(0.0..2.0 * PI);
                components.push((n, amp, freq, phase));
            }
        }
        let mut d = Self {
            n_modes,
            t_on,
            support,
            components,
        };
        let norm = d.l2_norm(20_000);
        if norm > 0.0 {
            for c in &mut d.components {
                c.1 *= l2_norm / norm;
            }
        }
        d
    }

    /// Trapezoid estimate of `‖w‖_{L²}` with `samples` intervals.
    pub fn l2_norm(&self, samples: usize) -> f64 {
        let h = self.support / samples as f64;
        let mut buf = vec![0.0; self.n_modes];
        let mut acc = 0.0;
        for i in 0..=samples {
            self.eval(self.t_on + i as f64 * h, &mut buf);
            let e: f64 = buf.iter().map(|v| v * v).sum();
            acc += if i == 0 || i == samples { 0.5 * e } else { e };
        }
        (acc * h).sqrt()
    }
}

impl Disturbance for RandomDisturbance {
    fn n_modes(&self) -> usize {
        self.n_modes
    }

    fn eval(&self, t: f64, out: &mut [f64]) {
        out[..self.n_modes].fill(0.0);
        let s = t - self.t_on;
        if s <= 0.0 || s >= self.support {
            return;
        }
        let env = (PI * s / self.support).sin().powi(2);
        for &(n, a, nu, phi) in &self.components {
            out[n] += env * a * (nu * t + phi).sin();
        }
    }
}

/// How the disturbance of a run is produced.
#[derive(Debug, Clone, PartialEq)]
pub enum DisturbanceSpec {
    Zero,
    /// Worst case of the uncontrolled `n_modes`-mode model. `gamma`
    /// defaults to `1.01·γ₀`, `z0` to all ones.
    WorstCase {
        n_modes: usize,
        gamma: Option<f64>,
        z0: Option<Vec<f64>>,
    },
    Random {
        seed: u64,
        n_modes: usize,
        per_mode: usize,
        max_frequency: f64,
        l2_norm: f64,
    },
}

impl DisturbanceSpec {
    /// Default worst-case setup: 30 modes, all-ones initial state.
    pub fn worst_case_default() -> Self {
        DisturbanceSpec::WorstCase {
            n_modes: 30,
            gamma: None,
            z0: None,
        }
    }

    pub fn build(&self, nd: &BeamNd, cfg: &SimConfig, rho_x: f64) -> Result<Box<dyn Disturbance>> {
        Ok(match self {
            DisturbanceSpec::Zero => Box::new(ZeroDisturbance),
            DisturbanceSpec::WorstCase { n_modes, gamma, z0 } => {
                let gamma = gamma.unwrap_or_else(|| default_disturbance_gamma(nd, rho_x));
                let ones = vec![1.0; 2 * n_modes];
                let z0 = z0.as_deref().unwrap_or(&ones);
                let wc = worst_case_disturbance(nd, *n_modes, gamma, rho_x, cfg.t_final, cfg.dt, z0)?;
                Box::new(wc.series)
            }
            DisturbanceSpec::Random {
                seed,
                n_modes,
                per_mode,
                max_frequency,
                l2_norm,
            } => Box::new(RandomDisturbance::generate(
                *seed,
                *n_modes,
                *per_mode,
                *max_frequency,
                cfg.t_final,
                *l2_norm,
            )),
        })
    }
}

/// `1.01·γ₀`: the uncontrolled model's bounded real equation has no
/// stabilizing solution below its H∞ norm, which equals `γ₀`.
pub fn default_disturbance_gamma(nd: &BeamNd, rho_x: f64) -> f64 {
    1.01 * gamma_no_control(nd, rho_x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_sim: usize,
    pub n_ctrl: usize,
    pub dt: f64,
    pub t_final: f64,
    /// Keep every `record_stride`-th output step (the final step is always
    /// kept). Running integrals are unaffected.
    pub record_stride: usize,
    /// Lower bound on the RK4 substeps per output step, for refinement
    /// studies on a fixed output grid.
    pub min_substeps: usize,
    /// `(z₁..z_{N_sim}, ż₁..ż_{N_sim})`; zero when absent.
    pub initial_state: Option<Vec<f64>>,
    pub disturbance: DisturbanceSpec,
}

impl SimConfig {
    pub fn new(n_sim: usize, n_ctrl: usize) -> Self {
        Self {
            n_sim,
            n_ctrl,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sim == 0 {
            return Err(Error::InvalidParameter {
                name: "N_sim",
                reason: "must be positive".into(),
            });
        }
        if self.n_sim < self.n_ctrl {
            return Err(Error::InvalidParameter {
                name: "N_sim",
                reason: format!("{} is below N_ctrl = {}", self.n_sim, self.n_ctrl),
            });
        }
        if self.record_stride == 0 {
            return Err(Error::InvalidParameter {
                name: "record_stride",
                reason: "must be positive".into(),
            });
        }
        if let Some(x0) = &self.initial_state {
            if x0.len() != 2 * self.n_sim {
                return Err(Error::DimensionMismatch(format!(
                    "initial state has {} entries, expected {}",
                    x0.len(),
                    2 * self.n_sim
                )));
            }
        }
        check_grid(self.dt, self.t_final)
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_sim: 50,
            n_ctrl: 0,
            dt: 1e-3,
            t_final: 100.0,
            record_stride: 1,
            min_substeps: 1,
            initial_state: None,
            disturbance: DisturbanceSpec::Zero,
        }
    }
}

fn check_grid(dt: f64, t_final: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "dt",
            reason: format!("must be positive, got {dt}"),
        });
    }
    if !(t_final > 0.0 && t_final.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "T",
            reason: format!("must be positive, got {t_final}"),
        });
    }
    Ok(())
}

fn step_count(t_final: f64, dt: f64) -> usize {
    (t_final / dt).round().max(1.0) as usize
}

/// Recorded run. Row-major arrays hold one row per recorded time.
#[derive(Debug, Clone)]
pub struct SimTrace {
    pub n_sim: usize,
    pub n_ctrl: usize,
    pub dt: f64,
    pub substeps: usize,
    pub times: Vec<f64>,
    /// `2·n_sim` per row: positions then velocities.
    pub states: Vec<f64>,
    pub u: Vec<f64>,
    /// `n_sim` per row.
    pub w: Vec<f64>,
    /// `∫₀ᵗ zₙ²`, `n_sim` per row.
    pub int_z2: Vec<f64>,
    /// `∫₀ᵗ u²`
    pub int_u2: Vec<f64>,
    /// `∫₀ᵗ wₙ²`, `n_sim` per row.
    pub int_w2: Vec<f64>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * 2 * self.n_sim..(i + 1) * 2 * self.n_sim]
    }

    pub fn positions(&self, i: usize) -> &[f64] {
        &self.state(i)[..self.n_sim]
    }

    pub fn disturbance(&self, i: usize) -> &[f64] {
        &self.w[i * self.n_sim..(i + 1) * self.n_sim]
    }
}

struct Plant {
    omega2: Vec<f64>,
    damping: Vec<f64>,
    b: Vec<f64>,
    k_pos: Vec<f64>,
    k_vel: Vec<f64>,
}

impl Plant {
    fn control(&self, x: &[f64]) -> f64 {
        let n = self.omega2.len();
        let mut u = 0.0;
        for i in 0..self.k_pos.len() {
            u -= self.k_pos[i] * x[i] + self.k_vel[i] * x[n + i];
        }
        u
    }

    fn rhs(&self, x: &[f64], w: &[f64], dx: &mut [f64]) {
        let n = self.omega2.len();
        let u = self.control(x);
        let (z, v) = x.split_at(n);
        let (dz, dv) = dx.split_at_mut(n);
        dz.copy_from_slice(v);
        for i in 0..n {
            dv[i] = -self.omega2[i] * z[i] - self.damping[i] * v[i] + self.b[i] * u + w[i];
        }
    }
}

/// Runs `ż = Az + Bu + Ew` for `cfg.n_sim` modes with `u = −K z^{N_ctrl}`
/// (no control when `gain` is `None`).
pub fn integrate(
    nd: &BeamNd,
    cfg: &SimConfig,
    gain: Option<&DenseMatrix>,
    disturbance: &dyn Disturbance,
) -> Result<SimTrace> {
    cfg.validate()?;
    let ns = cfg.n_sim;
    let (k_pos, k_vel) = match gain {
        Some(k) => {
            if k.nrows() != 1 || k.ncols() != 2 * cfg.n_ctrl {
                return Err(Error::DimensionMismatch(format!(
                    "gain is {}x{}, expected 1x{}",
                    k.nrows(),
                    k.ncols(),
                    2 * cfg.n_ctrl
                )));
            }
            let nc = cfg.n_ctrl;
            ((0..nc).map(|i| k[(0, i)]).collect(), (0..nc).map(|i| k[(0, nc + i)]).collect())
        }
        None => (Vec::new(), Vec::new()),
    };
    let sys = stacked_system(nd, ns);
    let closed = match gain {
        Some(k) => &sys.a - &sys.b * pad_gain(k, ns),
        None => sys.a.clone(),
    };
    let m = substeps_for(cfg.dt, spectral_radius(&closed)?).max(cfg.min_substeps);
    let h = cfg.dt / m as f64;
    let plant = Plant {
        omega2: sys.modes.iter().map(|md| md.omega * md.omega).collect(),
        damping: sys.modes.iter().map(|md| 2.0 * md.zeta * md.omega).collect(),
        b: sys.modes.iter().map(|md| md.b).collect(),
        k_pos,
        k_vel,
    };

    let nd_modes = disturbance.n_modes();
    let mut wbuf = vec![0.0; nd_modes.max(ns)];
    let mut eval_w = |t: f64, out: &mut [f64]| {
        if nd_modes == 0 {
            out.fill(0.0);
            return;
        }
        disturbance.eval(t, &mut wbuf[..nd_modes]);
        let k = nd_modes.min(ns);
        out[..k].copy_from_slice(&wbuf[..k]);
        out[k..].fill(0.0);
    };

    let n_steps = step_count(cfg.t_final, cfg.dt);
    let n_rec = n_steps / cfg.record_stride + 2;
    let mut trace = SimTrace {
        n_sim: ns,
        n_ctrl: cfg.n_ctrl,
        dt: cfg.dt,
        substeps: m,
        times: Vec::with_capacity(n_rec),
        states: Vec::with_capacity(n_rec * 2 * ns),
        u: Vec::with_capacity(n_rec),
        w: Vec::with_capacity(n_rec * ns),
        int_z2: Vec::with_capacity(n_rec * ns),
        int_u2: Vec::with_capacity(n_rec),
        int_w2: Vec::with_capacity(n_rec * ns),
    };

    let mut x = cfg.initial_state.clone().unwrap_or_else(|| vec![0.0; 2 * ns]);
    let mut w_now = vec![0.0; ns];
    let mut w_next = vec![0.0; ns];
    let mut w_stage = vec![0.0; ns];
    eval_w(0.0, &mut w_now);
    let mut u_now = plant.control(&x);
    let mut x_prev = vec![0.0; 2 * ns];
    let mut dx_prev = vec![0.0; 2 * ns];
    let mut dx_next = vec![0.0; 2 * ns];
    let mut x_mid = vec![0.0; 2 * ns];
    let mut w_mid = vec![0.0; ns];
    plant.rhs(&x, &w_now, &mut dx_prev);
    let mut iz = vec![0.0; ns];
    let mut iw = vec![0.0; ns];
    let mut iu = 0.0;
    let mut ws = Rk4Workspace::new(2 * ns);

    for k in 0..=n_steps {
        let t = k as f64 * cfg.dt;
        if k % cfg.record_stride == 0 || k == n_steps {
            trace.times.push(t);
            trace.states.extend_from_slice(&x);
            trace.u.push(u_now);
            trace.w.extend_from_slice(&w_now);
            trace.int_z2.extend_from_slice(&iz);
            trace.int_u2.push(iu);
            trace.int_w2.extend_from_slice(&iw);
        }
        if k == n_steps {
            break;
        }
        for j in 0..m {
            let ts = t + j as f64 * h;
            x_prev.copy_from_slice(&x);
            let mut rhs = |tt: f64, xx: &[f64], dx: &mut [f64]| {
                eval_w(tt, &mut w_stage);
                plant.rhs(xx, &w_stage, dx);
            };
            rk4_step(&mut rhs, ts, h, &mut x, &mut ws);
            let t_next = if j + 1 == m { (k + 1) as f64 * cfg.dt } else { ts + h };
            eval_w(t_next, &mut w_next);
            eval_w(ts + 0.5 * h, &mut w_mid);
            plant.rhs(&x, &w_next, &mut dx_next);
            for i in 0..2 * ns {
                x_mid[i] = 0.5 * (x_prev[i] + x[i]) + 0.125 * h * (dx_prev[i] - dx_next[i]);
            }
            let u_mid = plant.control(&x_mid);
            let u_next = plant.control(&x);
            let s = h / 6.0;
            iu += s * (u_now * u_now + 4.0 * u_mid * u_mid + u_next * u_next);
            for i in 0..ns {
                iz[i] += s * (x_prev[i] * x_prev[i] + 4.0 * x_mid[i] * x_mid[i] + x[i] * x[i]);
                iw[i] += s * (w_now[i] * w_now[i] + 4.0 * w_mid[i] * w_mid[i] + w_next[i] * w_next[i]);
            }
            u_now = u_next;
            std::mem::swap(&mut w_now, &mut w_next);
            std::mem::swap(&mut dx_prev, &mut dx_next);
        }
        flush_tiny(&mut x);
        flush_tiny(&mut dx_prev);
        flush_tiny(&mut w_now);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState {
                time: (k + 1) as f64 * cfg.dt,
            });
        }
    }
    Ok(trace)
}

/// Cost traces derived from a [`SimTrace`].
#[derive(Debug, Clone)]
pub struct CostTraces {
    pub times: Vec<f64>,
    /// `(N, J_N(t))` for each requested N.
    pub partial: Vec<(usize, Vec<f64>)>,
    /// `J(t) = J_{N_sim}(t)`
    pub total: Vec<f64>,
    /// `‖z(·,t)‖_J = √(Σₙ(1+ρₓωₙ²)zₙ²)`
    pub norm_j: Vec<f64>,
}

impl CostTraces {
    pub fn partial_for(&self, n: usize) -> Option<&[f64]> {
        self.partial.iter().find(|(m, _)| *m == n).map(|(_, v)| v.as_slice())
    }
}

/// `J_N(t) = ∫₀ᵗ Σ_{n≤N} [(1+ρₓωₙ²)zₙ² − γ²wₙ²] + ρᵤu²` for each N in
/// `n_list` (values above `N_sim` are clamped), plus `J = J_{N_sim}` and
/// `‖z‖_J`.
pub fn cost_traces(trace: &SimTrace, w: &CostWeights, n_list: &[usize]) -> CostTraces {
    let ns = trace.n_sim;
    let q: Vec<f64> = (1..=ns)
        .map(|n| 1.0 + w.rho_x * ((n * n) as f64).powi(2))
        .collect();
    let g2 = w.gamma * w.gamma;
    let j_upto = |i: usize, upto: usize| -> f64 {
        let iz = &trace.int_z2[i * ns..(i + 1) * ns];
        let iw = &trace.int_w2[i * ns..(i + 1) * ns];
        let modal: f64 = (0..upto).map(|n| q[n] * iz[n] - g2 * iw[n]).sum();
        modal + w.rho_u * trace.int_u2[i]
    };
    let partial = n_list
        .iter()
        .map(|&n| {
            let n = n.min(ns);
            (n, (0..trace.len()).map(|i| j_upto(i, n)).collect())
        })
        .collect();
    let total = (0..trace.len()).map(|i| j_upto(i, ns)).collect();
    let norm_j = (0..trace.len())
        .map(|i| {
            let z = trace.positions(i);
            (0..ns).map(|n| q[n] * z[n] * z[n]).sum::<f64>().sqrt()
        })
        .collect();
    CostTraces {
        times: trace.times.clone(),
        partial,
        total,
        norm_j,
    }
}

/// `V = (z^N)ᵀ P z^N + Σ_{n=N+1}^{N_sim} z̄ₙᵀ Pₙ z̄ₙ` where `P` is the
/// design's 2N×2N Riccati solution and `Pₙ` the residue solutions.
pub fn lyapunov_trace(nd: &BeamNd, trace: &SimTrace, p: &DenseMatrix, rho_x: f64) -> Result<Vec<f64>> {
    let ns = trace.n_sim;
    let n = p.nrows() / 2;
    if p.ncols() != p.nrows() || p.nrows() % 2 != 0 || n > ns {
        return Err(Error::DimensionMismatch(format!(
            "P is {}x{}, trace has {ns} modes",
            p.nrows(),
            p.ncols()
        )));
    }
    let residue: Vec<_> = ((n + 1)..=ns)
        .map(|m| residue_p_n(nd, m, rho_x))
        .collect::<Result<_>>()?;
    let mut xn = vec![0.0; 2 * n];
    Ok((0..trace.len())
        .map(|i| {
            let x = trace.state(i);
            xn[..n].copy_from_slice(&x[..n]);
            xn[n..].copy_from_slice(&x[ns..ns + n]);
            let mut v = 0.0;
            for r in 0..2 * n {
                let row: f64 = (0..2 * n).map(|c| p[(r, c)] * xn[c]).sum();
                v += xn[r] * row;
            }
            for (j, pm) in residue.iter().enumerate() {
                let (z, dz) = (x[n + j], x[ns + n + j]);
                v += pm[(0, 0)] * z * z + 2.0 * pm[(0, 1)] * z * dz + pm[(1, 1)] * dz * dz;
            }
            v
        })
        .collect())
}

/// Largest increase of `s` over any earlier value, `max_{t>s} [f(t) − f(s)]`,
/// floored at zero.
pub fn max_increase(values: &[f64]) -> f64 {
    let mut low = f64::INFINITY;
    let mut worst = 0.0_f64;
    for &v in values {
        low = low.min(v);
        worst = worst.max(v - low);
    }
    worst
}

/// Start of the final positive stretch: the smallest t with `f > 0` on all
/// later samples (linearly interpolated), or `None` if `f` ends `≤ 0`.
pub fn positive_onset(times: &[f64], values: &[f64]) -> Option<f64> {
    let last = *values.last()?;
    if !(last > 0.0) {
        return None;
    }
    match values.iter().rposition(|&v| v <= 0.0) {
        None => Some(times[0]),
        Some(i) => {
            let (t0, t1, v0, v1) = (times[i], times[i + 1], values[i], values[i + 1]);
            Some(t0 + (t1 - t0) * (-v0) / (v1 - v0))
        }
    }
}

/// `z(x,t) = Σₙ zₙ(t)·√(2/π)·sin(nx)` on `x_grid`, one row per recorded
/// time. Points at 0 and π are exactly zero.
pub fn reconstruct_field(trace: &SimTrace, x_grid: &[f64]) -> Result<DenseMatrix> {
    if let Some(&bad) = x_grid.iter().find(|&&x| !(0.0..=PI).contains(&x)) {
        return Err(Error::InvalidParameter {
            name: "x_grid",
            reason: format!("{bad} is outside [0, pi]"),
        });
    }
    let ns = trace.n_sim;
    let norm = FRAC_2_PI.sqrt();
    let basis: Vec<Vec<f64>> = x_grid
        .iter()
        .map(|&x| {
            if x == 0.0 || x == PI {
                vec![0.0; ns]
            } else {
                (1..=ns).map(|n| norm * (n as f64 * x).sin()).collect()
            }
        })
        .collect();
    let mut out = DenseMatrix::zeros(trace.len(), x_grid.len());
    for i in 0..trace.len() {
        let z = trace.positions(i);
        for (j, phi) in basis.iter().enumerate() {
            out[(i, j)] = z.iter().zip(phi).map(|(a, b)| a * b).sum();
        }
    }
    Ok(out)
}

/// Uniform grid of `points` values on `[0, π]`.
pub fn uniform_x_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points)
            .map(|i| if i + 1 == points { PI } else { PI * i as f64 / (points - 1) as f64 })
            .collect(),
    }
}

/// Mode shapes are unit-norm, so this equals `‖z(·,t)‖_{L²}` for the
/// simulated modes.
pub fn modal_l2_norm(trace: &SimTrace, i: usize) -> f64 {
    trace.positions(i).iter().map(|z| z * z).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beam::nondimensionalize;
    use crate::beam::BeamPhysical;

    fn reference() -> BeamNd {
        nondimensionalize(&BeamPhysical::aluminum_reference()).unwrap()
    }

    fn oscillator_error(omega: f64, steps: usize) -> (f64, f64) {
        let period = 2.0 * PI / omega;
        let h = period / steps as f64;
        let mut x = vec![1.0, 0.0];
        let mut ws = Rk4Workspace::new(2);
        let mut f = |_t: f64, x: &[f64], dx: &mut [f64]| {
            dx[0] = x[1];
            dx[1] = -omega * omega * x[0];
        };
        let energy = |x: &[f64]| 0.5 * (x[1] * x[1] + omega * omega * x[0] * x[0]);
        let e0 = energy(&x);
        let mut drift = 0.0_f64;
        for k in 0..steps {
            rk4_step(&mut f, k as f64 * h, h, &mut x, &mut ws);
            drift = drift.max((energy(&x) - e0).abs() / e0);
        }
        ((x[0] - 1.0).hypot(x[1]), drift)
    }

    #[test]
    fn rk4_is_fourth_order_on_the_oscillator() {
        let (e1, d1) = oscillator_error(3.0, 100);
        let (e2, d2) = oscillator_error(3.0, 200);
        let order = (e1 / e2).log2();
        assert!((order - 4.0).abs() < 0.2, "order {order}");
        assert!(d1 < 1e-5 && d2 < d1 / 15.0);
    }

    #[test]
    fn substep_rule() {
        assert_eq!(substeps_for(1e-3, 100.0), 1);
        assert_eq!(substeps_for(1e-3, 8400.0), 4);
        assert_eq!(substeps_for(1e-3, 0.0), 1);
    }

    #[test]
    fn hermite_series_is_exact_for_cubics() {
        let f = |t: f64| 1.0 - 2.0 * t + 0.5 * t * t - 0.1 * t * t * t;
        let df = |t: f64| -2.0 + t - 0.3 * t * t;
        let dt = 0.25;
        let grid: Vec<f64> = (0..9).map(|i| i as f64 * dt).collect();
        let series = ModalSeries {
            t0: 0.0,
            dt,
            n_modes: 1,
            values: grid.iter().map(|&t| f(t)).collect(),
            derivatives: grid.iter().map(|&t| df(t)).collect(),
        };
        let mut out = [0.0];
        for t in [0.0, 0.1, 0.6, 1.33, 2.0] {
            series.eval(t, &mut out);
            assert!((out[0] - f(t)).abs() < 1e-13, "t={t}");
        }
        series.eval(2.5, &mut out);
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn unforced_run_is_zero() {
        let nd = reference();
        let cfg = SimConfig {
            t_final: 1.0,
            ..SimConfig::new(10, 0)
        };
        let tr = integrate(&nd, &cfg, None, &ZeroDisturbance).unwrap();
        assert_eq!(tr.len(), 1001);
        assert!(tr.states.iter().all(|&v| v == 0.0));
        let c = cost_traces(&tr, &CostWeights::new(0.1, 1e-3, 5.0).unwrap(), &[3]);
        assert!(c.total.iter().chain(&c.norm_j).all(|&v| v == 0.0));
        assert!(c.partial_for(3).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn record_stride_keeps_endpoints() {
        let nd = reference();
        let cfg = SimConfig {
            t_final: 1.0,
            record_stride: 300,
            ..SimConfig::new(4, 0)
        };
        let tr = integrate(&nd, &cfg, None, &ZeroDisturbance).unwrap();
        assert_eq!(tr.times.len(), 5);
        assert_eq!(tr.times[0], 0.0);
        assert!((tr.times[4] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::new(5, 8).validate().is_err());
        assert!(SimConfig { dt: 0.0, ..SimConfig::new(5, 2) }.validate().is_err());
        assert!(SimConfig { t_final: -1.0, ..SimConfig::new(5, 2) }.validate().is_err());
        assert!(SimConfig {
            initial_state: Some(vec![0.0; 3]),
            ..SimConfig::new(5, 2)
        }
        .validate()
        .is_err());
        let nd = reference();
        let k = DenseMatrix::zeros(1, 6);
        let cfg = SimConfig { t_final: 0.1, ..SimConfig::new(5, 2) };
        assert!(matches!(
            integrate(&nd, &cfg, Some(&k), &ZeroDisturbance),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn single_free_mode_decays_at_its_damping_rate() {
        let nd = reference();
        let mut x0 = vec![0.0; 2];
        x0[0] = 1.0;
        let cfg = SimConfig {
            t_final: 10.0,
            initial_state: Some(x0),
            ..SimConfig::new(1, 0)
        };
        let tr = integrate(&nd, &cfg, None, &ZeroDisturbance).unwrap();
        let mode = crate::beam::mode_coefficients(&nd, 1);
        let wd = mode.omega * (1.0 - mode.zeta * mode.zeta).sqrt();
        let s = mode.zeta * mode.omega;
        let exact = |t: f64| (-s * t).exp() * ((wd * t).cos() + s / wd * (wd * t).sin());
        let i = tr.len() - 1;
        assert!((tr.positions(i)[0] - exact(tr.times[i])).abs() < 1e-10);
    }

    #[test]
    fn worst_case_is_linear_in_the_initial_state() {
        let nd = reference();
        let g = default_disturbance_gamma(&nd, 0.1);
        let zeros = vec![0.0; 8];
        let ones = vec![1.0; 8];
        let threes = vec![3.0; 8];
        let w0 = worst_case_disturbance(&nd, 4, g, 0.1, 1.0, 1e-2, &zeros).unwrap();
        assert!(w0.series.values.iter().all(|&v| v == 0.0));
        let w1 = worst_case_disturbance(&nd, 4, g, 0.1, 1.0, 1e-2, &ones).unwrap();
        let w3 = worst_case_disturbance(&nd, 4, g, 0.1, 1.0, 1e-2, &threes).unwrap();
        for (a, b) in w1.series.values.iter().zip(&w3.series.values) {
            assert!((3.0 * a - b).abs() <= 1e-12 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn worst_case_below_the_uncontrolled_norm_is_infeasible() {
        let nd = reference();
        let g = 0.9 * gamma_no_control(&nd, 0.1);
        let r = worst_case_disturbance(&nd, 4, g, 0.1, 1.0, 1e-2, &[1.0; 8]);
        assert!(matches!(r, Err(Error::NoStabilizingSolution(_))));
    }

    #[test]
    fn random_disturbance_properties() {
        let a = RandomDisturbance::generate(7, 5, 3, 20.0, 100.0, 2.0);
        let b = RandomDisturbance::generate(7, 5, 3, 20.0, 100.0, 2.0);
        let c = RandomDisturbance::generate(8, 5, 3, 20.0, 100.0, 2.0);
        assert_eq!(a.components, b.components);
        assert_ne!(a.components, c.components);
        assert!((a.l2_norm(40_000) - 2.0).abs() < 1e-4);
        let mut out = [1.0; 5];
        a.eval(a.t_on - 1e-6, &mut out);
        assert!(out.iter().all(|&v| v == 0.0));
        a.eval(a.t_on + a.support + 1e-6, &mut out);
        assert!(out.iter().all(|&v| v == 0.0));
        assert!(a.t_on >= 0.0 && a.t_on + a.support <= 100.0);
    }

    #[test]
    fn field_reconstruction() {
        let tr = SimTrace {
            n_sim: 2,
            n_ctrl: 0,
            dt: 1.0,
            substeps: 1,
            times: vec![0.0],
            states: vec![1.0, 0.0, 0.0, 0.0],
            u: vec![0.0],
            w: vec![0.0; 2],
            int_z2: vec![0.0; 2],
            int_u2: vec![0.0],
            int_w2: vec![0.0; 2],
        };
        let grid = uniform_x_grid(7);
        let f = reconstruct_field(&tr, &grid).unwrap();
        assert_eq!(f[(0, 0)], 0.0);
        assert_eq!(f[(0, 6)], 0.0);
        for (j, &x) in grid.iter().enumerate().skip(1).take(5) {
            assert!((f[(0, j)] - FRAC_2_PI.sqrt() * x.sin()).abs() < 1e-15);
        }
        assert!(reconstruct_field(&tr, &[4.0]).is_err());
    }

    #[test]
    fn onset_and_increase_helpers() {
        let t = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(positive_onset(&t, &[0.0, -1.0, -1.0, -0.5, -0.1]), None);
        assert_eq!(positive_onset(&t, &[0.0, -1.0, 1.0, -1.0, 1.0]), Some(3.5));
        assert_eq!(positive_onset(&t, &[1.0, 1.0, 1.0, 1.0, 1.0]), Some(0.0));
        assert_eq!(max_increase(&[0.0, -1.0, -3.0, -2.5, -4.0]), 0.5);
        assert_eq!(max_increase(&[3.0, 2.0, 1.0]), 0.0);
    }
}
