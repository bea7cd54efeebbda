//! H∞ boundary-free control of a damped Euler–Bernoulli beam with a
//! certified bound on spillover from the modes left out of the design.

pub mod beam;
pub mod error;
pub mod linalg;
pub mod residue;
pub mod simulate;
pub mod synthesis;

pub use beam::{
    mode_coefficients, mode_eigenvalues, mode_matrices, nondimensionalize, stacked_system, BeamNd,
    BeamPhysical, ModalSystem, ModeCoefficients,
};
pub use error::{Error, Result};
pub use linalg::{solve_care, solve_care_with, CareOptions, CareProblem, DenseMatrix};
pub use residue::{
    closed_form_p_n, closed_form_p_n_with_root, cutoff_m, gamma_no_control, max_alpha,
    parseval_tail, residue_gamma_threshold, rho_infinity, rho_n, ResidueCertificate, Root,
};
pub use synthesis::{
    build_cost_matrices, gamma_sweep, min_gamma, pad_gain, synthesize, synthesize_with,
    sweep_is_monotone, CostWeights, SweepRow, SynthesisResult,
};
pub use simulate::{
    cost_traces, integrate, lyapunov_trace, reconstruct_field, worst_case_disturbance,
    CostTraces, Disturbance, DisturbanceSpec, ModalSeries, RandomDisturbance, SimConfig, SimTrace,
};
