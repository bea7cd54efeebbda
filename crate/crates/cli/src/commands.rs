use spillfree_core::linalg::{min_symmetric_eigenvalue, spectral_abscissa};
use spillfree_core::simulate::{max_increase, positive_onset, uniform_x_grid};
use spillfree_core::*;

use crate::config::{DisturbanceKind, GammaSpec, RunConfig};
use crate::output::{num, Bundle, Csv};
use crate::{CliError, Command};

pub fn run(cmd: Command, cfg: &RunConfig, bundle: &mut Bundle) -> Result<(), CliError> {
    let nd = cfg.beam.resolve()?;
    bundle.note(format!("command: {}", cmd.name()));
    bundle.note(format!(
        "beam (nondimensional): c1 = {}, c2 = {}, xL = {}, xR = {}",
        num(nd.c1),
        num(nd.c2),
        num(nd.x_left),
        num(nd.x_right)
    ));
    match cmd {
        Command::Synth => synth(cfg, &nd, bundle),
        Command::Sweep => sweep(cfg, &nd, bundle),
        Command::Residue => residue(cfg, &nd, bundle),
        Command::Sim => sim(cfg, &nd, bundle),
    }
}

fn design(cfg: &RunConfig, nd: &BeamNd, n_modes: usize) -> Result<SynthesisResult, CliError> {
    let d = &cfg.design;
    match d.gamma {
        GammaSpec::Min => Ok(min_gamma(nd, n_modes, cfg.rho_x, cfg.rho_u, d.spillover_aware, d.tol)?.1),
        GammaSpec::Fixed(g) => {
            let w = CostWeights::new(cfg.rho_x, cfg.rho_u, g)?;
            Ok(synthesize(nd, n_modes, &w, d.spillover_aware)?)
        }
        GammaSpec::NoControl => Err(CliError::Config(
            "design.gamma = \"no-control\" only applies to the residue command".into(),
        )),
    }
}

fn matrix_csv(prefix: &str, m: &DenseMatrix) -> String {
    let header: Vec<String> = (1..=m.ncols()).map(|j| format!("{prefix}{j}")).collect();
    let mut csv = Csv::new(&header);
    for i in 0..m.nrows() {
        csv.row((0..m.ncols()).map(|j| num(m[(i, j)])));
    }
    csv.into_string()
}

fn synth(cfg: &RunConfig, nd: &BeamNd, bundle: &mut Bundle) -> Result<(), CliError> {
    let n = cfg.design.n_modes;
    let r = design(cfg, nd, n)?;

    // gain columns: position gains for modes 1..N, then velocity gains
    let mut header: Vec<String> = (1..=n).map(|j| format!("k_z{j}")).collect();
    header.extend((1..=n).map(|j| format!("k_v{j}")));
    let mut gain = Csv::new(&header);
    gain.row((0..2 * n).map(|j| num(r.k[(0, j)])));
    bundle.write("gain.csv", &gain.into_string())?;
    bundle.write("riccati.csv", &matrix_csv("p", &r.p))?;

    let sys = stacked_system(nd, n);
    let abscissa = spectral_abscissa(&r.closed_loop(&sys))?;
    bundle.note(format!("N = {n}, spillover_aware = {}", r.spillover_aware));
    bundle.note(format!("gamma = {}", num(r.gamma)));
    bundle.note(format!("rho_infinity = {}", num(r.rho_infinity)));
    if let Some(c) = &r.certificate {
        bundle.note(format!("cutoff M = {}, C_M = {}", c.cutoff, num(c.tail_constant)));
    }
    bundle.note(format!("gain size = 1x{}", r.k.ncols()));
    bundle.note(format!("closed-loop spectral abscissa = {}", num(abscissa)));
    bundle.note(format!("min eigenvalue of P = {}", num(min_symmetric_eigenvalue(&r.p)?)));
    Ok(())
}

fn sweep(cfg: &RunConfig, nd: &BeamNd, bundle: &mut Bundle) -> Result<(), CliError> {
    let (lo, hi) = (cfg.sweep_min, cfg.sweep_max);
    if lo == 0 || lo > hi {
        return Err(CliError::Config(format!(
            "sweep range N_min = {lo} .. N_max = {hi} is empty (need 1 <= N_min <= N_max)"
        )));
    }
    let d = &cfg.design;
    let rows = gamma_sweep(nd, lo..=hi, cfg.rho_x, cfg.rho_u, d.spillover_aware, d.tol)?;
    let mut csv = Csv::new(&["N", "gamma_min", "rho_infinity"]);
    let mut failures = Vec::new();
    for row in &rows {
        match &row.outcome {
            Ok((g, r)) => csv.row([row.n_modes.to_string(), num(*g), num(r.rho_infinity)]),
            Err(e) => {
                csv.row([row.n_modes.to_string(), num(f64::NAN), num(f64::NAN)]);
                failures.push(format!("N = {}: {}: {e}", row.n_modes, e.name()));
            }
        }
    }
    bundle.write("sweep.csv", &csv.into_string())?;
    let monotone = sweep_is_monotone(&rows, d.tol);
    bundle.note(format!("N = {lo}..{hi}, spillover_aware = {}", d.spillover_aware));
    bundle.note(format!("monotone = {monotone}"));
    if let Some(g) = rows.last().and_then(|r| r.gamma_min()) {
        bundle.note(format!("gamma_min(N = {hi}) = {}", num(g)));
    }
    for f in &failures {
        bundle.note(format!("failed row {f}"));
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Infeasible(format!("{} sweep rows failed", failures.len())))
    }
}

fn residue(cfg: &RunConfig, nd: &BeamNd, bundle: &mut Bundle) -> Result<(), CliError> {
    let g0 = gamma_no_control(nd, cfg.rho_x);
    let gamma = match cfg.design.gamma {
        GammaSpec::Fixed(g) => g,
        GammaSpec::NoControl => g0,
        GammaSpec::Min => {
            return Err(CliError::Config(
                "residue needs design.gamma set to a number or \"no-control\"".into(),
            ))
        }
    };
    let cert = rho_infinity(nd, cfg.design.n_modes, gamma, cfg.rho_x)?;
    let mut csv = Csv::new(&["n", "zeta_n", "b_n", "rho_n"]);
    for &(n, rho) in &cert.rho_n {
        let m = mode_coefficients(nd, n);
        csv.row([n.to_string(), num(m.zeta), num(m.b), num(rho)]);
    }
    bundle.write("residue.csv", &csv.into_string())?;
    bundle.note(format!("N = {}, gamma = {}", cert.n_modes, num(gamma)));
    bundle.note(format!("gamma0 = {}", num(g0)));
    bundle.note(format!("cutoff M = {}", cert.cutoff));
    bundle.note(format!("C_M = {}", num(cert.tail_constant)));
    bundle.note(format!("parseval tail = {}", num(cert.parseval_tail)));
    bundle.note(format!("rho_infinity = {}", num(cert.rho_infinity)));
    Ok(())
}

fn sim(cfg: &RunConfig, nd: &BeamNd, bundle: &mut Bundle) -> Result<(), CliError> {
    let s = &cfg.sim;
    let disturbance = match s.disturbance {
        DisturbanceKind::Zero => DisturbanceSpec::Zero,
        DisturbanceKind::WorstCase => DisturbanceSpec::WorstCase {
            n_modes: s.disturbance_modes,
            gamma: s.disturbance_gamma,
            z0: None,
        },
        DisturbanceKind::Random => DisturbanceSpec::Random {
            seed: s.seed,
            n_modes: s.disturbance_modes,
            per_mode: s.per_mode,
            max_frequency: s.max_frequency,
            l2_norm: s.l2_norm,
        },
    };
    let sim_cfg = SimConfig {
        dt: s.dt,
        t_final: s.t_final,
        record_stride: s.output_stride,
        disturbance,
        ..SimConfig::new(s.n_sim, s.n_ctrl)
    };
    sim_cfg.validate()?;

    let controller = if s.n_ctrl > 0 { Some(design(cfg, nd, s.n_ctrl)?) } else { None };
    let cost_gamma = match (s.cost_gamma, &controller) {
        (Some(g), _) => g,
        (None, Some(r)) => r.gamma,
        (None, None) => {
            return Err(CliError::Config(
                "uncontrolled run (sim.N_ctrl = 0) needs sim.cost_gamma".into(),
            ))
        }
    };
    let weights = CostWeights::new(cfg.rho_x, cfg.rho_u, cost_gamma)?;

    let dist = sim_cfg.disturbance.build(nd, &sim_cfg, cfg.rho_x)?;
    let trace = integrate(nd, &sim_cfg, controller.as_ref().map(|r| &r.k), dist.as_ref())?;
    let costs = cost_traces(&trace, &weights, &s.cost_modes);
    let p = controller.as_ref().map_or_else(|| DenseMatrix::zeros(0, 0), |r| r.p.clone());
    let v = lyapunov_trace(nd, &trace, &p, cfg.rho_x)?;

    let ns = trace.n_sim;
    let mut header = vec!["t".to_string()];
    header.extend((1..=ns).map(|n| format!("z{n}")));
    header.push("u".into());
    header.extend((1..=ns).map(|n| format!("w{n}")));
    let mut csv = Csv::new(&header);
    for i in 0..trace.len() {
        let mut row = vec![num(trace.times[i])];
        row.extend(trace.positions(i).iter().map(|&x| num(x)));
        row.push(num(trace.u[i]));
        row.extend(trace.disturbance(i).iter().map(|&x| num(x)));
        csv.row(row);
    }
    bundle.write("trace.csv", &csv.into_string())?;

    let mut header = vec!["t".to_string()];
    header.extend(costs.partial.iter().map(|(n, _)| format!("J_{n}")));
    header.extend(["J".into(), "norm_J".into(), "V".into()]);
    let mut csv = Csv::new(&header);
    for i in 0..costs.times.len() {
        let mut row = vec![num(costs.times[i])];
        row.extend(costs.partial.iter().map(|(_, j)| num(j[i])));
        row.extend([num(costs.total[i]), num(costs.norm_j[i]), num(v[i])]);
        csv.row(row);
    }
    bundle.write("costs.csv", &csv.into_string())?;

    let grid = uniform_x_grid(s.field_points);
    let field = reconstruct_field(&trace, &grid)?;
    let mut header = vec!["t".to_string()];
    header.extend(grid.iter().map(|&x| format!("x={}", num(x))));
    let mut csv = Csv::new(&header);
    for i in 0..trace.len() {
        let mut row = vec![num(trace.times[i])];
        row.extend((0..grid.len()).map(|j| num(field[(i, j)])));
        csv.row(row);
    }
    bundle.write("field.csv", &csv.into_string())?;

    let final_j = *costs.total.last().unwrap();
    match &controller {
        Some(r) => bundle.note(format!(
            "controller: N = {}, spillover_aware = {}, gamma = {}, rho_infinity = {}",
            r.n_modes,
            r.spillover_aware,
            num(r.gamma),
            num(r.rho_infinity)
        )),
        None => bundle.note("controller: none"),
    }
    bundle.note(format!(
        "N_sim = {ns}, dt = {}, t_final = {}, RK4 substeps per step = {}",
        num(s.dt),
        num(s.t_final),
        trace.substeps
    ));
    bundle.note(format!("cost gamma = {}", num(cost_gamma)));
    bundle.note(format!(
        "final J = {} ({})",
        num(final_j),
        if final_j <= 0.0 { "J <= 0" } else { "J > 0" }
    ));
    let onset = |values: &[f64]| positive_onset(&costs.times, values).map_or("never".into(), num);
    bundle.note(format!("J > 0 from t = {}", onset(&costs.total)));
    for (n, j) in &costs.partial {
        bundle.note(format!("J_{n} > 0 from t = {}", onset(j)));
    }
    let vj: Vec<f64> = v.iter().zip(&costs.total).map(|(a, b)| a + b).collect();
    let scale = vj.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    bundle.note(format!(
        "max increase of V + J = {} (max |V + J| = {})",
        num(max_increase(&vj)),
        num(scale)
    ));
    Ok(())
}
