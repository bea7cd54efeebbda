use spillfree_core::simulate::{max_increase, modal_l2_norm, uniform_x_grid, ZeroDisturbance};
use spillfree_core::*;

fn reference() -> BeamNd {
    nondimensionalize(&BeamPhysical::aluminum_reference()).unwrap()
}

fn aware_design(nd: &BeamNd) -> SynthesisResult {
    min_gamma(nd, 8, 0.1, 1e-3, true, 1e-3).unwrap().1
}

#[test]
fn truncation_from_fifty_to_eighty_modes() {
    let nd = reference();
    let design = aware_design(&nd);
    let base = SimConfig {
        record_stride: 10,
        disturbance: DisturbanceSpec::worst_case_default(),
        ..SimConfig::new(50, 8)
    };
    let dist = base.disturbance.build(&nd, &base, 0.1).unwrap();
    let run = |n_sim: usize| {
        let cfg = SimConfig { n_sim, ..base.clone() };
        integrate(&nd, &cfg, Some(&design.k), dist.as_ref()).unwrap()
    };
    let (t50, t80) = (run(50), run(80));
    let max_abs = |v: &[f64]| v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let max_diff = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));

    // without the bending weight the added modes change nothing visible
    let w0 = CostWeights { rho_x: 0.0, ..design.weights };
    let (a, b) = (cost_traces(&t50, &w0, &[]).total, cost_traces(&t80, &w0, &[]).total);
    assert!(max_diff(&a, &b) < 1e-4 * max_abs(&b));

    // the bending term of the added modes is quasi-static, zₙ ≈ bₙu/ωₙ²,
    // so it adds ρₓ·Σ bₙ²/ωₙ²·∫u², a Parseval tail that decays like 1/N
    let w = design.weights;
    let (j50, j80) = (cost_traces(&t50, &w, &[]).total, cost_traces(&t80, &w, &[]).total);
    let tail: f64 = (51..=80)
        .map(|n| {
            let m = mode_coefficients(&nd, n);
            (m.b / m.omega).powi(2)
        })
        .sum();
    let predicted = w.rho_x * tail * t80.int_u2.last().unwrap();
    let observed = j80.last().unwrap() - j50.last().unwrap();
    assert!((observed / predicted - 1.0).abs() < 0.01, "{observed:e} vs {predicted:e}");
    assert!(j80.iter().all(|&j| j <= 0.0));
}

#[test]
fn closed_loop_is_internally_stable() {
    let nd = reference();
    let design = aware_design(&nd);
    let mut x0 = vec![0.0; 60];
    for (i, v) in x0.iter_mut().enumerate() {
        *v = 1.0 / (1 + i % 30) as f64;
    }
    let cfg = SimConfig {
        t_final: 20.0,
        record_stride: 10,
        initial_state: Some(x0),
        ..SimConfig::new(30, 8)
    };
    let tr = integrate(&nd, &cfg, Some(&design.k), &ZeroDisturbance).unwrap();
    let v = lyapunov_trace(&nd, &tr, &design.p, 0.1).unwrap();
    assert!(v.iter().all(|&x| x >= 0.0));
    assert!(max_increase(&v) <= 1e-9 * v[0], "{:e}", max_increase(&v));
    assert!(v.last().unwrap() < &(0.5 * v[0]));
}

#[test]
fn random_disturbance_respects_the_dissipation_inequality() {
    let nd = reference();
    let design = aware_design(&nd);
    let cfg = SimConfig {
        t_final: 40.0,
        record_stride: 5,
        disturbance: DisturbanceSpec::Random {
            seed: 11,
            n_modes: 20,
            per_mode: 3,
            max_frequency: 20.0,
            l2_norm: 1.0,
        },
        ..SimConfig::new(40, 8)
    };
    let dist = cfg.disturbance.build(&nd, &cfg, 0.1).unwrap();
    let tr = integrate(&nd, &cfg, Some(&design.k), dist.as_ref()).unwrap();
    let c = cost_traces(&tr, &design.weights, &[8]);
    let v = lyapunov_trace(&nd, &tr, &design.p, 0.1).unwrap();
    let vj: Vec<f64> = v.iter().zip(&c.total).map(|(a, b)| a + b).collect();
    let scale = vj.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    assert!(max_increase(&vj) <= 1e-6 * scale);
    assert!(c.total.iter().all(|&j| j <= 0.0));
}

#[test]
fn control_reduces_the_deflection() {
    let nd = reference();
    let design = aware_design(&nd);
    let cfg = SimConfig {
        t_final: 30.0,
        record_stride: 100,
        disturbance: DisturbanceSpec::worst_case_default(),
        ..SimConfig::new(50, 8)
    };
    let dist = cfg.disturbance.build(&nd, &cfg, 0.1).unwrap();
    let with = integrate(&nd, &cfg, Some(&design.k), dist.as_ref()).unwrap();
    let without = integrate(&nd, &cfg, None, dist.as_ref()).unwrap();
    let grid = uniform_x_grid(33);
    let fw = reconstruct_field(&with, &grid).unwrap();
    let fo = reconstruct_field(&without, &grid).unwrap();
    assert!(fw.column(0).iter().chain(fw.column(32).iter()).all(|&v| v == 0.0));
    assert!(fw.abs().max() < 0.5 * fo.abs().max());
    let peak = |tr: &SimTrace| (0..tr.len()).map(|i| modal_l2_norm(tr, i)).fold(0.0, f64::max);
    assert!(peak(&with) < peak(&without));
}
