use std::f64::consts::PI;

use kdvlab::pde::{
    bc_transfer_check, duality_residual, multiplier_identity_residual, multiplier_identity_sides, observation_trace,
    solve_adjoint, solve_linear_ibvp, solve_nonlinear_ibvp,
};
use kdvlab::{l2_norm, time_l2_norm, BoundarySignals, RunConfig, ScalarField, TimeSignal, TraceKind};

fn gauss(cfg: &RunConfig) -> ScalarField {
    let c = cfg.sgrid.length() / 2.0;
    ScalarField::from_fn(cfg.sgrid, |x| (-20.0 * (x - c).powi(2)).exp())
}

fn pulse(cfg: &RunConfig) -> BoundarySignals {
    BoundarySignals::h2(TimeSignal::from_fn(cfg.tgrid, |t| 0.3 * (PI * t).sin().powi(2)))
}

// L2 distance between a coarse solution and a fine one restricted to the coarse nodes
fn restricted_gap(coarse: &ScalarField, fine: &ScalarField) -> f64 {
    let r = fine.grid().cells() / coarse.grid().cells();
    let sub: Vec<f64> = fine.values().iter().step_by(r).copied().collect();
    let sub = ScalarField::new(*coarse.grid(), sub).unwrap();
    l2_norm(&sub.axpy(-1.0, coarse).unwrap())
}

#[test]
fn zero_data_gives_zero() {
    let cfg = RunConfig::new(0.0, 2.0, 32, 1.0, 100).unwrap();
    let z = ScalarField::zeros(cfg.sgrid);
    let traj = solve_linear_ibvp(&z, &BoundarySignals::zeros(cfg.tgrid), None, &cfg).unwrap();
    assert_eq!(traj.max_abs(), 0.0);
    assert_eq!(solve_adjoint(&z, &cfg).unwrap().max_abs(), 0.0);
    assert_eq!(solve_nonlinear_ibvp(&z, &BoundarySignals::zeros(cfg.tgrid), &cfg).unwrap().trajectory.max_abs(), 0.0);
    assert_eq!(duality_residual(&z, &BoundarySignals::zeros(cfg.tgrid), &z, &cfg).unwrap(), 0.0);
    assert_eq!(multiplier_identity_residual(&z, &cfg).unwrap(), 0.0);
    assert_eq!(bc_transfer_check(&z, &BoundarySignals::zeros(cfg.tgrid), &cfg).unwrap(), 0.0);
    let trace = observation_trace(&solve_adjoint(&z, &cfg).unwrap(), TraceKind::PsiAtL);
    assert!(trace.is_zero());
}

#[test]
fn forward_solver_self_converges() {
    let levels = [(32usize, 125usize), (64, 500), (128, 2000)];
    let ends: Vec<ScalarField> = levels
        .iter()
        .map(|&(n, m)| {
            let cfg = RunConfig::new(0.0, 2.0, n, 1.0, m).unwrap();
            solve_linear_ibvp(&gauss(&cfg), &BoundarySignals::zeros(cfg.tgrid), None, &cfg).unwrap().terminal()
        })
        .collect();
    let d1 = restricted_gap(&ends[0], &ends[1]);
    let d2 = restricted_gap(&ends[1], &ends[2]);
    assert!(d1 / d2 >= 1.5, "{d1:e} -> {d2:e}");
}

#[test]
fn constants_are_steady_for_any_beta() {
    for beta in [-1.0, 0.0, 2.5] {
        let cfg = RunConfig::new(beta, 1.7, 64, 1.0, 400).unwrap();
        let c = ScalarField::constant(cfg.sgrid, 0.42);
        let traj = solve_linear_ibvp(&c, &BoundarySignals::zeros(cfg.tgrid), None, &cfg).unwrap();
        let drift = traj.values().iter().map(|v| (v - 0.42).abs()).fold(0.0, f64::max);
        assert!(drift <= 1e-11, "beta {beta}: {drift:e}");
    }
}

#[test]
fn nonlinear_keeps_the_steady_state() {
    let beta = 0.3;
    let cfg = RunConfig::new(beta, 2.0, 64, 1.0, 500).unwrap();
    let u0 = ScalarField::constant(cfg.sgrid, beta);
    let out = solve_nonlinear_ibvp(&u0, &BoundarySignals::zeros(cfg.tgrid), &cfg).unwrap();
    let drift = out.trajectory.values().iter().map(|v| (v - beta).abs()).fold(0.0, f64::max);
    assert!(drift <= 1e-11, "{drift:e}");
}

#[test]
fn nonlinear_matches_linear_to_second_order() {
    let cfg = RunConfig::default();
    let bump = ScalarField::from_fn(cfg.sgrid, |x| (PI * x / 2.0).sin().powi(2));
    let gap = |eps: f64| {
        let u0 = bump.scaled(eps);
        let z = BoundarySignals::zeros(cfg.tgrid);
        let lin = solve_linear_ibvp(&u0, &z, None, &cfg).unwrap().terminal();
        let nl = solve_nonlinear_ibvp(&u0, &z, &cfg).unwrap().trajectory.terminal();
        l2_norm(&nl.axpy(-1.0, &lin).unwrap())
    };
    let (g6, g5) = (gap(1e-6), gap(1e-5));
    assert!(g6 <= 1e-9, "{g6:e}");
    let ratio = g5 / g6;
    assert!((80.0..=120.0).contains(&ratio), "gap ratio {ratio}");
}

#[test]
fn boundary_residuals_converge() {
    let res = |n: usize| {
        let cfg = RunConfig::new(0.0, 2.0, n, 1.0, 500).unwrap();
        solve_linear_ibvp(&gauss(&cfg), &pulse(&cfg), None, &cfg).unwrap().boundary_residuals()
    };
    let r = [res(64), res(128), res(256)];
    for k in 0..3 {
        assert!(r[0][k] / r[1][k] >= 1.5 && r[1][k] / r[2][k] >= 1.5, "slot {}: {r:?}", k + 1);
    }
}

#[test]
fn adjoint_cos_mode_at_fine_resolution() {
    let cfg = RunConfig::new(0.0, PI, 256, 1.0, 2000).unwrap();
    let cos = ScalarField::from_fn(cfg.sgrid, f64::cos);
    let psi = solve_adjoint(&cos, &cfg).unwrap();
    let dev = (0..cfg.tgrid.len())
        .flat_map(|n| psi.level(n).iter().zip(cos.values()).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    assert!(dev <= 1e-4, "{dev:e}");
    assert!(time_l2_norm(&observation_trace(&psi, TraceKind::PsiXAtL)) <= 1e-4 * l2_norm(&cos));
    let at0 = observation_trace(&psi, TraceKind::PsiAt0);
    assert!(at0.values().iter().all(|v| (v - 1.0).abs() <= 1e-4));
    let (lhs, rhs) = multiplier_identity_sides(&cos, &cfg).unwrap();
    assert!((lhs - PI / 4.0).abs() <= 1e-3 && (rhs - PI / 4.0).abs() <= 1e-3);
}

#[test]
fn constant_is_unobservable_without_advection() {
    for l in [0.7, 3.3] {
        let cfg = RunConfig::new(-1.0, l, 128, 1.0, 1000).unwrap();
        let psi = solve_adjoint(&ScalarField::constant(cfg.sgrid, 1.0), &cfg).unwrap();
        assert!(psi.values().iter().all(|v| (v - 1.0).abs() <= 1e-10));
        assert!(time_l2_norm(&observation_trace(&psi, TraceKind::PsiXAtL)) <= 1e-10);
    }
}

#[test]
fn free_flow_duality_converges() {
    let r: Vec<f64> = [(32usize, 125usize), (64, 500), (128, 2000)]
        .iter()
        .map(|&(n, m)| {
            let cfg = RunConfig::new(0.0, 2.0, n, 1.0, m).unwrap();
            let g = gauss(&cfg);
            duality_residual(&g, &BoundarySignals::zeros(cfg.tgrid), &g, &cfg).unwrap()
        })
        .collect();
    assert!(r[0] / r[1] >= 1.5 && r[1] / r[2] >= 1.5, "{r:?}");
}

#[test]
fn cos_pairing_ignores_the_control() {
    let cfg = RunConfig::new(0.0, PI, 128, 1.0, 2000).unwrap();
    let cos = ScalarField::from_fn(cfg.sgrid, f64::cos);
    for k in 1..=3 {
        let h = TimeSignal::from_fn(cfg.tgrid, |t| (k as f64 * PI * t).sin() + 0.5 * (2.0 * k as f64 * t).sin());
        let u0 = ScalarField::from_fn(cfg.sgrid, |x| (k as f64 * x).cos());
        let scale = l2_norm(&u0) + time_l2_norm(&h);
        let r = duality_residual(&u0, &BoundarySignals::h2(h), &cos, &cfg).unwrap();
        assert!(r <= 1e-3 * scale, "k {k}: {r:e}");
    }
}

#[test]
fn multiplier_identity_converges() {
    let r: Vec<f64> = [(32usize, 125usize), (64, 500), (128, 2000)]
        .iter()
        .map(|&(n, m)| {
            let cfg = RunConfig::new(0.0, 2.0, n, 1.0, m).unwrap();
            multiplier_identity_residual(&gauss(&cfg), &cfg).unwrap()
        })
        .collect();
    assert!(r[0] / r[1] >= 1.5 && r[1] / r[2] >= 1.5, "{r:?}");
}

#[test]
fn trace_transfer() {
    let cfg = RunConfig::new(0.0, 2.0, 64, 1.0, 500).unwrap();
    let c = ScalarField::constant(cfg.sgrid, 0.8);
    assert!(bc_transfer_check(&c, &BoundarySignals::zeros(cfg.tgrid), &cfg).unwrap() <= cfg.sgrid.dx());
    let r: Vec<f64> = [(32usize, 125usize), (64, 500), (128, 2000)]
        .iter()
        .map(|&(n, m)| {
            let cfg = RunConfig::new(0.0, 2.0, n, 1.0, m).unwrap();
            bc_transfer_check(&gauss(&cfg), &BoundarySignals::zeros(cfg.tgrid), &cfg).unwrap()
        })
        .collect();
    assert!(r[0] / r[1] >= 1.5 && r[1] / r[2] >= 1.5, "{r:?}");
}
