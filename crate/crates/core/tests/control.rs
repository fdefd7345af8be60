use mfkill_core::control::terminal_derivative_2d;
use mfkill_core::model::{IntensityShape, ModelParams};
use mfkill_core::*;

fn joint_optimum() -> (ModelSpec, Grid, MfcSolution) {
    let mut p = ModelParams::lq_killing();
    p.drift_coupling = 0.3;
    p.mean_reversion = 0.5;
    let spec = p.build().unwrap();
    let grid = build_grid(-4.0, 4.0, 41, 3.0, 11, 40, 0.0, 1.0).unwrap();
    let sol = solve_mfc(&spec, &grid, None, &MfcOptions { route: Route::Joint, ..Default::default() }).unwrap();
    assert_eq!(sol.status, MfcStatus::Converged);
    (spec, grid, sol)
}

fn joint(sol: &MfcSolution) -> &ForwardTrajectory2D {
    match &sol.forward {
        ForwardOutput::Joint(f) => f,
        ForwardOutput::Reduced(_) => panic!("expected a joint trajectory"),
    }
}

#[test]
fn zero_costs_give_zero_value() {
    let spec = ModelParams { state_weight: 0.0, terminal_weight: 0.0, ..ModelParams::lq_killing() }.build().unwrap();
    let grid = build_grid(-4.0, 4.0, 41, 2.0, 5, 20, 0.0, 1.0).unwrap();
    let sol = solve_mfc(&spec, &grid, None, &MfcOptions::default()).unwrap();
    assert_eq!(sol.cost.total, 0.0);
    assert_eq!(sol.control.sup_norm(), 0.0);
}

#[test]
fn unit_running_cost_under_constant_killing() {
    let kappa = 1.0;
    let spec = ModelParams::constant_intensity().build().unwrap();
    let grid = build_grid(-4.0, 4.0, 41, 2.0, 5, 4000, 0.0, 1.0).unwrap();
    let sol = solve_mfc(&spec, &grid, None, &MfcOptions::default()).unwrap();
    let exact = (1.0 - (-kappa * grid.horizon).exp()) / kappa;
    assert!((sol.cost.total - exact).abs() <= 1e-4, "{} vs {exact}", sol.cost.total);
}

#[test]
fn singleton_box_converges_at_once() {
    let spec = ModelParams { control_lower: 0.3, control_upper: 0.3, ..ModelParams::lq_killing() }.build().unwrap();
    let grid = build_grid(-4.0, 4.0, 41, 2.0, 5, 20, 0.0, 1.0).unwrap();
    for route in [Route::Reduced, Route::Joint] {
        let sol = solve_mfc(&spec, &grid, None, &MfcOptions { route, ..Default::default() }).unwrap();
        assert_eq!((sol.status, sol.iterations), (MfcStatus::Converged, 1));
        assert_eq!(sol.residual_trace, vec![0.0]);
    }
}

fn trace_rise(trace: &[f64]) -> f64 {
    trace.windows(2).skip(3).map(|w| (w[1] - w[0]).max(0.0)).sum()
}

#[test]
fn cost_trace_settles_monotonically() {
    let spec = ModelSpec::lq_killing();
    let fine = build_grid(-4.0, 4.0, 161, 2.0, 5, 80, 0.0, 1.0).unwrap();
    let coarse = build_grid(-4.0, 4.0, 41, 2.0, 11, 20, 0.0, 1.0).unwrap();
    for (grid, route) in [(fine, Route::Reduced), (coarse, Route::Joint)] {
        let sol = solve_mfc(&spec, &grid, None, &MfcOptions { route, ..Default::default() }).unwrap();
        assert_eq!(sol.status, MfcStatus::Converged);
        let tr = &sol.cost_trace;
        for k in 3..tr.len() - 1 {
            assert!(tr[k + 1] <= tr[k], "{route:?} iteration {k}: {} -> {}", tr[k], tr[k + 1]);
        }
    }
}

#[test]
fn reduced_cost_overshoot_vanishes_under_refinement() {
    let spec = ModelSpec::lq_killing();
    let rises: Vec<f64> = [(41, 20), (81, 40), (161, 80)]
        .iter()
        .map(|&(nx, nt)| {
            let grid = build_grid(-4.0, 4.0, nx, 2.0, 5, nt, 0.0, 1.0).unwrap();
            trace_rise(&solve_mfc(&spec, &grid, None, &MfcOptions::default()).unwrap().cost_trace)
        })
        .collect();
    assert!(rises[1] < rises[0] && rises[2] <= rises[1], "{rises:?}");
    assert_eq!(rises[2], 0.0);
}

#[test]
fn gateaux_derivative_examples() {
    let (spec, grid, sol) = joint_optimum();
    let fwd = joint(&sol);
    let zero = FeedbackControl::constant(&grid, true, &[0.0]);
    assert_eq!(gateaux_derivative(&spec, &sol.control, &zero, fwd, &sol.backward).unwrap(), 0.0);
    for (a, c) in [(1.5, 0.0), (-1.5, 1.0), (0.0, 3.0), (1.0, -2.0)] {
        let mut h = FeedbackControl::from_fn(&grid, true, 1, |t, x, y, o| o[0] = (a * (c * x + t).sin() + 0.3 * y).clamp(-2.0, 2.0));
        for (hv, gv) in h.values.iter_mut().zip(&sol.control.values) {
            *hv -= gv;
        }
        let d = gateaux_derivative(&spec, &sol.control, &h, fwd, &sol.backward).unwrap();
        assert!(d >= -1e-4, "direction ({a}, {c}): {d}");
    }
}

#[test]
fn gateaux_rejects_directions_leaving_the_box() {
    let (spec, grid, _) = joint_optimum();
    let g = FeedbackControl::constant(&grid, true, &[2.0]);
    let h = FeedbackControl::constant(&grid, true, &[1.0]);
    let f = solve_forward_2d(&spec, &grid, &g, None).unwrap();
    let term = terminal_derivative_2d(&spec, &grid, &f.nu[grid.nt]);
    let adj = solve_backward_2d(&spec, &grid, &f, BackwardMode::Adjoint(&g), &term, &BackwardOptions::default()).unwrap();
    assert!(matches!(gateaux_derivative(&spec, &g, &h, &f, &adj), Err(Error::DirectionLeavesBox { .. })));
}

#[test]
fn smp_residual_detects_perturbation_and_ignores_empty_nodes() {
    let (spec, grid, sol) = joint_optimum();
    let fwd = joint(&sol);
    let base = smp_residual(&spec, &sol.control, fwd, &sol.backward, MU_FLOOR).unwrap();
    assert!(base <= 1e-6, "{base}");
    let nx = grid.nx;
    let mut empty = sol.control.clone();
    let mut shifted = sol.control.clone();
    for n in 0..grid.nt {
        for j in 0..grid.ny_total() {
            for i in 0..nx {
                if fwd.mu[n].at(i, j) <= MU_FLOOR {
                    empty.at_mut(n, i, j)[0] = 2.0;
                } else {
                    let v = shifted.at_mut(n, i, j);
                    v[0] = if v[0] > 0.0 { v[0] - 0.5 } else { v[0] + 0.5 };
                }
            }
        }
    }
    assert_eq!(smp_residual(&spec, &empty, fwd, &sol.backward, MU_FLOOR).unwrap(), base);
    assert!(smp_residual(&spec, &shifted, fwd, &sol.backward, MU_FLOOR).unwrap() > 1e-3);
}

#[test]
fn intensity_independence_diag_examples() {
    let grid = build_grid(-2.0, 2.0, 21, 2.5, 11, 10, 0.0, 1.0).unwrap();
    let flat = FeedbackControl::from_fn(&grid, true, 1, |t, x, _, o| o[0] = x * t);
    assert_eq!(intensity_independence_diag(&flat), 0.0);
    let g = FeedbackControl::from_fn(&grid, true, 1, |_, _, y, o| o[0] = y);
    assert!((intensity_independence_diag(&g) - grid.y_max).abs() < 1e-12);
}

#[test]
fn invalid_options_and_controls_are_rejected() {
    let spec = ModelSpec::lq_killing();
    let grid = build_grid(-4.0, 4.0, 41, 2.0, 5, 20, 0.0, 1.0).unwrap();
    let bad = MfcOptions { tol_pi: 0.0, ..Default::default() };
    assert!(matches!(solve_mfc(&spec, &grid, None, &bad), Err(Error::Config(_))));
    let outside = FeedbackControl::constant(&grid, false, &[3.0]);
    assert!(solve_mfc(&spec, &grid, Some(&outside), &MfcOptions::default()).is_err());
    let y_dep = FeedbackControl::from_fn(&grid, true, 1, |_, _, y, o| o[0] = 0.1 * y);
    assert!(matches!(solve_mfc(&spec, &grid, Some(&y_dep), &MfcOptions::default()), Err(Error::ArgumentConflict(_))));
}

#[test]
fn killing_lowers_the_value_of_a_positive_cost() {
    let grid = build_grid(-4.0, 4.0, 41, 2.0, 5, 40, 0.0, 1.0).unwrap();
    let value = |rate: f64| {
        let spec = ModelParams { intensity: IntensityShape::Constant { rate }, ..ModelParams::lq_killing() }.build().unwrap();
        solve_mfc(&spec, &grid, None, &MfcOptions::default()).unwrap().cost.total
    };
    let (a, b, c) = (value(0.0), value(0.5), value(2.0));
    assert!(a > b && b > c, "{a} {b} {c}");
}
