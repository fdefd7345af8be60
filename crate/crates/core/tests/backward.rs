use mfkill_core::model::{IntensityShape, ModelParams};
use mfkill_core::*;

fn passive(rate: f64) -> ModelParams {
    ModelParams {
        intensity: IntensityShape::Constant { rate },
        control_lower: 0.0,
        control_upper: 0.0,
        control_weight: 0.0,
        state_weight: 0.0,
        terminal_weight: 0.0,
        ..ModelParams::lq_killing()
    }
}

fn reduced_law(spec: &ModelSpec, grid: &Grid) -> Vec<SubProb1D> {
    let g = FeedbackControl::constant(grid, false, &[0.0]);
    solve_forward_1d(spec, grid, &g, None).unwrap().nu
}

#[test]
fn heat_flow_of_gaussian_terminal() {
    let spec = passive(0.0).build().unwrap();
    let grid = build_grid(-6.0, 6.0, 401, 2.0, 5, 200, 0.0, 1.0).unwrap();
    let s2 = 0.25;
    let terminal: Vec<f64> = grid.x_nodes().iter().map(|x| (-x * x / (2.0 * s2)).exp()).collect();
    let nu = reduced_law(&spec, &grid);
    let u = solve_backward_1d(&spec, &grid, &nu, &terminal, None, &BackwardOptions::default()).unwrap();
    for n in [0, 100, 180] {
        let v = s2 + (grid.horizon - grid.t(n));
        let peak = (s2 / v).sqrt();
        let err = grid
            .x_nodes()
            .iter()
            .enumerate()
            .map(|(i, x)| (u.values[n][i] - peak * (-x * x / (2.0 * v)).exp()).abs())
            .fold(0.0, f64::max);
        assert!(err / peak < 0.02, "step {n}: {err}");
    }
}

#[test]
fn constant_intensity_discounts_terminal_value() {
    let kappa = 0.7;
    let spec = passive(kappa).build().unwrap();
    let grid = build_grid(-4.0, 4.0, 81, 2.0, 5, 100, 0.0, 1.0).unwrap();
    let nu = reduced_law(&spec, &grid);
    let u = solve_backward_1d(&spec, &grid, &nu, &vec![1.0; grid.nx], None, &BackwardOptions::default()).unwrap();
    for n in 0..=grid.nt {
        let exact = (-kappa * (grid.horizon - grid.t(n))).exp();
        assert!(u.values[n].iter().all(|v| (v - exact).abs() <= 1e-3), "step {n}");
    }
}

#[test]
fn zero_intensity_decouples_rows() {
    let spec = passive(0.0).build().unwrap();
    let grid = build_grid(-4.0, 4.0, 81, 2.0, 9, 50, 0.0, 1.0).unwrap();
    let g = FeedbackControl::constant(&grid, true, &[0.0]);
    let traj = solve_forward_2d(&spec, &grid, &g, None).unwrap();
    let row: Vec<f64> = grid.x_nodes().iter().map(|x| x.sin()).collect();
    let terminal = row.repeat(grid.ny_total());
    let u = solve_backward_2d(&spec, &grid, &traj, BackwardMode::Adjoint(&g), &terminal, &BackwardOptions::default())
        .unwrap();
    for vals in &u.values {
        let first = &vals[..grid.nx];
        assert!(vals.chunks(grid.nx).all(|r| r == first));
    }
}

#[test]
fn zero_data_gives_zero_solution() {
    let spec = passive(1.0).build().unwrap();
    let grid = build_grid(-4.0, 4.0, 81, 2.0, 5, 50, 0.0, 1.0).unwrap();
    let nu = reduced_law(&spec, &grid);
    let terminal = vec![0.0; grid.nx];
    let u = solve_backward_1d(&spec, &grid, &nu, &terminal, None, &BackwardOptions::default()).unwrap();
    assert_eq!(u.sup_norm(), 0.0);
    let e = energy_report(&u, &terminal);
    assert_eq!((e.sup_l2, e.grad_l2_dt, e.q_l2_dt, e.constant), (0.0, 0.0, 0.0, 0.0));
}

#[test]
fn agrees_with_sine_galerkin() {
    let kappa = 0.3;
    let spec = passive(kappa).build().unwrap();
    let grid = build_grid(-6.0, 6.0, 481, 2.0, 5, 400, 0.0, 1.0).unwrap();
    let terminal: Vec<f64> = grid.x_nodes().iter().map(|x| (-2.0 * x * x).exp() * (1.0 + x)).collect();
    let nu = reduced_law(&spec, &grid);
    let u = solve_backward_1d(&spec, &grid, &nu, &terminal, None, &BackwardOptions::default()).unwrap();
    let reference = solve_linear_galerkin(&grid, 0.5, kappa, &terminal, 200).unwrap();
    let err = u.values[0].iter().zip(&reference[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = reference[0].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(err / scale < 5e-3, "{err} vs {scale}");
}

#[test]
fn rejects_mismatched_terminal() {
    let spec = passive(0.0).build().unwrap();
    let grid = build_grid(-4.0, 4.0, 81, 2.0, 5, 10, 0.0, 1.0).unwrap();
    let nu = reduced_law(&spec, &grid);
    let r = solve_backward_1d(&spec, &grid, &nu, &[0.0; 3], None, &BackwardOptions::default());
    assert!(matches!(r, Err(Error::GridMismatch(_))));
}
