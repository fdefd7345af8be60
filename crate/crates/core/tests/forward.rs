use mfkill_core::model::{InitialIntensityParams, IntensityShape, ModelParams};
use mfkill_core::*;

const C_CONSISTENCY: f64 = 0.2;

fn frozen(rate: f64) -> ModelParams {
    ModelParams {
        intensity: IntensityShape::Constant { rate },
        control_lower: 0.0,
        control_upper: 0.0,
        ..ModelParams::lq_killing()
    }
}

fn variance(nu: &SubProb1D) -> f64 {
    let m = nu.mass();
    nu.second_moment() / m - (nu.first_moment() / m).powi(2)
}

#[test]
fn x_marginal_follows_heat_kernel() {
    let mut p = frozen(0.0);
    p.initial_mean = 0.0;
    p.initial_std = 0.1;
    let spec = p.build().unwrap();
    let grid = build_grid(-6.0, 6.0, 400, 2.0, 20, 100, 0.0, 1.0).unwrap();
    let g = FeedbackControl::constant(&grid, true, &[0.0]);
    let traj = solve_forward_2d(&spec, &grid, &g, None).unwrap();
    let n = 50;
    let var = variance(&traj.mu[n].x_marginal());
    let exact = 0.01 + grid.t(n);
    assert!((var - exact).abs() / exact < 0.02, "{var} vs {exact}");
}

#[test]
fn intensity_mean_follows_characteristics() {
    let kappa = 0.8;
    let mut p = frozen(kappa);
    p.sigma = 0.3;
    let spec = p.build().unwrap();
    let grid = build_grid(-4.0, 4.0, 81, 3.0, 61, 100, 0.0, 1.0).unwrap();
    let g = FeedbackControl::constant(&grid, true, &[0.0]);
    let traj = solve_forward_2d(&spec, &grid, &g, None).unwrap();
    for n in [25, 50, 100] {
        let y = traj.mu[n].y_moment() / traj.mu[n].mass();
        let exact = kappa * grid.t(n);
        assert!((y - exact).abs() / exact < 0.01, "t {}: {y} vs {exact}", grid.t(n));
    }
}

#[test]
fn joint_mass_is_conserved() {
    let mut p = ModelParams::lq_killing();
    p.initial_intensity = InitialIntensityParams::Exponential(1.0);
    p.drift_coupling = 0.4;
    let spec = p.build().unwrap();
    let grid = build_grid(-4.0, 4.0, 81, 4.0, 21, 80, -0.5, 1.0).unwrap();
    let g = FeedbackControl::from_fn(&grid, true, 1, |t, x, y, o| o[0] = (2.0 * (x - t) * (1.0 + y)).tanh());
    let traj = solve_forward_2d(&spec, &grid, &g, None).unwrap();
    for (n, mu) in traj.mu.iter().enumerate() {
        assert!((mu.mass() - 1.0).abs() <= 1e-8, "step {n}: {}", mu.mass());
        assert!(mu.min_value() >= -EPS_NEG);
    }
    for (mu, nu) in traj.mu.iter().zip(&traj.nu) {
        let s = s_map(mu);
        assert!(s.values.iter().zip(&nu.values).all(|(a, b)| (a - b).abs() <= 1e-14));
    }
}

#[test]
fn killing_decays_mass_exactly() {
    for kappa in [0.0, 0.5, 2.0] {
        let spec = frozen(kappa).build().unwrap();
        let grid = build_grid(-4.0, 4.0, 101, 2.0, 5, 50, 0.0, 1.0).unwrap();
        let g = FeedbackControl::constant(&grid, false, &[0.0]);
        let traj = solve_forward_1d(&spec, &grid, &g, None).unwrap();
        let m0 = traj.nu[0].mass();
        for (n, m) in traj.masses().iter().enumerate() {
            assert!((m - m0 * (-kappa * grid.t(n)).exp()).abs() <= 1e-6, "kappa {kappa}, step {n}");
        }
    }
}

#[test]
fn reduced_and_joint_forward_agree() {
    let mut p = ModelParams::lq_killing();
    p.initial_intensity = InitialIntensityParams::Exponential(1.0);
    let spec = p.build().unwrap();
    let mut worst = Vec::new();
    for (nx, ny, nt) in [(41, 11, 40), (81, 21, 80), (161, 41, 160)] {
        let grid = build_grid(-4.0, 4.0, nx, 4.0, ny, nt, 0.0, 1.0).unwrap();
        let g = FeedbackControl::from_fn(&grid, false, 1, |t, x, _, o| o[0] = (x + t).sin());
        let one = solve_forward_1d(&spec, &grid, &g, None).unwrap();
        let two = solve_forward_2d(&spec, &grid, &g.lift(&grid), None).unwrap();
        let h = grid.dx() + grid.dy() + grid.dt();
        let d = (0..=nt)
            .map(|n| metric_dp(&one.nu[n], &s_map(&two.mu[n]), 1).unwrap())
            .fold(0.0, f64::max);
        assert!(d <= C_CONSISTENCY * h, "{d} vs {}", C_CONSISTENCY * h);
        worst.push(d);
    }
    assert!(worst[2] < worst[0], "{worst:?}");
}

#[test]
fn shift_examples() {
    let grid = build_grid(-6.0, 6.0, 241, 2.0, 5, 10, 0.0, 1.0).unwrap();
    let raw: Vec<f64> = grid.x_nodes().iter().map(|x| (-x * x / 0.5).exp()).collect();
    let z: f64 = raw.iter().sum::<f64>() * grid.dx();
    let rho = SubProb1D::on_grid(&grid, raw.iter().map(|v| v / z).collect()).unwrap();
    assert_eq!(shift_density(&rho, 0.0).values, rho.values);
    let h = 0.37;
    let moved = shift_density(&rho, h);
    assert!((moved.mean() - rho.mean() - h).abs() <= grid.dx() / 2.0);
    let back = shift_density(&moved, -h);
    let err = back.values.iter().zip(&rho.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let curvature = 2.0 / 0.5 * rho.values.iter().cloned().fold(0.0, f64::max);
    assert!(err <= h * grid.dx() * curvature, "{err}");
}

#[test]
fn common_noise_shifts_the_reduced_law() {
    let mut p = frozen(0.0);
    p.sigma0 = 0.5;
    let spec = p.build().unwrap();
    let grid = build_grid(-6.0, 6.0, 241, 2.0, 5, 50, 0.0, 1.0).unwrap();
    let g = FeedbackControl::constant(&grid, false, &[0.0]);
    let path = CommonNoisePath::for_grid(4, &grid);
    let traj = solve_forward_1d(&spec, &grid, &g, Some(&path)).unwrap();
    let w = path.path();
    for n in [10, 30, 50] {
        let drift = traj.nu[n].mean() - traj.nu[0].mean();
        assert!((drift - 0.5 * w[n]).abs() <= grid.dx(), "step {n}: {drift} vs {}", 0.5 * w[n]);
    }
}
