use mfkill_core::model::{IntensityShape, ModelParams};
use mfkill_core::*;

fn grid() -> Grid {
    build_grid(-4.0, 4.0, 81, 2.0, 9, 10, 0.0, 1.0).unwrap()
}

fn gaussian(grid: &Grid, m: f64, mass: f64) -> SubProb1D {
    let raw: Vec<f64> = grid.x_nodes().iter().map(|x| (-(x - m).powi(2)).exp()).collect();
    let z: f64 = raw.iter().sum::<f64>() * grid.dx();
    SubProb1D::on_grid(grid, raw.iter().map(|v| mass * v / z).collect()).unwrap()
}

fn quadratic_control(lo: f64, hi: f64) -> ModelSpec {
    ModelParams {
        intensity: IntensityShape::Constant { rate: 0.0 },
        control_lower: lo,
        control_upper: hi,
        state_weight: 0.0,
        ..ModelParams::lq_killing()
    }
    .build()
    .unwrap()
}

#[test]
fn pure_killing_hamiltonian() {
    let kappa = 1.3;
    let spec = ModelParams {
        intensity: IntensityShape::Constant { rate: kappa },
        control_lower: 0.0,
        control_upper: 0.0,
        control_weight: 0.0,
        state_weight: 0.0,
        ..ModelParams::lq_killing()
    }
    .build()
    .unwrap();
    let nu = gaussian(&grid(), 0.0, 0.8);
    for (r, p) in [(0.0, 0.0), (1.0, 2.0), (-0.4, -3.0)] {
        assert_eq!(h_nu(0.3, 0.5, r, p, &nu, &spec).unwrap(), -kappa * r);
    }
}

#[test]
fn quadratic_hamiltonian() {
    let spec = quadratic_control(-5.0, 5.0);
    let nu = gaussian(&grid(), 0.0, 1.0);
    for p in [-2.0, -0.5, 0.0, 1.0, 3.0] {
        let h = h_nu(0.0, 0.2, 0.7, p, &nu, &spec).unwrap();
        assert!((h + 0.5 * p * p).abs() < 1e-14, "p {p}: {h}");
    }
}

#[test]
fn hamiltonian_is_lipschitz_in_gradient() {
    let spec = quadratic_control(-2.0, 2.0);
    let nu = gaussian(&grid(), 0.0, 1.0);
    let ps: Vec<f64> = (0..41).map(|k| -5.0 + 0.25 * k as f64).collect();
    for a in &ps {
        for b in &ps {
            let ha = h_nu(0.0, 1.0, 0.0, *a, &nu, &spec).unwrap();
            let hb = h_nu(0.0, 1.0, 0.0, *b, &nu, &spec).unwrap();
            assert!((ha - hb).abs() <= 2.0 * (a - b).abs() + 1e-12);
        }
    }
}

#[test]
fn minimizer_clamps_to_box() {
    let spec = quadratic_control(-1.0, 0.5);
    assert_eq!(minimize_hamiltonian(0.0, 0.0, -3.0, &spec).unwrap(), vec![0.5]);
    assert_eq!(minimize_hamiltonian(0.0, 0.0, 3.0, &spec).unwrap(), vec![-1.0]);
    assert_eq!(minimize_hamiltonian(0.0, 0.0, 0.25, &spec).unwrap(), vec![-0.25]);
    assert!(matches!(minimize_hamiltonian(0.0, f64::INFINITY, 0.0, &spec), Err(Error::NonfiniteInput(_))));
}

#[test]
fn nonlocal_term_examples() {
    let g = grid();
    let nu = gaussian(&g, 0.4, 0.7);
    let p: Vec<f64> = g.x_nodes().iter().map(|x| x.cos()).collect();
    let local = quadratic_control(-1.0, 1.0);
    assert_eq!(f_nu(0.0, 1.0, &nu, &p, &local).unwrap(), 0.0);
    let (beta, gamma) = (0.6, -0.3);
    let spec = ModelParams { drift_coupling: beta, cost_coupling: gamma, ..ModelParams::lq_killing() }
        .build()
        .unwrap();
    let np: f64 = (0..nu.len()).map(|k| nu.values[k] * p[k]).sum::<f64>() * nu.dx;
    for x in [-1.0, 0.0, 2.5] {
        let expected = x * (beta * np + gamma * nu.first_moment());
        assert!((f_nu(0.0, x, &nu, &p, &spec).unwrap() - expected).abs() < 1e-13);
    }
    assert!(f_nu(0.0, 0.0, &nu, &p[..3], &spec).is_err());
}

#[test]
fn k_tilde_scales_cost_by_survival() {
    let spec = ModelParams { cost_offset: 0.5, ..ModelParams::lq_killing() }.build().unwrap();
    let nu = gaussian(&grid(), 0.0, 1.0);
    for y in [0.0, 0.5, 2.0] {
        let k0 = k_tilde(0.0, 0.3, 0.0, 0.0, &[0.4], &nu, &spec);
        let ky = k_tilde(0.0, 0.3, y, 0.0, &[0.4], &nu, &spec);
        assert!((ky - (-y).exp() * k0).abs() < 1e-15);
        let with_p = k_tilde(0.0, 0.3, y, 1.5, &[0.4], &nu, &spec);
        assert!((with_p - ky - 1.5 * 0.4).abs() < 1e-15);
    }
}

#[test]
fn f_tilde_reduces_to_f_nu_on_survival_weighted_gradient() {
    let g = grid();
    let spec = ModelParams { drift_coupling: 0.5, cost_coupling: 0.2, ..ModelParams::lq_killing() }
        .build()
        .unwrap();
    let mut mu = Density2D::zeros(&g);
    for j in 0..g.ny_total() {
        for i in 0..g.nx {
            let idx = mu.idx(i, j);
            mu.values[idx] = (-(g.x(i) - 0.3).powi(2)).exp() * (-g.y(j)).exp() * 0.4;
        }
    }
    let p: Vec<f64> = g.x_nodes().iter().map(|x| (0.5 * x).sin()).collect();
    let mut p2 = vec![0.0; mu.values.len()];
    for j in 0..g.ny_total() {
        for i in 0..g.nx {
            p2[mu.idx(i, j)] = (-g.y(j)).exp() * p[i];
        }
    }
    let nu = s_map(&mu);
    for (x, y) in [(0.0, 0.0), (1.0, 0.7), (-2.0, 1.5)] {
        let lhs = f_tilde_mu(0.0, x, y, &mu, &p2, &spec).unwrap();
        let rhs = (-y).exp() * f_nu(0.0, x, &nu, &p, &spec).unwrap();
        assert!((lhs - rhs).abs() < 1e-13 * (1.0 + rhs.abs()), "{lhs} vs {rhs}");
    }
}

#[test]
fn h_tilde_branches_on_density_floor() {
    let spec = ModelSpec::lq_killing();
    let nu = gaussian(&grid(), 0.0, 1.0);
    let (t, x, y, p) = (0.2, 0.5, 0.8, 0.9);
    let inf = h_tilde_mu(t, x, y, p, 1.0, &[1.7], &nu, &spec).unwrap();
    let g = -p * y.exp();
    let expected = k_tilde(t, x, y, p, &[g.clamp(-2.0, 2.0)], &nu, &spec);
    assert!((inf - expected).abs() < 1e-14);
    let fb = h_tilde_mu(t, x, y, p, 0.0, &[1.7], &nu, &spec).unwrap();
    assert_eq!(fb, k_tilde(t, x, y, p, &[1.7], &nu, &spec));
    assert!(inf <= fb);
}
