use mfkill_core::model::{IntensityShape, ModelParams};
use mfkill_core::*;

const N: usize = 100_000;
const SUM_ROUNDING: f64 = N as f64 * f64::EPSILON;

fn passive(rate: f64) -> ModelSpec {
    ModelParams {
        intensity: IntensityShape::Constant { rate },
        control_lower: 0.0,
        control_upper: 0.0,
        control_weight: 0.0,
        state_weight: 0.0,
        cost_offset: 1.0,
        terminal_weight: 0.0,
        initial_mean: 0.0,
        ..ModelParams::lq_killing()
    }
    .build()
    .unwrap()
}

fn run(spec: &ModelSpec, grid: &Grid, seed: u64) -> ParticleTrajectory {
    let g = FeedbackControl::constant(grid, false, &[0.0]);
    simulate_particles(spec, grid, &g, N, Some(seed), None, Coupling::Empirical, grid.nt).unwrap()
}

#[test]
fn free_particles_spread_like_brownian_motion() {
    let spec = passive(0.0);
    let grid = build_grid(-8.0, 8.0, 161, 2.0, 5, 50, 0.0, 1.0).unwrap();
    let last = run(&spec, &grid, 3).final_state().clone();
    let m = last.x.iter().sum::<f64>() / N as f64;
    let var = last.x.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (N - 1) as f64;
    let exact = 0.25 + 1.0;
    let se = exact * (2.0 / N as f64).sqrt();
    assert!((var - exact).abs() <= 4.0 * se, "{var} vs {exact}");
    assert!(m.abs() <= 4.0 * (exact / N as f64).sqrt(), "{m}");
}

#[test]
fn soft_weight_decays_deterministically() {
    let kappa = 0.8;
    let spec = passive(kappa);
    let grid = build_grid(-6.0, 6.0, 121, 2.0, 5, 40, 0.0, 1.0).unwrap();
    let tr = run(&spec, &grid, 1);
    for (n, w) in tr.mean_weight.iter().enumerate() {
        assert!((w - (-kappa * grid.t(n)).exp()).abs() <= SUM_ROUNDING, "step {n}");
    }
    let alive = tr.alive_fraction[grid.nt];
    let p = (-kappa).exp();
    assert!((alive - p).abs() <= 4.0 * (p * (1.0 - p) / N as f64).sqrt(), "{alive} vs {p}");
}

#[test]
fn particles_on_one_node_carry_unit_mass() {
    let grid = build_grid(-4.0, 4.0, 81, 2.0, 5, 10, 0.0, 1.0).unwrap();
    let ens = ParticleEnsemble {
        t: 0.0,
        x: vec![grid.x(40); 1000],
        lambda: vec![0.0; 1000],
        clock: vec![1.0; 1000],
        alive: vec![true; 1000],
        seed: 0,
    };
    for mode in [WeightMode::Hard, WeightMode::Soft] {
        let nu = empirical_subprob(&ens, mode, &grid);
        assert!((nu.mass() - 1.0).abs() < 1e-12);
        assert!((nu.mean() - grid.x(40)).abs() < 1e-12);
    }
}

#[test]
fn monte_carlo_cost_matches_survival_integral() {
    let kappa = 1.0;
    let spec = passive(kappa);
    let grid = build_grid(-6.0, 6.0, 121, 2.0, 5, 200, 0.0, 1.0).unwrap();
    let tr = run(&spec, &grid, 11);
    let left_sum: f64 = (0..grid.nt).map(|n| grid.dt() * (-kappa * grid.t(n)).exp()).sum();
    let (soft, _) = estimate_cost_mc(&spec, &tr, WeightMode::Soft);
    assert!((soft - left_sum).abs() <= SUM_ROUNDING, "{soft} vs {left_sum}");
    let exact = (1.0 - (-kappa).exp()) / kappa;
    assert!((soft - exact).abs() <= grid.dt());
    let (hard, half) = estimate_cost_mc(&spec, &tr, WeightMode::Hard);
    assert!((hard - left_sum).abs() <= half.max(4.0 / (N as f64).sqrt()), "{hard} ± {half} vs {left_sum}");
}

#[test]
fn seeds_fix_the_simulation() {
    let spec = ModelSpec::lq_killing();
    let grid = build_grid(-4.0, 4.0, 41, 2.0, 5, 20, 0.0, 1.0).unwrap();
    let g = FeedbackControl::from_fn(&grid, false, 1, |_, x, _, o| o[0] = -x.clamp(-2.0, 2.0));
    let sim = |seed| simulate_particles(&spec, &grid, &g, 2000, seed, None, Coupling::Empirical, 5);
    let a = sim(Some(9)).unwrap();
    let b = sim(Some(9)).unwrap();
    let c = sim(Some(10)).unwrap();
    assert_eq!(a.snapshots, b.snapshots);
    assert_ne!(a.final_state().x, c.final_state().x);
    assert_eq!(a.snapshot_steps, vec![0, 5, 10, 15, 20]);
    assert!(matches!(sim(None), Err(Error::SeedRequired)));
}
