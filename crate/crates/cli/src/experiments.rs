//! Experiment dispatch.

use std::fs;
use std::path::PathBuf;

use mfkill_core::config::RunConfig;
use mfkill_core::control::{separability_gap, terminal_derivative, terminal_derivative_2d};
use mfkill_core::{
    build_approx_family, empirical_subprob, energy_report, estimate_cost_mc, evaluate_cost, intensity_independence_diag,
    metric_dp, simulate_particles, smp_residual, solve_backward_1d, solve_backward_2d, solve_forward_1d, solve_forward_2d,
    solve_mfc, validate_model, BackwardMode, CommonNoisePath, Coupling, Error, FeedbackControl, ForwardOutput, Grid,
    MfcStatus, ModelSpec, Route, WeightMode,
};
use serde_json::{json, Value};

use crate::output::{csv, sha256_hex, Manifest, OutputDir};
use crate::{Args, Failure};

pub const EXPERIMENTS: [&str; 7] =
    ["solve", "forward", "backward", "particles", "separability-check", "smp-check", "regularize-sweep"];

struct Context {
    cfg: RunConfig,
    spec: ModelSpec,
    grid: Grid,
    refine: usize,
    seed: Option<u64>,
}

impl Context {
    fn noise(&self) -> Option<CommonNoisePath> {
        self.cfg.solver.noise_seed.map(|s| CommonNoisePath::for_grid(s, &self.grid))
    }

    fn joint(&self) -> bool {
        self.cfg.solver.route == Route::Joint
    }

    fn reference_control(&self) -> FeedbackControl {
        FeedbackControl::constant(&self.grid, self.joint(), &self.spec.control_box.center())
    }
}

struct Report {
    diagnostics: Value,
    converged: bool,
    grid: Grid,
}

pub fn run(args: &Args) -> Result<(), Failure> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| Failure::Invalid(format!("cannot read {}: {e}", args.config.display())))?;
    let cfg = RunConfig::from_json(&text)?;
    let experiment = args
        .experiment
        .clone()
        .or_else(|| cfg.experiment.clone())
        .unwrap_or_else(|| "solve".to_string());
    if !EXPERIMENTS.contains(&experiment.as_str()) {
        return Err(Failure::Invalid(format!(
            "unknown experiment '{experiment}', expected one of {}",
            EXPERIMENTS.join(", ")
        )));
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let spec = cfg.model_spec()?;
    let report = validate_model(&spec)?;
    for w in &report.warnings {
        eprintln!("mfkill: warning: {w}");
    }
    let grid = cfg.grid(spec.horizon)?.refined(args.refine);
    let seed = args.seed.or(cfg.seed);
    let ctx = Context { cfg, spec, grid, refine: args.refine, seed };

    let mut dir = OutputDir::create(&out)?;
    let report = match experiment.as_str() {
        "solve" => solve(&ctx, &mut dir)?,
        "forward" => forward(&ctx, &mut dir)?,
        "backward" => backward(&ctx, &mut dir)?,
        "particles" => particles(&ctx, &mut dir)?,
        "separability-check" => separability(&ctx, &mut dir)?,
        "smp-check" => smp_check(&ctx, &mut dir)?,
        _ => regularize_sweep(&ctx, &mut dir)?,
    };
    dir.json("diagnostics.json", &report.diagnostics)?;
    let mut files = dir.files().to_vec();
    files.push("manifest.json".into());
    let manifest = Manifest {
        version: env!("MFKILL_VERSION"),
        experiment: &experiment,
        config_sha256: sha256_hex(&text),
        grid: &report.grid,
        tolerances: &ctx.cfg.solver,
        seed: ctx.seed,
        refine: ctx.refine,
        outputs: &files,
    };
    let manifest = serde_json::to_value(&manifest).map_err(|e| Failure::Io(e.to_string()))?;
    dir.json("manifest.json", &manifest)?;
    if report.converged {
        Ok(())
    } else {
        Err(Failure::NotConverged(format!("{experiment} did not converge; see {}", out.join("diagnostics.json").display())))
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn mass_rows(grid: &Grid, masses: &[f64]) -> String {
    csv("t,mass", masses.iter().enumerate().map(|(n, m)| vec![grid.t(n), *m]))
}

fn solve(ctx: &Context, dir: &mut OutputDir) -> Result<Report, Failure> {
    let grid = &ctx.grid;
    let sol = solve_mfc(&ctx.spec, grid, None, &ctx.cfg.solver.mfc_options())?;
    dir.text("g_star.csv", &sol.control.to_csv(grid))?;
    dir.text("u.csv", &sol.backward.to_csv())?;
    dir.text("nu_T.csv", &sol.forward.nu()[grid.nt].to_csv())?;
    let masses = sol.forward.masses();
    dir.text("mass.csv", &mass_rows(grid, &masses))?;
    let diag = json!({
        "status": sol.status,
        "picard_iterations": sol.iterations,
        "residual_trace": sol.residual_trace,
        "cost_trace": sol.cost_trace,
        "cost": sol.cost,
        "final_mass": masses[grid.nt],
        "fixed_point": sol.backward.stats,
        "intensity_independence_diag": sol.control.is_two_d().then(|| intensity_independence_diag(&sol.control)),
    });
    Ok(Report { diagnostics: diag, converged: sol.status == MfcStatus::Converged, grid: grid.clone() })
}

fn forward(ctx: &Context, dir: &mut OutputDir) -> Result<Report, Failure> {
    let grid = &ctx.grid;
    let g = ctx.reference_control();
    let noise = ctx.noise();
    let (out, extra) = if ctx.joint() {
        let traj = solve_forward_2d(&ctx.spec, grid, &g, noise.as_ref())?;
        dir.text("mu_T.csv", &traj.mu[grid.nt].to_csv())?;
        let extra = json!({
            "energy_constant": traj.energy_constant,
            "boundary_mass": traj.boundary_mass,
            "min_density": traj.mu.iter().map(|m| m.min_value()).fold(f64::INFINITY, f64::min),
        });
        (ForwardOutput::Joint(traj), extra)
    } else {
        (ForwardOutput::Reduced(solve_forward_1d(&ctx.spec, grid, &g, noise.as_ref())?), Value::Null)
    };
    dir.text("nu_T.csv", &out.nu()[grid.nt].to_csv())?;
    let masses = out.masses();
    dir.text("mass.csv", &mass_rows(grid, &masses))?;
    let cost = evaluate_cost(&ctx.spec, &g, &out)?;
    let diag = json!({
        "control": ctx.spec.control_box.center(),
        "masses": masses,
        "cost": cost,
        "two_d": extra,
    });
    Ok(Report { diagnostics: diag, converged: true, grid: grid.clone() })
}

fn backward(ctx: &Context, dir: &mut OutputDir) -> Result<Report, Failure> {
    let grid = &ctx.grid;
    let g = ctx.reference_control();
    let noise = ctx.noise();
    let opts = ctx.cfg.solver.backward_options();
    let (u, term) = if ctx.joint() {
        let traj = solve_forward_2d(&ctx.spec, grid, &g, noise.as_ref())?;
        let term = terminal_derivative_2d(&ctx.spec, grid, &traj.nu[grid.nt]);
        (solve_backward_2d(&ctx.spec, grid, &traj, BackwardMode::Adjoint(&g), &term, &opts)?, term)
    } else {
        let traj = solve_forward_1d(&ctx.spec, grid, &g, noise.as_ref())?;
        let term = terminal_derivative(&ctx.spec, grid, &traj.nu[grid.nt]);
        (solve_backward_1d(&ctx.spec, grid, &traj.nu, &term, noise.as_ref(), &opts)?, term)
    };
    dir.text("u.csv", &u.to_csv())?;
    let diag = json!({
        "control": ctx.spec.control_box.center(),
        "sup_norm": u.sup_norm(),
        "energy": energy_report(&u, &term),
        "fixed_point": u.stats,
    });
    Ok(Report { diagnostics: diag, converged: u.stats.unconverged_steps == 0, grid: grid.clone() })
}

fn particles(ctx: &Context, dir: &mut OutputDir) -> Result<Report, Failure> {
    let grid = &ctx.grid;
    let seed = ctx.seed.ok_or(Error::SeedRequired)?;
    let sol = solve_mfc(&ctx.spec, grid, None, &ctx.cfg.solver.mfc_options())?;
    let pc = &ctx.cfg.particles;
    let coupling = if pc.empirical_coupling { Coupling::Empirical } else { Coupling::Pde(sol.forward.nu()) };
    let traj = simulate_particles(
        &ctx.spec,
        grid,
        &sol.control,
        pc.count,
        Some(seed),
        sol.forward.noise(),
        coupling,
        pc.snapshot_every,
    )?;
    let last = traj.final_state();
    dir.text("particles_T.csv", &last.to_csv())?;
    let alive = csv(
        "t,alive_fraction,mean_weight",
        (0..=grid.nt).map(|n| vec![grid.t(n), traj.alive_fraction[n], traj.mean_weight[n]]),
    );
    dir.text("alive.csv", &alive)?;
    let soft = empirical_subprob(last, WeightMode::Soft, grid);
    let hard = empirical_subprob(last, WeightMode::Hard, grid);
    dir.text("nu_particles_T.csv", &soft.to_csv())?;
    let pde = &sol.forward.nu()[grid.nt];
    let (j_soft, ci_soft) = estimate_cost_mc(&ctx.spec, &traj, WeightMode::Soft);
    let (j_hard, ci_hard) = estimate_cost_mc(&ctx.spec, &traj, WeightMode::Hard);
    let diag = json!({
        "status": sol.status,
        "picard_iterations": sol.iterations,
        "particles": pc.count,
        "d1_soft_vs_pde": metric_dp(&soft, pde, 1)?,
        "d1_hard_vs_pde": metric_dp(&hard, pde, 1)?,
        "alive_fraction_T": traj.alive_fraction[grid.nt],
        "pde_mass_T": pde.mass(),
        "cost_pde": sol.cost.total,
        "cost_mc_soft": { "value": j_soft, "half_width": ci_soft },
        "cost_mc_hard": { "value": j_hard, "half_width": ci_hard },
    });
    Ok(Report { diagnostics: diag, converged: sol.status == MfcStatus::Converged, grid: grid.clone() })
}

fn separability(ctx: &Context, dir: &mut OutputDir) -> Result<Report, Failure> {
    let grids: Vec<Grid> =
        ctx.cfg.level_grids(ctx.spec.horizon)?.into_iter().map(|g| g.refined(ctx.refine)).collect();
    let opts = ctx.cfg.solver.backward_options();
    let center = ctx.spec.control_box.center();
    let mut gaps = Vec::new();
    let mut converged = true;
    for grid in &grids {
        let nt = grid.nt;
        let g = FeedbackControl::constant(grid, true, &center);
        let traj = solve_forward_2d(&ctx.spec, grid, &g, None)?;
        let t1 = terminal_derivative(&ctx.spec, grid, &traj.nu[nt]);
        let u1 = solve_backward_1d(&ctx.spec, grid, &traj.nu, &t1, None, &opts)?;
        let t2 = terminal_derivative_2d(&ctx.spec, grid, &traj.nu[nt]);
        let u2 = solve_backward_2d(&ctx.spec, grid, &traj, BackwardMode::Semilinear(&u1), &t2, &opts)?;
        converged &= u1.stats.unconverged_steps == 0 && u2.stats.unconverged_steps == 0;
        gaps.push(separability_gap(&u2, &u1)?);
    }
    let rows = grids
        .iter()
        .zip(&gaps)
        .map(|(g, gap)| vec![g.nx as f64, g.ny as f64, g.nt as f64, g.dx(), g.dy(), g.dt(), *gap]);
    dir.text("separability.csv", &csv("nx,ny,nt,dx,dy,dt,gap", rows))?;
    let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
    let ratios: Vec<f64> = gaps.windows(2).map(|w| w[0] / w[1]).collect();
    let diag = json!({
        "levels": grids.iter().map(to_value).collect::<Vec<_>>(),
        "separability_gap": gaps,
        "ratios": ratios,
        "decreasing": decreasing,
    });
    let grid = grids.last().cloned().unwrap_or_else(|| ctx.grid.clone());
    Ok(Report { diagnostics: diag, converged, grid })
}

fn smp_check(ctx: &Context, dir: &mut OutputDir) -> Result<Report, Failure> {
    let grid = &ctx.grid;
    let mut opts = ctx.cfg.solver.mfc_options();
    opts.route = Route::Joint;
    let sol = solve_mfc(&ctx.spec, grid, None, &opts)?;
    let ForwardOutput::Joint(traj) = &sol.forward else {
        return Err(Failure::Invalid("joint route returned a reduced trajectory".into()));
    };
    let residual = smp_residual(&ctx.spec, &sol.control, traj, &sol.backward, ctx.cfg.solver.mu_floor)?;
    dir.text("g_star.csv", &sol.control.to_csv(grid))?;
    dir.text("u.csv", &sol.backward.to_csv())?;
    let diag = json!({
        "status": sol.status,
        "picard_iterations": sol.iterations,
        "smp_residual": residual,
        "intensity_independence_diag": intensity_independence_diag(&sol.control),
        "cost": sol.cost,
    });
    Ok(Report { diagnostics: diag, converged: sol.status == MfcStatus::Converged, grid: grid.clone() })
}

fn regularize_sweep(ctx: &Context, dir: &mut OutputDir) -> Result<Report, Failure> {
    let grid = &ctx.grid;
    let opts = ctx.cfg.solver.mfc_options();
    let base = solve_mfc(&ctx.spec, grid, None, &opts)?;
    let v = base.cost.total;
    let mut converged = base.status == MfcStatus::Converged;
    let mut entries = Vec::new();
    let mut rows = Vec::new();
    for &n in &ctx.cfg.regularize.indices {
        let fam = build_approx_family(&ctx.spec, n)?;
        let sol = solve_mfc(&fam.spec, grid, None, &opts)?;
        converged &= sol.status == MfcStatus::Converged;
        let rel = (sol.cost.total - v).abs() / v.abs().max(f64::MIN_POSITIVE);
        rows.push(vec![n as f64, sol.cost.total, rel]);
        entries.push(json!({
            "n": n,
            "value": sol.cost.total,
            "relative_gap": rel,
            "status": sol.status,
            "picard_iterations": sol.iterations,
            "k": fam.k,
            "eps_weights": fam.eps_weights,
            "eps_control": fam.eps_control,
            "modulus": fam.modulus,
            "certificates": fam.certificates,
        }));
    }
    dir.text("regularize.csv", &csv("n,value,relative_gap", rows))?;
    let diag = json!({ "value": v, "status": base.status, "sweep": entries });
    Ok(Report { diagnostics: diag, converged, grid: grid.clone() })
}
