use crate::config::{parse_list, read_matrix};
use crate::output::{panel, write_json, write_text, OptimizeOutput, PanelColumn, SimulationSummary};
use crate::{BoundArgs, DensitiesArgs, EnumerateArgs, GaussianArgs, MomentsArgs, OptimizeArgs, SimArgs, SimulateArgs, SolverArgs};
use anyhow::{Context, Result};
use log::{info, warn};
use mwm::heuristic::SolverOptions;
use mwm::order_stats::{self, IntegrationOptions, MaxMode, MomentMethod};
use mwm::simulator::{self, GridSpec, SimulationOptions};
use mwm::{combination_distribution, enumerate_combinations, CombinationMatrix, MachineConfig, MwmError, Setpoints};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::path::Path;

pub fn enumerate(a: &EnumerateArgs) -> Result<()> {
    let cfg = a.machine.resolve_without_cap()?;
    let p = enumerate_combinations(&cfg)?;
    if let Some(path) = &a.csv {
        write_text(&p.to_csv(), Some(path))?;
    }
    println!("K={}", p.len());
    Ok(())
}

fn gaussian(input: &GaussianArgs) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if let (Some(t), Some(s)) = (&input.theta, &input.sigma) {
        let theta = parse_list(t)?;
        let rows = read_matrix(s)?;
        let k = theta.len();
        if rows.len() != k || rows.iter().any(|r| r.len() != k) {
            return Err(MwmError::DimensionMismatch(format!("{k} means need a {k}x{k} covariance matrix")).into());
        }
        return Ok((DVector::from_vec(theta), DMatrix::from_fn(k, k, |i, j| rows[i][j])));
    }
    let mu = input
        .mu
        .as_deref()
        .ok_or_else(|| MwmError::InvalidConfig("pass --mu with a machine, or --theta with --sigma".into()))?;
    let cfg = input.machine.resolve_without_cap()?;
    let p = enumerate_combinations(&cfg)?;
    let mu = Setpoints::new(parse_list(mu)?)?;
    Ok(combination_distribution(&p, &mu, cfg.alpha)?)
}

fn integration(tol: f64, seed: Option<u64>) -> Result<IntegrationOptions> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(MwmError::InvalidConfig(format!("--tol must lie in (0, 1), got {tol}")).into());
    }
    let opts = IntegrationOptions::default().with_tol(tol);
    Ok(match seed {
        Some(s) => opts.with_seed(s),
        None => opts,
    })
}

#[derive(Serialize)]
struct MomentsOutput {
    k: usize,
    e_min: f64,
    var_min: f64,
    e_max: f64,
    var_max: f64,
    extreme_avg: f64,
    max_method: MomentMethod,
    integration: IntegrationOptions,
}

pub fn moments(a: &MomentsArgs, seed: Option<u64>) -> Result<()> {
    let (theta, sigma) = gaussian(&a.input)?;
    let opts = integration(a.tol, seed)?;
    let mode = if a.approx_max { MaxMode::ArgmaxApprox } else { MaxMode::Exact };
    let e = order_stats::extreme_moments(&theta, &sigma, &opts, mode)?;
    let out = MomentsOutput {
        k: theta.len(),
        e_min: e.e_min,
        var_min: e.var_min,
        e_max: e.e_max,
        var_max: e.var_max,
        extreme_avg: e.extreme_avg(),
        max_method: if a.approx_max { MomentMethod::ArgmaxApprox } else { MomentMethod::Exact },
        integration: opts,
    };
    write_json(&out, a.out.as_deref())
}

#[derive(Serialize)]
struct BoundOutput {
    k: usize,
    lb_min: f64,
    max_theta: f64,
    /// Midrange with the bound in place of the expected minimum.
    extreme_avg: f64,
    exact_min: Option<f64>,
    integration: Option<IntegrationOptions>,
}

pub fn bound(a: &BoundArgs, seed: Option<u64>) -> Result<()> {
    let (theta, sigma) = gaussian(&a.input)?;
    let sd: Vec<f64> = sigma.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect();
    let lb = order_stats::lb_min_expectation(theta.as_slice(), &sd)?;
    let max_theta = theta.max();
    let (exact_min, integration) = if a.exact {
        let opts = integration(a.tol, seed)?;
        (Some(order_stats::min_moments(&theta, &sigma, &opts)?.mean), Some(opts))
    } else {
        (None, None)
    };
    let out = BoundOutput { k: theta.len(), lb_min: lb, max_theta, extreme_avg: 0.5 * (lb + max_theta), exact_min, integration };
    write_json(&out, a.out.as_deref())
}

/// Solver options from an optional JSON file, then flags, then the global seed.
pub fn solver_options(a: &SolverArgs, seed: Option<u64>) -> Result<SolverOptions> {
    let mut opts = match &a.options {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| MwmError::InvalidConfig(format!("{}: {e}", p.display())))?
        }
        None => SolverOptions::default(),
    };
    if let Some(n) = a.starts {
        opts.n_starts = n;
    }
    if let Some(m) = a.mode {
        opts.bound_mode = m.into();
    }
    if let Some(s) = a.sense {
        opts.sense = s.into();
    }
    if let Some(e) = a.exact_method {
        opts.exact_method = e.into();
    }
    if let Some(t) = a.constraint_tol {
        opts.constraint_tol = t;
    }
    let w = &mut opts.weights;
    for (flag, slot) in [(a.w_logdet, &mut w.log_det), (a.w_p, &mut w.p), (a.w_c, &mut w.c)] {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    if let Some(s) = seed {
        opts.rng_seed = s;
        opts.integration.seed = s;
    }
    opts.validate()?;
    Ok(opts)
}

fn sim_options(a: &SimArgs, seed: Option<u64>, stored: Option<&SimulationOptions>) -> SimulationOptions {
    let base = stored.cloned().unwrap_or_default();
    SimulationOptions {
        n_cycles: a.cycles.unwrap_or(base.n_cycles),
        seed: seed.unwrap_or(base.seed),
        persist: a.persist || base.persist,
        record_packages: false,
        hopper_streams: base.hopper_streams,
    }
}

pub fn run_replications(
    mu: &Setpoints,
    cfg: &MachineConfig,
    p: &CombinationMatrix,
    opts: SimulationOptions,
    reps: usize,
) -> Result<SimulationSummary> {
    if reps == 0 {
        return Err(MwmError::InvalidConfig("--reps must be at least 1".into()).into());
    }
    if opts.n_cycles < 1000 {
        warn!("{} cycles give a rough MSE; use at least 1000", opts.n_cycles);
    }
    let runs = simulator::replicate(mu, cfg, p, &opts, reps)?;
    Ok(SimulationSummary::new(opts, runs))
}

pub fn optimize(a: &OptimizeArgs, seed: Option<u64>) -> Result<()> {
    let cfg = a.machine.resolve()?;
    let p = enumerate_combinations(&cfg)?;
    let opts = solver_options(&a.solver, seed)?;
    info!("K={} combinations, {} starts", p.len(), opts.n_starts);
    let report = mwm::heuristic::optimize(&cfg, &p, &opts)?;
    info!("search took {:.1} s", report.wall_time);
    let simulation = if a.simulate {
        let so = sim_options(&a.sim, seed, None);
        Some(run_replications(&report.mu_star, &cfg, &p, so, a.sim.reps.unwrap_or(10))?)
    } else {
        None
    };
    if a.panel {
        let column = PanelColumn {
            label: format!("H={}", cfg.hoppers),
            mu: report.mu_star.as_slice().to_vec(),
            diag: report.diagnostics,
            sim: simulation.clone(),
        };
        eprint!("{}", panel(&[column]));
    }
    let out = OptimizeOutput { combinations: p.len(), config: cfg, report, simulation };
    write_json(&out, a.out.as_deref())
}

#[derive(Serialize)]
struct SimulateOutput {
    config: MachineConfig,
    mu: Setpoints,
    simulation: SimulationSummary,
}

fn read_report(path: &Path) -> Result<OptimizeOutput> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let out: OptimizeOutput =
        serde_json::from_str(&text).map_err(|e| MwmError::InvalidConfig(format!("{}: {e}", path.display())))?;
    out.config.validate()?;
    Ok(out)
}

pub fn simulate(a: &SimulateArgs, seed: Option<u64>) -> Result<()> {
    let (cfg, mu, stored) = match &a.from_report {
        Some(path) => {
            let r = read_report(path)?;
            (r.config, r.report.mu_star, r.simulation.map(|s| (s.options, s.reps)))
        }
        None => {
            let cfg = a.machine.resolve()?;
            let mu = Setpoints::new(parse_list(a.mu.as_deref().unwrap_or_default())?)?;
            (cfg, mu, None)
        }
    };
    let p = enumerate_combinations(&cfg)?;
    let mut so = sim_options(&a.sim, seed, stored.as_ref().map(|s| &s.0));
    so.record_packages = a.packages.is_some();
    let reps = a.sim.reps.or(stored.as_ref().map(|s| s.1)).unwrap_or(1);
    let mut summary = run_replications(&mu, &cfg, &p, so, reps)?;
    if let Some(path) = &a.packages {
        let weights = summary.runs[0].package_weights.take().unwrap_or_default();
        let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record(["package", "weight"])?;
        for (i, x) in weights.iter().enumerate() {
            w.write_record([i.to_string(), x.to_string()])?;
        }
        w.flush()?;
        for r in &mut summary.runs {
            r.package_weights = None;
        }
        summary.options.record_packages = false;
    }
    write_json(&SimulateOutput { config: cfg, mu, simulation: summary }, a.out.as_deref())
}

pub fn densities(a: &DensitiesArgs, seed: Option<u64>) -> Result<()> {
    let cfg = a.machine.resolve_without_cap()?;
    let p = enumerate_combinations(&cfg)?;
    let mu = Setpoints::new(parse_list(&a.mu)?)?;
    let (theta, sigma) = combination_distribution(&p, &mu, cfg.alpha)?;
    let sd: Vec<f64> = sigma.diagonal().iter().map(|v| v.sqrt()).collect();
    let opts = integration(IntegrationOptions::default().tol, seed)?;
    let e = order_stats::extreme_moments(&theta, &sigma, &opts, MaxMode::Exact)?;
    let grid = GridSpec { points: a.points, lo: a.lo, hi: a.hi };
    let table = simulator::density_table(
        theta.as_slice(),
        &sd,
        order_stats::Moments { mean: e.e_min, variance: e.var_min },
        order_stats::Moments { mean: e.e_max, variance: e.var_max },
        &grid,
    )?;
    write_text(&table.to_csv(), a.out.as_deref())
}
