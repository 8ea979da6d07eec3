use crate::commands::run_replications;
use crate::config::default_fraction;
use crate::output::{panel, write_json, PanelColumn, SimulationSummary};
use crate::TableArgs;
use anyhow::Result;
use log::info;
use mwm::heuristic::{optimize, BoundMode, Problem, SolverOptions};
use mwm::simulator::SimulationOptions;
use mwm::{enumerate_combinations, integral_count, normal, MachineConfig, MwmError, Setpoints};
use serde::Serialize;
use std::collections::BTreeSet;

const TARGET: f64 = 500.0;
const ALPHA: f64 = 0.123;

/// Setups found by direct search for the characterization table.
const SEARCHED: [(usize, &[f64]); 2] = [(4, &[294.9, 276.7, 183.7, 66.6]), (5, &[203.7, 191.0, 178.6, 110.9, 55.7])];

const SMALL: [(usize, usize); 3] = [(4, 2), (4, 3), (5, 2)];

const LARGE: [(usize, usize); 10] =
    [(6, 2), (7, 2), (8, 2), (6, 3), (9, 2), (7, 3), (12, 2), (8, 3), (9, 3), (12, 3)];

fn label(h: usize, shut: usize) -> String {
    format!("{h}({shut})")
}

struct Filter(Option<BTreeSet<String>>);

impl Filter {
    fn new(rows: Option<&str>) -> Filter {
        Filter(rows.map(|r| r.split(',').map(|s| s.split_whitespace().collect::<String>()).filter(|s| !s.is_empty()).collect()))
    }

    fn keep(&self, name: &str) -> bool {
        self.0.as_ref().is_none_or(|set| set.contains(name))
    }
}

fn machine(h: usize, shut: usize, f: f64) -> Result<MachineConfig> {
    Ok(MachineConfig::new(h, TARGET, ALPHA, shut, f)?)
}

pub fn run(a: &TableArgs, seed: Option<u64>) -> Result<()> {
    let filter = Filter::new(a.rows.as_deref());
    if a.reps == 0 {
        return Err(MwmError::InvalidConfig("--reps must be at least 1".into()).into());
    }
    let seed = seed.unwrap_or(0);
    let json = match a.number {
        1 => table1(&filter)?,
        2 => table2(a, &filter, seed)?,
        3 => table3(a, &filter, seed)?,
        4 => table4(a, &filter, seed)?,
        _ => table5(a, &filter, seed)?,
    };
    if let Some(path) = &a.json {
        write_json(&json, Some(path))?;
    }
    Ok(())
}

fn table1(filter: &Filter) -> Result<serde_json::Value> {
    let mut rows = Vec::new();
    println!("{:>3} | {:>12} | {:>3}", "H", "integrals", "K");
    for h in [1u32, 2, 3, 4, 5, 8] {
        if !filter.keep(&h.to_string()) {
            continue;
        }
        let c = integral_count(h)?;
        let shown = match c.exact {
            Some(n) if n < 10_000_000 => n.to_string(),
            _ => format!("{:.4e}", c.approx),
        };
        println!("{h:>3} | {shown:>12} | {:>3}", c.dimension);
        rows.push(serde_json::json!({ "H": h, "count": c }));
    }
    Ok(serde_json::Value::Array(rows))
}

#[derive(Serialize)]
struct SetupRow {
    row: String,
    mu: Setpoints,
    diagnostics: mwm::heuristic::Diagnostics,
    wall_time: Option<f64>,
    simulation: SimulationSummary,
}

fn sim_opts(cycles: usize, seed: u64) -> SimulationOptions {
    SimulationOptions { n_cycles: cycles, seed, ..SimulationOptions::default() }
}

fn print_panel(rows: &[SetupRow]) {
    let cols: Vec<PanelColumn> = rows
        .iter()
        .map(|r| PanelColumn {
            label: r.row.clone(),
            mu: r.mu.as_slice().to_vec(),
            diag: r.diagnostics,
            sim: Some(r.simulation.clone()),
        })
        .collect();
    print!("{}", panel(&cols));
}

fn table2(a: &TableArgs, filter: &Filter, seed: u64) -> Result<serde_json::Value> {
    let mut rows = Vec::new();
    for (h, mu) in SEARCHED {
        let name = label(h, 2);
        if !filter.keep(&name) {
            continue;
        }
        let cfg = machine(h, 2, default_fraction(h).unwrap_or(1.0))?;
        let p = enumerate_combinations(&cfg)?;
        let mu = Setpoints::new(mu.to_vec())?;
        let mut problem = Problem::new(cfg.clone(), p.clone())?.with_bound_mode(BoundMode::Exact);
        problem.integration.seed = seed;
        let diagnostics = problem.diagnostics(mu.as_slice())?;
        let simulation = run_replications(&mu, &cfg, &p, sim_opts(a.cycles.unwrap_or(50_000), seed), a.reps)?;
        rows.push(SetupRow { row: name, mu, diagnostics, wall_time: None, simulation });
    }
    print_panel(&rows);
    Ok(serde_json::to_value(rows)?)
}

fn solve(cfg: &MachineConfig, mode: BoundMode, a: &TableArgs, seed: u64, cycles: usize) -> Result<SetupRow> {
    let p = enumerate_combinations(cfg)?;
    let mut opts = SolverOptions { n_starts: a.starts, bound_mode: mode, rng_seed: seed, ..SolverOptions::default() };
    opts.integration.seed = seed;
    let report = optimize(cfg, &p, &opts)?;
    info!("{}({}) {:?}: {:.1} s", cfg.hoppers, cfg.max_shut, mode, report.wall_time);
    let simulation = run_replications(&report.mu_star, cfg, &p, sim_opts(cycles, seed), a.reps)?;
    Ok(SetupRow {
        row: label(cfg.hoppers, cfg.max_shut),
        mu: report.mu_star,
        diagnostics: report.diagnostics,
        wall_time: Some(report.wall_time),
        simulation,
    })
}

fn table3(a: &TableArgs, filter: &Filter, seed: u64) -> Result<serde_json::Value> {
    let mut rows = Vec::new();
    for h in [4, 5] {
        if !filter.keep(&label(h, 2)) {
            continue;
        }
        let cfg = machine(h, 2, default_fraction(h).unwrap_or(1.0))?;
        rows.push(solve(&cfg, BoundMode::Exact, a, seed, a.cycles.unwrap_or(50_000))?);
    }
    print_panel(&rows);
    Ok(serde_json::to_value(rows)?)
}

fn fmt_mse(s: &SimulationSummary) -> String {
    format!("{:.1} ({:.2})", s.mse_mean, s.mse_sd.unwrap_or(f64::NAN))
}

/// One-sided p-value for "exact gives the lower MSE".
fn exact_better_p(exact: &SimulationSummary, lb: &SimulationSummary) -> f64 {
    let se = |s: &SimulationSummary| s.mse_sd.unwrap_or(0.0).powi(2) / s.reps as f64;
    let pooled = (se(exact) + se(lb)).sqrt();
    if pooled == 0.0 {
        return if exact.mse_mean < lb.mse_mean { 0.0 } else { 1.0 };
    }
    normal::sf((lb.mse_mean - exact.mse_mean) / pooled)
}

#[derive(Serialize)]
struct ComparisonRow {
    row: String,
    k: usize,
    lower_bound: SetupRow,
    exact: SetupRow,
    p_value: f64,
}

fn table4(a: &TableArgs, filter: &Filter, seed: u64) -> Result<serde_json::Value> {
    println!(
        "{:<6} | {:>3} | {:>8} | {:>8} | {:>16} | {:>16} | {:>7}",
        "H", "K", "time LB", "time ex", "MSE exact (sd)", "MSE LB (sd)", "p-value"
    );
    let mut rows = Vec::new();
    for (h, shut) in SMALL {
        let name = label(h, shut);
        if !filter.keep(&name) {
            continue;
        }
        let cfg = machine(h, shut, default_fraction(h).unwrap_or(1.0))?;
        let cycles = a.cycles.unwrap_or(50_000);
        let lb = solve(&cfg, BoundMode::LowerBound, a, seed, cycles)?;
        let ex = solve(&cfg, BoundMode::Exact, a, seed, cycles)?;
        let pv = exact_better_p(&ex.simulation, &lb.simulation);
        println!(
            "{:<6} | {:>3} | {:>8.1} | {:>8.1} | {:>16} | {:>16} | {:>7.4}",
            name,
            cfg.combination_count(),
            lb.wall_time.unwrap_or(f64::NAN),
            ex.wall_time.unwrap_or(f64::NAN),
            fmt_mse(&ex.simulation),
            fmt_mse(&lb.simulation),
            pv
        );
        rows.push(ComparisonRow { row: name, k: cfg.combination_count(), lower_bound: lb, exact: ex, p_value: pv });
    }
    Ok(serde_json::to_value(rows)?)
}

fn table5(a: &TableArgs, filter: &Filter, seed: u64) -> Result<serde_json::Value> {
    println!("{:<6} | {:>3} | {:>7} | {:>8} | {:>7}", "H", "K", "time", "MSE", "sd(MSE)");
    let mut rows = Vec::new();
    for (h, shut) in LARGE {
        let name = label(h, shut);
        if !filter.keep(&name) {
            continue;
        }
        let cfg = machine(h, shut, 0.3)?;
        let k = cfg.combination_count();
        let cycles = a.cycles.unwrap_or(if k <= 50 { 50_000 } else { 10_000 });
        let row = solve(&cfg, BoundMode::LowerBound, a, seed, cycles)?;
        println!(
            "{:<6} | {:>3} | {:>7.1} | {:>8.2} | {:>7.2}",
            name,
            k,
            row.wall_time.unwrap_or(f64::NAN),
            row.simulation.mse_mean,
            row.simulation.mse_sd.unwrap_or(f64::NAN)
        );
        rows.push(row);
    }
    Ok(serde_json::to_value(rows)?)
}
