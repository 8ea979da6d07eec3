use anyhow::{Context, Result};
use mwm::heuristic::{Diagnostics, SolutionReport};
use mwm::simulator::{SimulationOptions, SimulationResult};
use mwm::MachineConfig;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Replicated simulation of one setup.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub options: SimulationOptions,
    pub reps: usize,
    pub mse_mean: f64,
    /// Sample standard deviation across replications; absent for a single run.
    pub mse_sd: Option<f64>,
    pub runs: Vec<SimulationResult>,
}

impl SimulationSummary {
    pub fn new(options: SimulationOptions, runs: Vec<SimulationResult>) -> Self {
        let (mean, sd) = mwm::simulator::mse_summary(&runs);
        SimulationSummary { options, reps: runs.len(), mse_mean: mean, mse_sd: sd.is_finite().then_some(sd), runs }
    }

    fn average(&self, f: impl Fn(&SimulationResult) -> f64) -> f64 {
        self.runs.iter().map(f).sum::<f64>() / self.runs.len() as f64
    }

    pub fn mean_w(&self) -> f64 {
        self.average(|r| r.mean_w)
    }

    pub fn var_w(&self) -> f64 {
        self.average(|r| r.var_w)
    }
}

/// What `optimize` writes; `simulate --from-report` reads it back.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizeOutput {
    pub config: MachineConfig,
    pub combinations: usize,
    pub report: SolutionReport,
    pub simulation: Option<SimulationSummary>,
}

pub fn write_text(text: &str, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

pub fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(&text, path)
}

/// One column of the diagnostic panel.
pub struct PanelColumn {
    pub label: String,
    pub mu: Vec<f64>,
    pub diag: Diagnostics,
    pub sim: Option<SimulationSummary>,
}

fn fmt_mu(mu: &[f64]) -> String {
    let parts: Vec<String> = mu.iter().map(|m| format!("{m:.1}")).collect();
    format!("({})", parts.join(", "))
}

/// Property-by-column layout: setpoints, characterization, then simulated package statistics.
pub fn panel(columns: &[PanelColumn]) -> String {
    let mut rows: Vec<(String, Vec<String>)> = vec![
        ("Property".into(), columns.iter().map(|c| c.label.clone()).collect()),
        ("mu*".into(), columns.iter().map(|c| fmt_mu(&c.mu)).collect()),
        (
            "(E[X_[1]]+E[X_[K]])/2".into(),
            columns.iter().map(|c| c.diag.extreme_avg.map_or("-".into(), |v| format!("{v:.1}"))).collect(),
        ),
        ("mean Theta".into(), columns.iter().map(|c| format!("{:.1}", c.diag.theta_bar)).collect()),
        ("-log det Sigma".into(), columns.iter().map(|c| format!("{:.2}", c.diag.neg_log_det_sigma)).collect()),
        ("p".into(), columns.iter().map(|c| format!("{:.2}", c.diag.p_value)).collect()),
        ("c".into(), columns.iter().map(|c| c.diag.c_count.to_string()).collect()),
        ("-log det M".into(), columns.iter().map(|c| format!("{:.2}", c.diag.neg_log_det_m)).collect()),
    ];
    let split = rows.len();
    if columns.iter().any(|c| c.sim.is_some()) {
        let sim = |f: &dyn Fn(&SimulationSummary) -> f64| -> Vec<String> {
            columns.iter().map(|c| c.sim.as_ref().map_or("-".into(), |s| format!("{:.1}", f(s)))).collect()
        };
        rows.push(("E(W|W>T)".into(), sim(&|s| s.mean_w())));
        rows.push(("Var(W|W>T)".into(), sim(&|s| s.var_w())));
        rows.push(("MSE(W|W>T)".into(), sim(&|s| s.mse_mean)));
    }
    let w0 = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    let widths: Vec<usize> =
        (0..columns.len()).map(|j| rows.iter().map(|r| r.1[j].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (i, (name, cells)) in rows.iter().enumerate() {
        if i == 1 || (i == split && rows.len() > split) {
            let total = w0 + widths.iter().map(|w| w + 3).sum::<usize>();
            let _ = writeln!(out, "{}", "-".repeat(total));
        }
        let _ = write!(out, "{name:<w0$}");
        for (cell, w) in cells.iter().zip(&widths) {
            let _ = write!(out, " | {cell:>w$}");
        }
        out.push('\n');
    }
    out
}
