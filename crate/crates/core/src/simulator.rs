//! Monte Carlo emulation of weighing cycles.
//!
//! Every cycle the machine observes the combination weights `x = P w`, opens the
//! lightest combination heavier than the target and refills the hoppers it opened.
//! Cycles with no combination above the target are counted as underweight; the
//! heaviest combination is discharged and its package left out of the statistics.

use crate::error::{MwmError, Result};
use crate::machine_model::{CombinationMatrix, MachineConfig, Setpoints};
use crate::order_stats::Moments;
use crate::normal;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Index of the lightest entry strictly above `target`, lowest index on ties.
pub fn knapsack_select(x: &[f64], target: f64) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in x.iter().enumerate() {
        if v > target && best.is_none_or(|b| v < x[b]) {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationOptions {
    pub n_cycles: usize,
    pub seed: u64,
    /// Keep the contents of shut hoppers from one cycle to the next. When false every
    /// hopper is refilled each cycle.
    pub persist: bool,
    /// Keep every delivered package weight in the result.
    pub record_packages: bool,
    /// Random stream used by each hopper; defaults to the hopper index.
    pub hopper_streams: Option<Vec<u64>>,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions { n_cycles: 50_000, seed: 0, persist: false, record_packages: false, hopper_streams: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub n_cycles: usize,
    /// Cycles that delivered a package above the target.
    pub packages: usize,
    pub mean_w: f64,
    pub var_w: f64,
    pub mse: f64,
    pub underweight_rate: f64,
    pub giveaway_mean: f64,
    /// Hopper draws that came out non-positive and were redrawn.
    pub negative_redraws: u64,
    pub seed: u64,
    pub persist: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub package_weights: Option<Vec<f64>>,
}

/// Single-pass mean and variance.
#[derive(Debug, Clone, Copy, Default)]
struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn variance(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.m2 / self.n as f64
        }
    }
}

struct Hopper {
    mean: f64,
    sd: f64,
    rng: ChaCha8Rng,
}

impl Hopper {
    fn draw(&mut self, redraws: &mut u64) -> f64 {
        loop {
            let z: f64 = self.rng.sample(StandardNormal);
            let w = self.mean + self.sd * z;
            if w > 0.0 {
                return w;
            }
            *redraws += 1;
        }
    }
}

/// Simulates `n_cycles` cycles with fresh fills every cycle.
pub fn run_simulation(
    mu: &Setpoints,
    config: &MachineConfig,
    matrix: &CombinationMatrix,
    n_cycles: usize,
    seed: u64,
) -> Result<SimulationResult> {
    simulate(mu, config, matrix, &SimulationOptions { n_cycles, seed, ..SimulationOptions::default() })
}

pub fn simulate(
    mu: &Setpoints,
    config: &MachineConfig,
    matrix: &CombinationMatrix,
    opts: &SimulationOptions,
) -> Result<SimulationResult> {
    let h = matrix.hoppers();
    if mu.len() != h || config.hoppers != h {
        return Err(MwmError::DimensionMismatch(format!(
            "{} setpoints, {}-hopper machine, {}-hopper combinations",
            mu.len(),
            config.hoppers,
            h
        )));
    }
    if opts.n_cycles == 0 {
        return Err(MwmError::InvalidConfig("need at least one cycle".into()));
    }
    let streams: Vec<u64> = match &opts.hopper_streams {
        Some(s) if s.len() == h => s.clone(),
        Some(s) => return Err(MwmError::DimensionMismatch(format!("{} hopper streams for {h} hoppers", s.len()))),
        None => (0..h as u64).collect(),
    };
    let mut hoppers: Vec<Hopper> = mu
        .as_slice()
        .iter()
        .zip(&streams)
        .map(|(&m, &s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(s);
            Hopper { mean: m, sd: config.alpha * m, rng }
        })
        .collect();

    let target = config.target;
    let k = matrix.len();
    let opened: Vec<Vec<usize>> = (0..k).map(|i| matrix.opened(i).collect()).collect();
    let mut redraws = 0u64;
    let mut w: Vec<f64> = hoppers.iter_mut().map(|hp| hp.draw(&mut redraws)).collect();
    let mut x = vec![0.0; k];
    let mut stats = Welford::default();
    let mut underweight = 0usize;
    let mut packages = opts.record_packages.then(Vec::new);

    for cycle in 0..opts.n_cycles {
        if cycle > 0 && !opts.persist {
            for (wj, hp) in w.iter_mut().zip(hoppers.iter_mut()) {
                *wj = hp.draw(&mut redraws);
            }
        }
        for (xi, rows) in x.iter_mut().zip(&opened) {
            *xi = rows.iter().map(|&j| w[j]).sum();
        }
        let chosen = match knapsack_select(&x, target) {
            Some(i) => {
                assert!(x[i] > target);
                stats.push(x[i]);
                if let Some(p) = packages.as_mut() {
                    p.push(x[i]);
                }
                i
            }
            None => {
                underweight += 1;
                (0..k).max_by(|&a, &b| x[a].total_cmp(&x[b]).then(b.cmp(&a))).unwrap_or(0)
            }
        };
        if opts.persist {
            for &j in &opened[chosen] {
                w[j] = hoppers[j].draw(&mut redraws);
            }
        }
    }

    let mean_w = stats.mean;
    let var_w = stats.variance();
    Ok(SimulationResult {
        n_cycles: opts.n_cycles,
        packages: stats.n as usize,
        mean_w,
        var_w,
        mse: var_w + (mean_w - target).powi(2),
        underweight_rate: underweight as f64 / opts.n_cycles as f64,
        giveaway_mean: mean_w - target,
        negative_redraws: redraws,
        seed: opts.seed,
        persist: opts.persist,
        package_weights: packages,
    })
}

/// Independent runs with seeds `seed, seed + 1, ...`, in parallel.
pub fn replicate(
    mu: &Setpoints,
    config: &MachineConfig,
    matrix: &CombinationMatrix,
    opts: &SimulationOptions,
    reps: usize,
) -> Result<Vec<SimulationResult>> {
    (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let o = SimulationOptions { seed: opts.seed.wrapping_add(r), ..opts.clone() };
            simulate(mu, config, matrix, &o)
        })
        .collect()
}

/// Mean and sample standard deviation of the MSE over replications.
pub fn mse_summary(runs: &[SimulationResult]) -> (f64, f64) {
    let n = runs.len() as f64;
    let mean = runs.iter().map(|r| r.mse).sum::<f64>() / n;
    if runs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = runs.iter().map(|r| (r.mse - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Evaluation grid for [`density_table`]. Missing limits cover every mean +- 4 sd.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points: usize,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { points: 801, lo: None, hi: None }
    }
}

/// Normal densities of every combination weight plus normal stand-ins for the extremes.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityTable {
    pub x: Vec<f64>,
    pub headers: Vec<String>,
    /// One column per header, each as long as `x`.
    pub columns: Vec<Vec<f64>>,
}

impl DensityTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x");
        for h in &self.headers {
            out.push(',');
            out.push_str(h);
        }
        out.push('\n');
        for (r, x) in self.x.iter().enumerate() {
            out.push_str(&format!("{x}"));
            for c in &self.columns {
                out.push_str(&format!(",{:e}", c[r]));
            }
            out.push('\n');
        }
        out
    }
}

fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    normal::pdf((x - mean) / sd) / sd
}

pub fn density_table(theta: &[f64], sd: &[f64], min: Moments, max: Moments, grid: &GridSpec) -> Result<DensityTable> {
    if theta.len() != sd.len() || theta.is_empty() {
        return Err(MwmError::DimensionMismatch(format!("{} means, {} deviations", theta.len(), sd.len())));
    }
    if grid.points < 2 {
        return Err(MwmError::InvalidConfig("a grid needs at least two points".into()));
    }
    if sd.iter().any(|s| !(*s > 0.0)) || !(min.variance > 0.0 && max.variance > 0.0) {
        return Err(MwmError::InvalidConfig("densities need positive variances".into()));
    }
    let lo = grid.lo.unwrap_or_else(|| theta.iter().zip(sd).map(|(t, s)| t - 4.0 * s).fold(f64::INFINITY, f64::min));
    let hi = grid.hi.unwrap_or_else(|| theta.iter().zip(sd).map(|(t, s)| t + 4.0 * s).fold(f64::NEG_INFINITY, f64::max));
    if !(hi > lo) {
        return Err(MwmError::InvalidConfig(format!("empty grid [{lo}, {hi}]")));
    }
    let step = (hi - lo) / (grid.points - 1) as f64;
    let x: Vec<f64> = (0..grid.points).map(|i| lo + step * i as f64).collect();
    let mut headers: Vec<String> = (1..=theta.len()).map(|i| format!("X{i}")).collect();
    let mut columns: Vec<Vec<f64>> = theta
        .iter()
        .zip(sd)
        .map(|(&t, &s)| x.iter().map(|&v| normal_pdf(v, t, s)).collect())
        .collect();
    for (name, m) in [("min", min), ("max", max)] {
        headers.push(name.to_string());
        let s = m.variance.sqrt();
        columns.push(x.iter().map(|&v| normal_pdf(v, m.mean, s)).collect());
    }
    Ok(DensityTable { x, headers, columns })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine_model::enumerate_combinations;

    fn setup(mu: &[f64], max_shut: usize) -> (Setpoints, MachineConfig, CombinationMatrix) {
        let cfg = MachineConfig::new(mu.len(), 500.0, 0.123, max_shut, 0.6).unwrap();
        let p = enumerate_combinations(&cfg).unwrap();
        (Setpoints::new(mu.to_vec()).unwrap(), cfg, p)
    }

    #[test]
    fn knapsack_examples() {
        assert_eq!(knapsack_select(&[510.0, 505.0, 490.0], 500.0), Some(1));
        assert_eq!(knapsack_select(&[490.0, 480.0], 500.0), None);
        assert_eq!(knapsack_select(&[500.0, 501.0], 500.0), Some(1));
        assert_eq!(knapsack_select(&[503.0, 502.0, 502.0], 500.0), Some(1));
    }

    #[test]
    fn knapsack_beats_every_feasible_entry() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let x: Vec<f64> = (0..15).map(|_| rng.random_range(400.0..600.0)).collect();
            match knapsack_select(&x, 500.0) {
                Some(i) => assert!(x.iter().all(|&v| v <= 500.0 || v >= x[i])),
                None => assert!(x.iter().all(|&v| v <= 500.0)),
            }
        }
    }

    #[test]
    fn mse_identity_and_determinism() {
        let (mu, cfg, p) = setup(&[294.9, 276.7, 183.7, 66.6], 2);
        let a = run_simulation(&mu, &cfg, &p, 5000, 42).unwrap();
        let b = run_simulation(&mu, &cfg, &p, 5000, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mse, a.var_w + (a.mean_w - 500.0).powi(2));
        assert!(a.mean_w > 500.0);
    }

    #[test]
    fn recorded_packages_exceed_target() {
        let (mu, cfg, p) = setup(&[203.7, 191.0, 178.6, 110.9, 55.7], 2);
        for persist in [false, true] {
            let o = SimulationOptions { n_cycles: 3000, seed: 1, persist, record_packages: true, hopper_streams: None };
            let r = simulate(&mu, &cfg, &p, &o).unwrap();
            let w = r.package_weights.unwrap();
            assert_eq!(w.len(), r.packages);
            assert!(w.iter().all(|&v| v > 500.0));
        }
    }

    #[test]
    fn all_open_single_combination_moments() {
        let mu = [200.0, 180.0, 160.0, 150.0];
        let cfg = MachineConfig::new(4, 100.0, 0.123, 1, 0.6).unwrap();
        let p = CombinationMatrix::from_rows(4, vec![vec![true; 4]]).unwrap();
        let r = run_simulation(&Setpoints::new(mu.to_vec()).unwrap(), &cfg, &p, 20_000, 3).unwrap();
        let mean: f64 = mu.iter().sum();
        let var: f64 = mu.iter().map(|m| (0.123 * m).powi(2)).sum();
        let se = (var / 20_000.0).sqrt();
        assert!((r.mean_w - mean).abs() < 3.0 * se, "{} vs {mean}", r.mean_w);
        // sd of the sample variance of a normal is about var sqrt(2 / n)
        assert!((r.var_w - var).abs() < 3.0 * var * (2.0f64 / 20_000.0).sqrt());
        assert_eq!(r.underweight_rate, 0.0);
    }

    #[test]
    fn underweight_cycles_are_excluded() {
        // total mean 400 < 500: almost every cycle is underweight
        let (mu, cfg, p) = setup(&[100.0; 4], 2);
        let r = run_simulation(&mu, &cfg, &p, 1000, 5).unwrap();
        assert!(r.underweight_rate > 0.99);
        assert_eq!(r.packages, 1000 - (r.underweight_rate * 1000.0).round() as usize);
    }

    #[test]
    fn relabeled_hoppers_give_same_packages() {
        let (mu, cfg, p) = setup(&[294.9, 276.7, 183.7, 66.6], 2);
        let perm = [2, 0, 3, 1];
        for persist in [false, true] {
            let base = SimulationOptions { n_cycles: 2000, seed: 8, persist, record_packages: true, hopper_streams: None };
            let a = simulate(&mu, &cfg, &p, &base).unwrap();
            let o = SimulationOptions { hopper_streams: Some(perm.iter().map(|&j| j as u64).collect()), ..base };
            let b = simulate(&mu.permuted(&perm), &cfg, &p.permute_hoppers(&perm), &o).unwrap();
            let (wa, wb) = (a.package_weights.unwrap(), b.package_weights.unwrap());
            assert_eq!(wa.len(), wb.len());
            assert!(wa.iter().zip(&wb).all(|(x, y)| (x - y).abs() < 1e-9));
        }
    }

    #[test]
    fn replications_use_consecutive_seeds() {
        let (mu, cfg, p) = setup(&[294.9, 276.7, 183.7, 66.6], 2);
        let o = SimulationOptions { n_cycles: 500, seed: 10, ..SimulationOptions::default() };
        let runs = replicate(&mu, &cfg, &p, &o, 3).unwrap();
        assert_eq!(runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![10, 11, 12]);
        assert_eq!(runs[1], run_simulation(&mu, &cfg, &p, 500, 11).unwrap());
        let (m, s) = mse_summary(&runs);
        assert!(m > 0.0 && s > 0.0);
    }

    #[test]
    fn density_columns_integrate_to_one() {
        let theta = [480.0, 500.0, 530.0];
        let sd = [20.0, 25.0, 30.0];
        let lo = Moments { mean: 470.0, variance: 300.0 };
        let hi = Moments { mean: 540.0, variance: 500.0 };
        let t = density_table(&theta, &sd, lo, hi, &GridSpec { points: 2001, lo: Some(300.0), hi: Some(700.0) }).unwrap();
        assert_eq!(t.headers.len(), 5);
        let dx = t.x[1] - t.x[0];
        for c in &t.columns {
            let area: f64 = c.windows(2).map(|w| 0.5 * (w[0] + w[1]) * dx).sum();
            assert!((area - 1.0).abs() < 1e-3, "{area}");
        }
        let csv = t.to_csv();
        assert!(csv.starts_with("x,X1,X2,X3,min,max\n"));
        assert_eq!(csv.lines().count(), 2002);
    }
}
