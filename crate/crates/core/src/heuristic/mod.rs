//! Characterization-based heuristic for choosing setpoints.
//!
//! Good setups spread many combination densities around the target, keep the
//! midrange of the extreme order statistics near `1.1 T`, and make the matrix
//! `M = Sigma + (Theta - T)(Theta - T)'` large in determinant. The heuristic maximizes
//!
//! ```text
//! log det M + p(Theta, T) + c(Theta, T)
//! ```
//!
//! over descending setpoints below `f T` that also satisfy the all-open chance
//! constraint. See [`solver`] for the search itself.

mod nelder_mead;
pub mod solver;

pub use nelder_mead::{nelder_mead, NelderMeadResult};
pub use solver::{optimize, sample_start, SolutionReport, SolverOptions, StartSummary};

use crate::error::{MwmError, Result};
use crate::machine_model::{hopper_loadings, CombinationMatrix, MachineConfig};
use crate::normal;
use crate::order_stats::{self, IntegrationOptions, MaxMode, MomentMethod, NormalLattice};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Ridge added to `Sigma` and `M` before taking determinants. Both matrices have rank
/// at most `H + 1 < K`, so the unregularized determinant is zero.
pub const DEFAULT_RIDGE: f64 = 1e-5;

/// Which value of `E[X_[1]]` enters the midrange constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoundMode {
    /// Exact moments for both extremes.
    Exact,
    /// Closed-form lower bound for the minimum and `max_i Theta_i` for the maximum.
    #[default]
    LowerBound,
}

/// Direction of the midrange constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MidrangeSense {
    /// `(E[X_[1]] + E[X_[K]]) / 2 <= 1.1 T`.
    #[default]
    Cap,
    /// `(E[X_[1]] + E[X_[K]]) / 2 >= 1.1 T`.
    Floor,
}

/// How exact extreme means are integrated inside the search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExactMethod {
    /// Partial-moment recursion over rectangle probabilities.
    Recursion,
    /// Randomized lattice over the hopper weights with fixed points.
    #[default]
    Lattice,
}

/// Multipliers on the three objective terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub log_det: f64,
    pub p: f64,
    pub c: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        ObjectiveWeights { log_det: 1.0, p: 1.0, c: 1.0 }
    }
}

/// The quantities used to characterize a setup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `(E[X_[1]] + E[X_[K]]) / 2`; absent when only the objective was evaluated.
    pub extreme_avg: Option<f64>,
    pub extreme_method: Option<MomentMethod>,
    pub theta_bar: f64,
    pub neg_log_det_sigma: f64,
    pub p_value: f64,
    pub c_count: usize,
    pub neg_log_det_m: f64,
}

/// Distinct combination means after rounding each down to a multiple of `0.04 T`, ascending.
pub fn unique_locations(theta: &[f64], target: f64) -> Vec<f64> {
    let bin = 0.04 * target;
    let mut u: Vec<f64> = theta.iter().map(|t| t - t.rem_euclid(bin)).collect();
    u.sort_by(f64::total_cmp);
    u.dedup();
    u
}

/// Number of distinct locations strictly inside `(0.8 T, 1.2 T)`.
pub fn c_count(theta: &[f64], target: f64) -> usize {
    unique_locations(theta, target)
        .into_iter()
        .filter(|&u| u > 0.8 * target && u < 1.2 * target)
        .count()
}

/// Expected number of combinations landing in `(T, 1.2 T)`, from the marginal normals.
pub fn p_value(theta: &[f64], sd: &[f64], target: f64) -> f64 {
    theta
        .iter()
        .zip(sd)
        .map(|(&t, &s)| normal::interval_prob((target - t) / s, (1.2 * target - t) / s))
        .sum()
}

/// `log det(G G' + ridge I)` for a tall `K x r` factor `G`.
///
/// With `ridge > 0` this uses `K ln ridge + log det(I + G'G / ridge)`, which costs
/// `O(K r^2)`. With `ridge == 0` the `K x K` product is factored directly and a
/// failed factorization gives `-inf`.
pub fn ridge_log_det(g: &DMatrix<f64>, ridge: f64) -> f64 {
    let k = g.nrows();
    if ridge > 0.0 {
        let mut small = g.transpose() * g / ridge;
        for i in 0..small.nrows() {
            small[(i, i)] += 1.0;
        }
        match order_stats::log_det_spd(&small) {
            Some(v) => k as f64 * ridge.ln() + v,
            None => f64::NEG_INFINITY,
        }
    } else {
        order_stats::log_det_spd(&(g * g.transpose())).unwrap_or(f64::NEG_INFINITY)
    }
}

/// Constraint residuals; each is non-negative when satisfied.
pub type Residuals = [f64; 4];

/// A machine, its combinations and the settings of the heuristic.
#[derive(Debug, Clone)]
pub struct Problem {
    pub config: MachineConfig,
    pub matrix: CombinationMatrix,
    pub bound_mode: BoundMode,
    pub sense: MidrangeSense,
    pub weights: ObjectiveWeights,
    pub ridge: f64,
    pub integration: IntegrationOptions,
    /// Used for exact extreme means when present; otherwise the recursion is used.
    pub lattice: Option<Arc<NormalLattice>>,
}

/// Everything one evaluation of the heuristic produces.
#[derive(Debug, Clone, Copy)]
pub struct Evaluation {
    pub objective: f64,
    pub log_det_m: f64,
    pub p: f64,
    pub c: usize,
    pub residuals: Residuals,
    pub extreme_avg: f64,
}

impl Problem {
    pub fn new(config: MachineConfig, matrix: CombinationMatrix) -> Result<Problem> {
        config.validate()?;
        if matrix.hoppers() != config.hoppers {
            return Err(MwmError::DimensionMismatch(format!(
                "{}-hopper combinations for a {}-hopper machine",
                matrix.hoppers(),
                config.hoppers
            )));
        }
        Ok(Problem {
            config,
            matrix,
            bound_mode: BoundMode::default(),
            sense: MidrangeSense::default(),
            weights: ObjectiveWeights::default(),
            ridge: DEFAULT_RIDGE,
            integration: IntegrationOptions::default(),
            lattice: None,
        })
    }

    /// Integrates exact extreme means on a fixed lattice of `points` nodes per shift.
    pub fn with_lattice(mut self, points: usize, shifts: usize, seed: u64) -> Result<Self> {
        self.lattice = Some(Arc::new(NormalLattice::new(self.config.hoppers, points, shifts, seed)?));
        Ok(self)
    }

    pub fn with_bound_mode(mut self, mode: BoundMode) -> Self {
        self.bound_mode = mode;
        self
    }

    pub fn with_sense(mut self, sense: MidrangeSense) -> Self {
        self.sense = sense;
        self
    }

    fn check_len(&self, mu: &[f64]) -> Result<()> {
        if mu.len() != self.config.hoppers {
            return Err(MwmError::DimensionMismatch(format!(
                "{} setpoints for {} hoppers",
                mu.len(),
                self.config.hoppers
            )));
        }
        Ok(())
    }

    fn theta(&self, mu: &[f64]) -> Vec<f64> {
        (0..self.matrix.len()).map(|i| self.matrix.row_dot(i, mu)).collect()
    }

    fn loadings(&self, mu: &[f64]) -> DMatrix<f64> {
        let sd: Vec<f64> = mu.iter().map(|m| self.config.alpha * m).collect();
        hopper_loadings(&self.matrix, &sd)
    }

    /// `[F, Theta - T]` with `F = P diag(alpha mu)`, so that `M = G G'`.
    fn m_factor(&self, loadings: &DMatrix<f64>, theta: &[f64]) -> DMatrix<f64> {
        let (k, h) = loadings.shape();
        let mut g = loadings.clone().resize_horizontally(h + 1, 0.0);
        for i in 0..k {
            g[(i, h)] = theta[i] - self.config.target;
        }
        g
    }

    /// Objective value and its terms. Setpoints that are not all positive give `-inf`.
    pub fn objective(&self, mu: &[f64]) -> Result<(f64, Diagnostics)> {
        self.check_len(mu)?;
        let theta = self.theta(mu);
        let loadings = self.loadings(mu);
        let sd = row_norms(&loadings);
        let t = self.config.target;
        let ld_sigma = ridge_log_det(&loadings, self.ridge);
        let ld_m = ridge_log_det(&self.m_factor(&loadings, &theta), self.ridge);
        let p = p_value(&theta, &sd, t);
        let c = c_count(&theta, t);
        let w = &self.weights;
        let mut value = w.log_det * ld_m + w.p * p + w.c * c as f64;
        if mu.iter().any(|m| !(*m > 0.0)) || value.is_nan() {
            value = f64::NEG_INFINITY;
        }
        let diag = Diagnostics {
            extreme_avg: None,
            extreme_method: None,
            theta_bar: theta.iter().sum::<f64>() / theta.len() as f64,
            neg_log_det_sigma: -ld_sigma,
            p_value: p,
            c_count: c,
            neg_log_det_m: -ld_m,
        };
        Ok((value, diag))
    }

    /// Midrange of the extremes as used by the constraint in the current bound mode.
    pub fn extreme_avg(&self, mu: &[f64]) -> Result<f64> {
        self.check_len(mu)?;
        let theta = self.theta(mu);
        let loadings = self.loadings(mu);
        self.extreme_avg_inner(&theta, &loadings)
    }

    fn extreme_avg_inner(&self, theta: &[f64], loadings: &DMatrix<f64>) -> Result<f64> {
        let theta_max = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        match self.bound_mode {
            BoundMode::LowerBound => {
                if theta.len() == 1 {
                    return Ok(theta[0]);
                }
                let lb = order_stats::lb_min_expectation(theta, &row_norms(loadings))?;
                Ok(0.5 * (lb + theta_max))
            }
            BoundMode::Exact => {
                let th = DVector::from_column_slice(theta);
                if let Some(lattice) = &self.lattice {
                    let (lo, hi) = lattice.extreme_means(&th, loadings)?;
                    return Ok(0.5 * (lo.value + hi.value));
                }
                let e = order_stats::extreme_moments_factored(&th, loadings, &self.integration, MaxMode::Exact)?;
                Ok(e.extreme_avg())
            }
        }
    }

    /// Residuals `[midrange, ordering, box, chance]`, non-negative when satisfied.
    ///
    /// The midrange residual is `1.1 T - avg` under [`MidrangeSense::Cap`] and
    /// `avg - 1.1 T` under [`MidrangeSense::Floor`].
    pub fn constraints(&self, mu: &[f64]) -> Result<Residuals> {
        Ok(self.evaluate(mu)?.residuals)
    }

    /// Objective and residuals in one pass.
    pub fn evaluate(&self, mu: &[f64]) -> Result<Evaluation> {
        self.check_len(mu)?;
        let (objective, diag) = self.objective(mu)?;
        let positive = mu.iter().all(|m| *m > 0.0);
        let theta = self.theta(mu);
        let loadings = self.loadings(mu);
        let avg = if positive { self.extreme_avg_inner(&theta, &loadings)? } else { f64::NAN };
        let cfg = &self.config;
        let gap = avg - 1.1 * cfg.target;
        let midrange = match self.sense {
            MidrangeSense::Cap => -gap,
            MidrangeSense::Floor => gap,
        };
        let ordering = mu.windows(2).map(|w| w[0] - w[1]).fold(f64::INFINITY, f64::min);
        let lo = mu.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = mu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let bounds = lo.min(cfg.f * cfg.target - hi);
        Ok(Evaluation {
            objective,
            log_det_m: -diag.neg_log_det_m,
            p: diag.p_value,
            c: diag.c_count,
            residuals: [midrange, ordering, bounds, chance_residual(mu, cfg)],
            extreme_avg: avg,
        })
    }

    /// Full diagnostic panel, including the midrange of the extremes. Exact mode
    /// always uses the recursion here.
    pub fn diagnostics(&self, mu: &[f64]) -> Result<Diagnostics> {
        let (_, mut diag) = self.objective(mu)?;
        let plain = Problem { lattice: None, ..self.clone() };
        diag.extreme_avg = Some(plain.extreme_avg(mu)?);
        diag.extreme_method = Some(match self.bound_mode {
            BoundMode::Exact => MomentMethod::Exact,
            BoundMode::LowerBound => MomentMethod::LowerBound,
        });
        Ok(diag)
    }
}

fn row_norms(m: &DMatrix<f64>) -> Vec<f64> {
    m.row_iter().map(|r| r.norm()).collect()
}

/// `||mu||_1 + alpha ||mu||_2 Phi^-1(epsilon) - T`: the all-open combination falls
/// short of the target with probability at most `epsilon` when this is non-negative.
pub fn chance_residual(mu: &[f64], config: &MachineConfig) -> f64 {
    let l1: f64 = mu.iter().map(|m| m.abs()).sum();
    let l2 = mu.iter().map(|m| m * m).sum::<f64>().sqrt();
    l1 + config.alpha * l2 * normal::quantile(config.epsilon) - config.target
}

/// Objective value and terms for `mu`; see [`Problem::objective`].
pub fn objective(mu: &[f64], config: &MachineConfig, matrix: &CombinationMatrix) -> Result<(f64, Diagnostics)> {
    Problem::new(config.clone(), matrix.clone())?.objective(mu)
}

/// Constraint residuals for `mu` under the given bound mode and the default sense.
pub fn constraints(
    mu: &[f64],
    config: &MachineConfig,
    matrix: &CombinationMatrix,
    bound_mode: BoundMode,
) -> Result<Residuals> {
    Problem::new(config.clone(), matrix.clone())?.with_bound_mode(bound_mode).constraints(mu)
}
