//! Moments of the smallest and largest of `K` correlated normal variables.
//!
//! For `X ~ N(theta, Sigma)` the minimum equals `X_i` on `A_i = {X_i <= X_j for all j}`.
//! Standardizing `X_i` and the differences `X_i - X_j` turns each `A_i` into an upper
//! rectangle with bounds `b_ij = (theta_j - theta_i) / sd(X_i - X_j)` and an unbounded
//! own coordinate, so
//!
//! ```text
//! E[min X]   = sum_i theta_i m0_i + sigma_i m1_i
//! E[min X^2] = sum_i sigma_i^2 m2_i + 2 theta_i sigma_i m1_i + theta_i^2 m0_i
//! ```
//!
//! with `m_r` the partial moments computed in [`truncated`].

mod bound;
mod factor;
mod lattice;
pub mod mvn;
mod truncated;

pub use bound::lb_min_expectation;
pub use factor::{check_correlation, log_det_spd, pivoted_cholesky};
pub use lattice::NormalLattice;

use crate::error::{MwmError, Result};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use truncated::{Constraint, Evaluator, Node};

/// Quasi-Monte Carlo settings for rectangle probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrationOptions {
    /// Target absolute error (99% half-width) on each probability.
    pub tol: f64,
    /// Base seed for the lattice shifts.
    pub seed: u64,
    /// Independent random shifts of the lattice.
    pub shifts: usize,
    pub min_points: usize,
    /// Points per shift before giving up on `tol`.
    pub max_points: usize,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        IntegrationOptions { tol: 1e-4, seed: 0x5eed, shifts: 10, min_points: 64, max_points: 1 << 15 }
    }
}

impl IntegrationOptions {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol <= 0.01) {
            return Err(MwmError::InvalidConfig(format!("integration tol {} outside (0, 0.01]", self.tol)));
        }
        if self.shifts < 2 {
            return Err(MwmError::InvalidConfig("need at least two lattice shifts".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentMethod {
    Exact,
    LowerBound,
    MonteCarlo,
    /// `max_i theta_i` standing in for the expected maximum.
    ArgmaxApprox,
}

/// Mean and variance of one extreme order statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
}

/// First two moments of both extremes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtremeMoments {
    pub e_min: f64,
    pub var_min: f64,
    pub e_max: f64,
    pub var_max: f64,
    pub method: MomentMethod,
}

impl ExtremeMoments {
    pub fn extreme_avg(&self) -> f64 {
        0.5 * (self.e_min + self.e_max)
    }
}

/// How the expected maximum is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaxMode {
    #[default]
    Exact,
    ArgmaxApprox,
}

/// `P(Z <= b)` for `Z ~ N(0, R)`; `+inf` bounds are allowed.
pub fn mvn_rectangle_prob(b: &[f64], r: &DMatrix<f64>, opts: &IntegrationOptions) -> Result<f64> {
    opts.validate()?;
    check_correlation(r)?;
    if b.len() != r.nrows() {
        return Err(MwmError::DimensionMismatch(format!("{} bounds for a {}x{} matrix", b.len(), r.nrows(), r.ncols())));
    }
    let l = pivoted_cholesky(r)?;
    let rows: Vec<Vec<f64>> = (0..l.nrows()).map(|i| l.row(i).iter().copied().collect()).collect();
    let refs: Vec<&[f64]> = rows.iter().map(|v| v.as_slice()).collect();
    Ok(mvn::rectangle_prob(&refs, b, opts, opts.seed)?.value)
}

/// Unnormalized partial moment `E[Z_1^r ; Z <= b]` for `Z ~ N(0, R)` and `r` in `{0, 1, 2}`.
///
/// The first coordinate plays the role of the own variable; its bound may be `+inf`.
pub fn truncated_moment(r: u8, b: &[f64], corr: &DMatrix<f64>, opts: &IntegrationOptions) -> Result<f64> {
    opts.validate()?;
    if r > 2 {
        return Err(MwmError::Unsupported(format!("moment order {r}")));
    }
    check_correlation(corr)?;
    if b.is_empty() || b.len() != corr.nrows() {
        return Err(MwmError::DimensionMismatch(format!("{} bounds for a {}x{} matrix", b.len(), corr.nrows(), corr.ncols())));
    }
    let l = pivoted_cholesky(corr)?;
    let row = |i: usize| -> Vec<f64> { l.row(i).iter().copied().collect() };
    let others = (1..b.len())
        .map(|i| Constraint { id: i, dir: row(i), bound: b[i] })
        .collect();
    let node = Node::new(&row(0), b[0], others);
    Evaluator::new(opts, opts.seed).moment(r, &node)
}

fn check_inputs(theta: &DVector<f64>, k_rows: usize) -> Result<()> {
    if theta.is_empty() {
        return Err(MwmError::DimensionMismatch("no variables".into()));
    }
    if theta.len() != k_rows {
        return Err(MwmError::DimensionMismatch(format!("{} means for {} rows", theta.len(), k_rows)));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(MwmError::Numerical("non-finite mean".into()));
    }
    Ok(())
}

/// Moments of `min X` for `X ~ N(theta, sigma)`.
pub fn min_moments(theta: &DVector<f64>, sigma: &DMatrix<f64>, opts: &IntegrationOptions) -> Result<Moments> {
    check_inputs(theta, sigma.nrows())?;
    if sigma.ncols() != sigma.nrows() {
        return Err(MwmError::DimensionMismatch("covariance is not square".into()));
    }
    if let Some(i) = (0..theta.len()).find(|&i| !(sigma[(i, i)] > 0.0)) {
        return Err(MwmError::InvalidConfig(format!("variance of variable {i} is not positive")));
    }
    let loadings = pivoted_cholesky(sigma)?;
    min_moments_inner(theta, sigma.diagonal().as_slice(), &loadings, opts)
}

/// Moments of `min X` for `X = theta + F xi`, `xi ~ N(0, I)`.
///
/// Preferred when a factor is known exactly, as for combination weights where
/// `F = P diag(alpha mu)`.
pub fn min_moments_factored(theta: &DVector<f64>, loadings: &DMatrix<f64>, opts: &IntegrationOptions) -> Result<Moments> {
    check_inputs(theta, loadings.nrows())?;
    let var: Vec<f64> = (0..loadings.nrows()).map(|i| loadings.row(i).norm_squared()).collect();
    if let Some(i) = var.iter().position(|v| !(*v > 0.0)) {
        return Err(MwmError::InvalidConfig(format!("variance of variable {i} is not positive")));
    }
    min_moments_inner(theta, &var, loadings, opts)
}

fn min_moments_inner(theta: &DVector<f64>, var: &[f64], loadings: &DMatrix<f64>, opts: &IntegrationOptions) -> Result<Moments> {
    opts.validate()?;
    let k = theta.len();
    if k == 1 {
        return Ok(Moments { mean: theta[0], variance: var[0] });
    }
    let rows: Vec<Vec<f64>> = (0..k).map(|i| loadings.row(i).iter().copied().collect()).collect();
    // Centering keeps the theta_i m0_i terms small; sum_i m0_i = 1.
    let center = theta.mean();

    let terms: Vec<Result<(f64, f64)>> = (0..k)
        .into_par_iter()
        .map(|i| {
            let sd_i = var[i].sqrt();
            let mut others = Vec::with_capacity(k - 1);
            let mut empty = false;
            for j in (0..k).filter(|&j| j != i) {
                let diff: Vec<f64> = rows[i].iter().zip(&rows[j]).map(|(a, b)| a - b).collect();
                let v: f64 = diff.iter().map(|d| d * d).sum();
                let gap = theta[j] - theta[i];
                if v <= 1e-18 * (var[i] + var[j]) {
                    if gap.abs() <= 1e-12 * (1.0 + theta[i].abs()) {
                        return Err(MwmError::Degenerate { i: i.min(j), j: i.max(j) });
                    }
                    // X_i - X_j is a constant: region is either everything or nothing
                    empty |= gap < 0.0;
                    continue;
                }
                // Node::new scales both by sd(X_i - X_j)
                others.push(Constraint { id: j, dir: diff, bound: gap });
            }
            if empty {
                return Ok((0.0, 0.0));
            }
            let node = Node::new(&rows[i], f64::INFINITY, others);
            let mut ev = Evaluator::new(opts, opts.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let m0 = ev.m0(&node)?;
            let m1 = ev.m1(&node)?;
            let m2 = ev.m2(&node)?;
            let t = theta[i] - center;
            let first = t * m0 + sd_i * m1;
            let second = var[i] * m2 + 2.0 * t * sd_i * m1 + t * t * m0;
            Ok((first, second))
        })
        .collect();
    let (mut first, mut second) = (0.0, 0.0);
    for term in terms {
        let (a, b) = term?;
        first += a;
        second += b;
    }
    Ok(Moments { mean: center + first, variance: (second - first * first).max(0.0) })
}

/// Moments of `max X`, via `max X = -min(-X)` or the cheap `max_i theta_i` stand-in.
pub fn max_moments(theta: &DVector<f64>, sigma: &DMatrix<f64>, opts: &IntegrationOptions, mode: MaxMode) -> Result<Moments> {
    check_inputs(theta, sigma.nrows())?;
    match mode {
        MaxMode::ArgmaxApprox => Ok(argmax_moments(theta, |i| sigma[(i, i)])),
        MaxMode::Exact => {
            let m = min_moments(&(-theta), sigma, opts)?;
            Ok(Moments { mean: -m.mean, variance: m.variance })
        }
    }
}

pub fn max_moments_factored(theta: &DVector<f64>, loadings: &DMatrix<f64>, opts: &IntegrationOptions, mode: MaxMode) -> Result<Moments> {
    check_inputs(theta, loadings.nrows())?;
    match mode {
        MaxMode::ArgmaxApprox => Ok(argmax_moments(theta, |i| loadings.row(i).norm_squared())),
        MaxMode::Exact => {
            // -X = -theta + (-F) xi, and the sign of F does not change the law
            let m = min_moments_factored(&(-theta), loadings, opts)?;
            Ok(Moments { mean: -m.mean, variance: m.variance })
        }
    }
}

fn argmax_moments(theta: &DVector<f64>, var: impl Fn(usize) -> f64) -> Moments {
    let (i, &mean) = theta
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    Moments { mean, variance: var(i) }
}

/// Both extremes from an explicit factor.
pub fn extreme_moments_factored(
    theta: &DVector<f64>,
    loadings: &DMatrix<f64>,
    opts: &IntegrationOptions,
    mode: MaxMode,
) -> Result<ExtremeMoments> {
    let lo = min_moments_factored(theta, loadings, opts)?;
    let hi = max_moments_factored(theta, loadings, opts, mode)?;
    Ok(ExtremeMoments { e_min: lo.mean, var_min: lo.variance, e_max: hi.mean, var_max: hi.variance, method: MomentMethod::Exact })
}

pub fn extreme_moments(theta: &DVector<f64>, sigma: &DMatrix<f64>, opts: &IntegrationOptions, mode: MaxMode) -> Result<ExtremeMoments> {
    let lo = min_moments(theta, sigma, opts)?;
    let hi = max_moments(theta, sigma, opts, mode)?;
    Ok(ExtremeMoments { e_min: lo.mean, var_min: lo.variance, e_max: hi.mean, var_max: hi.variance, method: MomentMethod::Exact })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normal;

    #[test]
    fn single_variable() {
        let m = min_moments(&DVector::from_vec(vec![500.0]), &DMatrix::from_element(1, 1, 100.0), &IntegrationOptions::default()).unwrap();
        assert_eq!((m.mean, m.variance), (500.0, 100.0));
    }

    #[test]
    fn iid_pair_closed_form() {
        // E[min] = mu - sigma/sqrt(pi), Var[min] = sigma^2 (1 - 1/pi)
        let (mu, s) = (10.0, 2.0);
        let theta = DVector::from_vec(vec![mu, mu]);
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![s * s, s * s]));
        let m = min_moments(&theta, &sigma, &IntegrationOptions::default()).unwrap();
        let pi = std::f64::consts::PI;
        assert!((m.mean - (mu - s / pi.sqrt())).abs() < 1e-9);
        assert!((m.variance - s * s * (1.0 - 1.0 / pi)).abs() < 1e-9);
        let x = max_moments(&theta, &sigma, &IntegrationOptions::default(), MaxMode::Exact).unwrap();
        assert!((x.mean - (mu + s / pi.sqrt())).abs() < 1e-9);
    }

    #[test]
    fn bivariate_correlated_closed_form() {
        // min of a pair: E = t1 Phi(d/a) + t2 Phi(-d/a) - a phi(d/a), a = sd(X1 - X2), d = t2 - t1
        let theta = DVector::from_vec(vec![3.0, 4.0]);
        let sigma = DMatrix::from_row_slice(2, 2, &[4.0, 1.5, 1.5, 2.0]);
        let a = (4.0f64 + 2.0 - 3.0).sqrt();
        let d = 1.0 / a;
        let want = 3.0 * normal::cdf(d) + 4.0 * normal::cdf(-d) - a * normal::pdf(d);
        let m = min_moments(&theta, &sigma, &IntegrationOptions::default()).unwrap();
        assert!((m.mean - want).abs() < 1e-12, "{} vs {want}", m.mean);
    }

    #[test]
    fn duplicate_variables_are_degenerate() {
        let theta = DVector::from_vec(vec![1.0, 1.0, 2.0]);
        let sigma = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.2, 1.0, 1.0, 0.2, 0.2, 0.2, 1.0]);
        assert_eq!(min_moments(&theta, &sigma, &IntegrationOptions::default()), Err(MwmError::Degenerate { i: 0, j: 1 }));
    }

    #[test]
    fn shifted_copy_is_deterministic_order() {
        // X2 = X1 + 5 exactly: the minimum is always X1
        let theta = DVector::from_vec(vec![1.0, 6.0]);
        let sigma = DMatrix::from_element(2, 2, 2.0);
        let m = min_moments(&theta, &sigma, &IntegrationOptions::default()).unwrap();
        assert!((m.mean - 1.0).abs() < 1e-12 && (m.variance - 2.0).abs() < 1e-12);
    }

    #[test]
    fn truncated_moment_order_zero_matches_probability() {
        let r = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.2, 0.5, 1.0, 0.3, 0.2, 0.3, 1.0]);
        let b = [f64::INFINITY, 0.4, -0.2];
        let o = IntegrationOptions::default();
        let a = truncated_moment(0, &b, &r, &o).unwrap();
        let p = mvn_rectangle_prob(&b, &r, &o).unwrap();
        assert!((a - p).abs() < 2.0 * o.tol);
    }

    #[test]
    fn independence_kills_first_moment() {
        let r = DMatrix::identity(2, 2);
        let m1 = truncated_moment(1, &[f64::INFINITY, 0.0], &r, &IntegrationOptions::default()).unwrap();
        assert_eq!(m1, 0.0);
    }

    #[test]
    fn rejects_bad_options() {
        let r = DMatrix::identity(2, 2);
        let o = IntegrationOptions::default().with_tol(0.5);
        assert!(mvn_rectangle_prob(&[0.0, 0.0], &r, &o).is_err());
        assert!(truncated_moment(3, &[0.0, 0.0], &r, &IntegrationOptions::default()).is_err());
    }
}
