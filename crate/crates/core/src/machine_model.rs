//! Machine description and the Gaussian law of the candidate combination weights.
//!
//! Each hopper `j` holds `W_j ~ N(mu_j, (alpha * mu_j)^2)`, independent across hoppers.
//! A combination is a set of opened hoppers; stacking the `K` admissible combinations
//! as rows of a 0/1 matrix `P` gives `X = P W ~ N(P mu, P diag(alpha^2 mu^2) P')`.

use crate::error::{MwmError, Result};
use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Immutable problem statement for one machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineConfig {
    #[serde(rename = "H")]
    pub hoppers: usize,
    /// Package target weight in grams.
    #[serde(rename = "T")]
    pub target: f64,
    /// Coefficient of variation of a hopper's fill weight.
    pub alpha: f64,
    /// Largest number of hoppers allowed to stay shut in one cycle.
    pub max_shut: usize,
    #[serde(default)]
    pub exclude_all_open: bool,
    /// Allowed probability that even the all-open combination falls short of the target.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Per-hopper setpoint cap as a fraction of the target.
    pub f: f64,
}

fn default_epsilon() -> f64 {
    1e-5
}

impl MachineConfig {
    pub fn new(hoppers: usize, target: f64, alpha: f64, max_shut: usize, f: f64) -> Result<Self> {
        let config = MachineConfig {
            hoppers,
            target,
            alpha,
            max_shut,
            exclude_all_open: false,
            epsilon: default_epsilon(),
            f,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        self.epsilon = epsilon;
        self.validate()?;
        Ok(self)
    }

    pub fn excluding_all_open(mut self, exclude: bool) -> Self {
        self.exclude_all_open = exclude;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(MwmError::InvalidConfig(msg));
        if self.hoppers < 2 {
            return bad(format!("need at least 2 hoppers, got {}", self.hoppers));
        }
        if self.max_shut >= self.hoppers {
            return bad(format!(
                "max_shut ({}) must be below the hopper count ({})",
                self.max_shut, self.hoppers
            ));
        }
        if !(self.target > 0.0 && self.target.is_finite()) {
            return bad(format!("target must be positive, got {}", self.target));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if !(self.f > 0.0 && self.f <= 1.0) {
            return bad(format!("f must lie in (0, 1], got {}", self.f));
        }
        if self.exclude_all_open && self.max_shut == 0 {
            return bad("excluding the all-open row with max_shut = 0 leaves no combinations".into());
        }
        Ok(())
    }

    /// Closed-form number of admissible combinations.
    pub fn combination_count(&self) -> usize {
        let total: usize = (0..=self.max_shut).map(|s| binomial(self.hoppers, s)).sum();
        total - usize::from(self.exclude_all_open)
    }
}

pub(crate) fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Hopper setpoints in grams. Every entry is strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Setpoints(Vec<f64>);

impl Setpoints {
    pub fn new(mu: Vec<f64>) -> Result<Self> {
        if mu.is_empty() {
            return Err(MwmError::InvalidSetpoints("empty setpoint vector".into()));
        }
        if let Some((i, v)) = mu.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(MwmError::InvalidSetpoints(format!(
                "setpoint {i} must be positive and finite, got {v}"
            )));
        }
        Ok(Setpoints(mu))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Sorted in descending order. Machine performance does not depend on hopper labels.
    pub fn canonical(&self) -> Setpoints {
        let mut mu = self.0.clone();
        mu.sort_by(|a, b| b.total_cmp(a));
        Setpoints(mu)
    }

    pub fn permuted(&self, perm: &[usize]) -> Setpoints {
        Setpoints(perm.iter().map(|&i| self.0[i]).collect())
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl TryFrom<Vec<f64>> for Setpoints {
    type Error = MwmError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Setpoints::new(v)
    }
}

impl From<Setpoints> for Vec<f64> {
    fn from(s: Setpoints) -> Self {
        s.0
    }
}

/// The `K x H` open/shut indicator matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CombinationMatrix {
    hoppers: usize,
    rows: Vec<Vec<bool>>,
}

impl CombinationMatrix {
    /// Builds a matrix from explicit rows, checking the row invariants.
    pub fn from_rows(hoppers: usize, rows: Vec<Vec<bool>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(MwmError::DimensionMismatch("no combinations".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != hoppers {
                return Err(MwmError::DimensionMismatch(format!(
                    "row {i} has {} entries, expected {hoppers}",
                    row.len()
                )));
            }
            if !row.iter().any(|&b| b) {
                return Err(MwmError::InvalidConfig(format!("row {i} opens no hopper")));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for (i, row) in rows.iter().enumerate() {
            if !seen.insert(row.clone()) {
                return Err(MwmError::InvalidConfig(format!("row {i} is a duplicate")));
            }
        }
        Ok(CombinationMatrix { hoppers, rows })
    }

    pub fn hoppers(&self) -> usize {
        self.hoppers
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<bool>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.rows[i]
    }

    /// Indices of the hoppers opened by combination `i`.
    pub fn opened(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.rows[i].iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j)
    }

    /// Row `i` dotted with a per-hopper vector.
    pub fn row_dot(&self, i: usize, v: &[f64]) -> f64 {
        self.opened(i).map(|j| v[j]).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.hoppers, |i, j| if self.rows[i][j] { 1.0 } else { 0.0 })
    }

    /// Relabels hoppers: column `j` of the result is column `perm[j]` of `self`.
    pub fn permute_hoppers(&self, perm: &[usize]) -> CombinationMatrix {
        let rows = self
            .rows
            .iter()
            .map(|row| perm.iter().map(|&p| row[p]).collect())
            .collect();
        CombinationMatrix { hoppers: self.hoppers, rows }
    }

    /// CSV with one `0`/`1` row per combination.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let line: Vec<&str> = row.iter().map(|&b| if b { "1" } else { "0" }).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Enumerates every combination leaving at most `max_shut` hoppers shut.
///
/// Rows are in descending lexicographic order of their 0/1 pattern, so the all-open
/// row comes first (for `H = 2`: `11, 10, 01`).
pub fn enumerate_combinations(config: &MachineConfig) -> Result<CombinationMatrix> {
    config.validate()?;
    let h = config.hoppers;
    if h > 30 {
        return Err(MwmError::Unsupported(format!("{h} hoppers is beyond enumeration range")));
    }
    if h > 10 && config.max_shut >= 3 && !config.exclude_all_open {
        warn!(
            "H = {h} with up to {} shut hoppers: the combination covariance is badly \
             conditioned; consider excluding the all-open combination",
            config.max_shut
        );
    }
    let full: u64 = (1u64 << h) - 1;
    let mut rows = Vec::with_capacity(config.combination_count());
    // Bit (h - 1 - j) set <=> hopper j open, so descending masks give descending rows.
    for mask in (1..=full).rev() {
        let shut = h - mask.count_ones() as usize;
        if shut > config.max_shut || (shut == 0 && config.exclude_all_open) {
            continue;
        }
        rows.push((0..h).map(|j| mask >> (h - 1 - j) & 1 == 1).collect());
    }
    Ok(CombinationMatrix { hoppers: h, rows })
}

/// `P`, `Theta = P mu` and `Sigma = P diag(alpha^2 mu^2) P'` bundled together.
#[derive(Debug, Clone)]
pub struct CombinationSet {
    pub matrix: CombinationMatrix,
    pub theta: DVector<f64>,
    pub sigma: DMatrix<f64>,
    /// Per-hopper variances `alpha^2 mu_j^2`.
    pub sigma_w: DVector<f64>,
}

impl CombinationSet {
    pub fn new(matrix: CombinationMatrix, mu: &Setpoints, alpha: f64) -> Result<Self> {
        let (theta, sigma) = combination_distribution(&matrix, mu, alpha)?;
        let sigma_w = DVector::from_iterator(mu.len(), mu.as_slice().iter().map(|m| (alpha * m).powi(2)));
        Ok(CombinationSet { matrix, theta, sigma, sigma_w })
    }

    pub fn len(&self) -> usize {
        self.matrix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.is_empty()
    }

    /// Factor `F = P diag(alpha mu)` with `Sigma = F F'`.
    pub fn loadings(&self) -> DMatrix<f64> {
        let sd: Vec<f64> = self.sigma_w.iter().map(|v| v.sqrt()).collect();
        hopper_loadings(&self.matrix, &sd)
    }

    pub fn marginal_sd(&self) -> Vec<f64> {
        self.sigma.diagonal().iter().map(|v| v.sqrt()).collect()
    }
}

pub(crate) fn hopper_loadings(matrix: &CombinationMatrix, hopper_sd: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(matrix.len(), matrix.hoppers(), |i, j| {
        if matrix.row(i)[j] {
            hopper_sd[j]
        } else {
            0.0
        }
    })
}

/// Mean vector and covariance matrix of the combination weights.
pub fn combination_distribution(
    matrix: &CombinationMatrix,
    mu: &Setpoints,
    alpha: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if mu.len() != matrix.hoppers() {
        return Err(MwmError::DimensionMismatch(format!(
            "{} setpoints for a {}-hopper combination matrix",
            mu.len(),
            matrix.hoppers()
        )));
    }
    let mu = mu.as_slice();
    let var_w: Vec<f64> = mu.iter().map(|m| (alpha * m).powi(2)).collect();
    let k = matrix.len();
    let theta = DVector::from_iterator(k, (0..k).map(|i| matrix.row_dot(i, mu)));
    let mut sigma = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in a..k {
            let s: f64 = (0..matrix.hoppers())
                .filter(|&j| matrix.row(a)[j] && matrix.row(b)[j])
                .map(|j| var_w[j])
                .sum();
            sigma[(a, b)] = s;
            sigma[(b, a)] = s;
        }
    }
    Ok((theta, sigma))
}

/// Count of `K`-dimensional integrals needed for one exact conditional moment of the
/// package weight when all `2^H - 1` combinations are admissible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegralCount {
    /// Dimension `K = 2^H - 1` of each integral.
    pub dimension: u64,
    /// `2^(K-1) * K` when it fits in 128 bits.
    pub exact: Option<u128>,
    pub approx: f64,
}

pub fn integral_count(hoppers: u32) -> Result<IntegralCount> {
    if hoppers == 0 {
        return Err(MwmError::InvalidConfig("need at least one hopper".into()));
    }
    if hoppers > 62 {
        return Err(MwmError::Numerical(format!("2^{hoppers} - 1 overflows")));
    }
    let k: u64 = (1u64 << hoppers) - 1;
    let exact = 1u128
        .checked_shl((k - 1) as u32)
        .filter(|_| k - 1 < 128)
        .and_then(|p| p.checked_mul(k as u128));
    let approx = 2f64.powi((k - 1) as i32) * k as f64;
    if exact.is_none() && !approx.is_finite() {
        return Err(MwmError::Numerical(format!(
            "integral count for H = {hoppers} overflows double precision"
        )));
    }
    Ok(IntegralCount { dimension: k, exact, approx })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn config(h: usize, max_shut: usize) -> MachineConfig {
        MachineConfig::new(h, 500.0, 0.123, max_shut, 0.6).unwrap()
    }

    #[test]
    fn enumerates_two_hoppers() {
        let p = enumerate_combinations(&config(2, 1)).unwrap();
        assert_eq!(p.rows(), &[vec![true, true], vec![true, false], vec![false, true]]);
    }

    #[test]
    fn counts_match_closed_form() {
        for h in 2..=12 {
            for s in 0..=3.min(h - 1) {
                let c = config(h, s);
                assert_eq!(enumerate_combinations(&c).unwrap().len(), c.combination_count());
                let c = c.excluding_all_open(true);
                if s > 0 {
                    assert_eq!(enumerate_combinations(&c).unwrap().len(), c.combination_count());
                }
            }
        }
        assert_eq!(config(4, 2).combination_count(), 11);
        assert_eq!(config(12, 3).combination_count(), 299);
    }

    #[test]
    fn excluding_all_open_drops_first_row() {
        let c = config(4, 2).excluding_all_open(true);
        let p = enumerate_combinations(&c).unwrap();
        assert_eq!(p.len(), 10);
        assert!(p.rows().iter().all(|r| r.iter().any(|b| !b)));
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(MachineConfig::new(1, 500.0, 0.1, 0, 0.5).is_err());
        assert!(MachineConfig::new(4, 500.0, 0.1, 4, 0.5).is_err());
        assert!(MachineConfig::new(4, -1.0, 0.1, 2, 0.5).is_err());
        assert!(MachineConfig::new(4, 500.0, 1.0, 2, 0.5).is_err());
        assert!(MachineConfig::new(4, 500.0, 0.1, 2, 0.0).is_err());
        assert!(MachineConfig::new(4, 500.0, 0.1, 2, 0.5).unwrap().with_epsilon(0.0).is_err());
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(CombinationMatrix::from_rows(2, vec![vec![false, false]]).is_err());
        assert!(CombinationMatrix::from_rows(2, vec![vec![true, false], vec![true, false]]).is_err());
        assert!(CombinationMatrix::from_rows(2, vec![vec![true]]).is_err());
    }

    #[test]
    fn all_open_row_sums_hoppers() {
        let p = CombinationMatrix::from_rows(4, vec![vec![true; 4]]).unwrap();
        let mu = Setpoints::new(vec![125.0; 4]).unwrap();
        let (theta, sigma) = combination_distribution(&p, &mu, 0.123).unwrap();
        assert_relative_eq!(theta[0], 500.0);
        assert_relative_eq!(sigma[(0, 0)], 4.0 * (0.123f64 * 125.0).powi(2), epsilon = 1e-9);
    }

    #[test]
    fn mean_theta_for_four_hopper_ladder() {
        let p = enumerate_combinations(&config(4, 2)).unwrap();
        let mu = Setpoints::new(vec![294.9, 276.7, 183.7, 66.6]).unwrap();
        let (theta, _) = combination_distribution(&p, &mu, 0.123).unwrap();
        // every hopper is open in 7 of the 11 rows
        assert_relative_eq!(theta.mean(), 7.0 / 11.0 * mu.sum(), epsilon = 1e-9);
    }

    #[test]
    fn dimension_mismatch() {
        let p = enumerate_combinations(&config(4, 2)).unwrap();
        let mu = Setpoints::new(vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            combination_distribution(&p, &mu, 0.1),
            Err(MwmError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn loadings_reproduce_sigma() {
        let p = enumerate_combinations(&config(5, 2)).unwrap();
        let mu = Setpoints::new(vec![203.7, 191.0, 178.6, 110.9, 55.7]).unwrap();
        let set = CombinationSet::new(p, &mu, 0.123).unwrap();
        let f = set.loadings();
        let diff = (&f * f.transpose() - &set.sigma).abs().max();
        assert!(diff < 1e-9);
    }

    #[test]
    fn integral_counts() {
        let c = |h| integral_count(h).unwrap();
        assert_eq!((c(1).exact, c(1).dimension), (Some(1), 1));
        assert_eq!((c(2).exact, c(2).dimension), (Some(12), 3));
        assert_eq!((c(3).exact, c(3).dimension), (Some(448), 7));
        assert_eq!((c(4).exact, c(4).dimension), (Some(245_760), 15));
        assert_relative_eq!(c(5).approx, 3.3286e10, max_relative = 1e-4);
        assert_relative_eq!(c(8).approx, 7.3817e78, max_relative = 1e-4);
        assert!(c(8).exact.is_none());
        assert!(integral_count(11).is_err());
    }

    #[test]
    fn setpoints_validation_and_canonical_form() {
        assert!(Setpoints::new(vec![1.0, 0.0]).is_err());
        assert!(Setpoints::new(vec![]).is_err());
        let s = Setpoints::new(vec![3.0, 5.0, 1.0]).unwrap();
        assert_eq!(s.canonical().as_slice(), &[5.0, 3.0, 1.0]);
    }
}
