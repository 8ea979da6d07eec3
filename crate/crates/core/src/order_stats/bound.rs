use crate::error::{MwmError, Result};

/// Closed-form lower bound on `E[min_i X_i]` from marginal means and standard deviations.
///
/// Bounding `E[max(-X)]` above by `x + sum_i E[(-X_i - x)^+]` and each term by its
/// worst case over distributions with the given mean and variance, evaluated at
/// `x = max_i { -theta_i + (K-2) / (2 sqrt(K-1)) sd_i }`. Correlations are never used,
/// so the bound holds for any dependence structure.
pub fn lb_min_expectation(theta: &[f64], sd: &[f64]) -> Result<f64> {
    let k = theta.len();
    if k < 2 {
        return Err(MwmError::Unsupported("the bound needs at least two variables".into()));
    }
    if sd.len() != k {
        return Err(MwmError::DimensionMismatch(format!("{k} means but {} deviations", sd.len())));
    }
    if sd.iter().any(|s| !(*s >= 0.0)) {
        return Err(MwmError::InvalidConfig("standard deviations must be non-negative".into()));
    }
    let kf = k as f64;
    let c = (kf - 2.0) / (2.0 * (kf - 1.0).sqrt());
    let x = theta
        .iter()
        .zip(sd)
        .map(|(t, s)| -t + c * s)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = theta
        .iter()
        .zip(sd)
        .map(|(t, s)| -t + ((-t - x).powi(2) + s * s).sqrt())
        .sum();
    Ok(-0.5 * sum - (2.0 - kf) / 2.0 * x)
}
