//! Rectangle probabilities `P(a_k . xi <= b_k for all k)`, `xi ~ N(0, I_d)`.
//!
//! Separation of variables with a randomized rank-1 lattice rule. The constraint
//! directions are orthogonalized one at a time, always taking next the constraint
//! with the smallest expected conditional probability. Directions that become
//! linearly dependent on the chosen ones are attached to the last coordinate they
//! load on, which is how singular correlation matrices are integrated.

use super::IntegrationOptions;
use crate::error::{MwmError, Result};
use crate::normal;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ZERO_TOL: f64 = 1e-9;
const COEF_TOL: f64 = 1e-12;
/// 99% two-sided normal quantile.
pub(crate) const CONFIDENCE_Z: f64 = 2.575_829_303_548_9;

pub(crate) const PRIMES: [u32; 40] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
    101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173,
];

/// Probability estimate with its 99% error half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

impl Estimate {
    fn exact(value: f64) -> Self {
        Estimate { value, error: 0.0 }
    }
}

#[derive(Debug, Clone)]
struct Level {
    /// Coefficients on levels `0..=index`; the last one is positive.
    coefs: Vec<f64>,
    bound: f64,
    /// Dependent constraints whose last nonzero coefficient falls on this level.
    extra: Vec<(Vec<f64>, f64)>,
}

/// Lower-triangular description of the constraint set after orthogonalization.
#[derive(Debug, Clone)]
struct Triangular {
    levels: Vec<Level>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Truncated-normal mean of `N(0,1)` restricted to `(-inf, z]`.
fn upper_truncated_mean(z: f64) -> f64 {
    if z == f64::INFINITY {
        return 0.0;
    }
    let c = normal::cdf(z);
    if c < 1e-300 {
        z
    } else {
        -normal::pdf(z) / c
    }
}

enum Prepared {
    Exact(f64),
    Reduced(Triangular),
}

fn prepare(rows: &[&[f64]], bounds: &[f64]) -> Result<Prepared> {
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(rows.len());
    let mut bs: Vec<f64> = Vec::with_capacity(rows.len());
    for (row, &b) in rows.iter().zip(bounds) {
        if b.is_nan() || row.iter().any(|v| !v.is_finite()) {
            return Err(MwmError::Numerical("non-finite rectangle input".into()));
        }
        if b == f64::INFINITY {
            continue;
        }
        if b == f64::NEG_INFINITY {
            return Ok(Prepared::Exact(0.0));
        }
        let s = dot(row, row).sqrt();
        if s < ZERO_TOL {
            // constraint 0 <= b
            if b < 0.0 {
                return Ok(Prepared::Exact(0.0));
            }
            continue;
        }
        dirs.push(row.iter().map(|v| v / s).collect());
        bs.push(b / s);
    }
    if dirs.is_empty() {
        return Ok(Prepared::Exact(1.0));
    }

    let n = dirs.len();
    let mut resid = dirs.clone();
    let mut coefs: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut chosen = vec![false; n];
    let mut expected: Vec<f64> = Vec::new();
    let mut levels: Vec<Level> = Vec::new();

    loop {
        let mut best: Option<(usize, f64, f64)> = None;
        for k in (0..n).filter(|&k| !chosen[k]) {
            let rho = dot(&resid[k], &resid[k]).sqrt();
            if rho < ZERO_TOL {
                continue;
            }
            let shift = dot(&coefs[k], &expected);
            let z = (bs[k] - shift) / rho;
            if best.is_none_or(|(_, bz, _)| z < bz) {
                best = Some((k, z, rho));
            }
        }
        let Some((t, z, rho)) = best else { break };
        chosen[t] = true;
        let q: Vec<f64> = resid[t].iter().map(|v| v / rho).collect();
        for k in (0..n).filter(|&k| !chosen[k]) {
            let c = dot(&resid[k], &q);
            coefs[k].push(c);
            for (r, qv) in resid[k].iter_mut().zip(&q) {
                *r -= c * qv;
            }
        }
        let mut own = coefs[t].clone();
        own.push(rho);
        levels.push(Level { coefs: own, bound: bs[t], extra: Vec::new() });
        expected.push(upper_truncated_mean(z));
    }

    for k in (0..n).filter(|&k| !chosen[k]) {
        let c = &coefs[k];
        match c.iter().rposition(|v| v.abs() > COEF_TOL) {
            Some(last) => levels[last].extra.push((c[..=last].to_vec(), bs[k])),
            None => {
                if bs[k] < 0.0 {
                    return Ok(Prepared::Exact(0.0));
                }
            }
        }
    }
    Ok(Prepared::Reduced(Triangular { levels }))
}

impl Triangular {
    fn dim(&self) -> usize {
        self.levels.len()
    }

    /// Integrand on `[0,1]^(dim-1)`; the last level is integrated in closed form.
    fn eval(&self, u: &[f64], w: &mut [f64]) -> f64 {
        let mut weight = 1.0;
        let last = self.levels.len() - 1;
        for (c, level) in self.levels.iter().enumerate() {
            let partial = |coefs: &[f64]| dot(&coefs[..c], &w[..c]);
            let diag = level.coefs[c];
            let mut hi = (level.bound - partial(&level.coefs)) / diag;
            let mut lo = f64::NEG_INFINITY;
            for (coefs, b) in &level.extra {
                let lim = (b - partial(coefs)) / coefs[c];
                if coefs[c] > 0.0 {
                    hi = hi.min(lim);
                } else {
                    lo = lo.max(lim);
                }
            }
            let p = normal::interval_prob(lo, hi);
            if p <= 0.0 {
                return 0.0;
            }
            weight *= p;
            if c < last {
                let x = if lo > 0.0 {
                    -normal::quantile(normal::sf(lo) - u[c] * p)
                } else {
                    normal::quantile(normal::cdf(lo) + u[c] * p)
                };
                w[c] = x.clamp(lo.max(-40.0), hi.min(40.0));
            }
        }
        weight
    }
}

/// Probability that every `rows[k] . xi <= bounds[k]` for a standard normal `xi`.
///
/// Rows need not be normalized or independent. Deterministic for a fixed `seed`.
pub fn rectangle_prob(
    rows: &[&[f64]],
    bounds: &[f64],
    opts: &IntegrationOptions,
    seed: u64,
) -> Result<Estimate> {
    if rows.len() != bounds.len() {
        return Err(MwmError::DimensionMismatch(format!(
            "{} directions but {} bounds",
            rows.len(),
            bounds.len()
        )));
    }
    let tri = match prepare(rows, bounds)? {
        Prepared::Exact(p) => return Ok(Estimate::exact(p)),
        Prepared::Reduced(t) => t,
    };
    let dim = tri.dim();
    let mut w = vec![0.0; dim];
    if dim == 1 {
        return Ok(Estimate::exact(tri.eval(&[], &mut w)));
    }
    let qdim = dim - 1;
    if qdim > PRIMES.len() {
        return Err(MwmError::Unsupported(format!("rectangle of effective dimension {dim}")));
    }
    let gen: Vec<f64> = PRIMES[..qdim].iter().map(|&p| (p as f64).sqrt().fract()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shifts: Vec<Vec<f64>> = (0..opts.shifts)
        .map(|_| (0..qdim).map(|_| rng.random::<f64>()).collect())
        .collect();

    let mut u = vec![0.0; qdim];
    let mut ua = vec![0.0; qdim];
    let mut n = opts.min_points.max(1);
    loop {
        let mut means = Vec::with_capacity(shifts.len());
        for shift in &shifts {
            let mut acc = 0.0;
            for i in 1..=n {
                for d in 0..qdim {
                    let x = (i as f64 * gen[d] + shift[d]).fract();
                    let t = (2.0 * x - 1.0).abs();
                    u[d] = t;
                    ua[d] = 1.0 - t;
                }
                acc += 0.5 * (tri.eval(&u, &mut w) + tri.eval(&ua, &mut w));
            }
            means.push(acc / n as f64);
        }
        let m = means.len() as f64;
        let mean = means.iter().sum::<f64>() / m;
        let var = if means.len() > 1 {
            means.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)
        } else {
            0.0
        };
        let error = CONFIDENCE_Z * (var / m).sqrt();
        if error <= opts.tol || n >= opts.max_points {
            if error > opts.tol {
                log::debug!("rectangle probability stopped at error {error:.2e} > {:.1e}", opts.tol);
            }
            return Ok(Estimate { value: mean.clamp(0.0, 1.0), error });
        }
        n *= 2;
    }
}
