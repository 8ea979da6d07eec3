//! Extreme means of `X = theta + F xi` by a randomized lattice in the space of `xi`.
//!
//! When `F` has few columns (one per hopper) this is far cheaper than the rectangle
//! recursion and gives the same quantities up to integration error. The normal
//! points are generated once and reused, so the estimate is a continuous, piecewise
//! linear function of `theta` and `F`.

use super::mvn::{Estimate, CONFIDENCE_Z, PRIMES};
use crate::error::{MwmError, Result};
use crate::normal;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fixed standard normal points: `shifts` randomly shifted copies of a rank-1 lattice
/// with `points` nodes, each used together with its negation.
#[derive(Debug, Clone)]
pub struct NormalLattice {
    dim: usize,
    shifts: usize,
    points: usize,
    /// Row-major, `shifts * points` rows of `dim` values.
    z: Vec<f64>,
}

impl NormalLattice {
    pub fn new(dim: usize, points: usize, shifts: usize, seed: u64) -> Result<NormalLattice> {
        if dim == 0 || dim > PRIMES.len() {
            return Err(MwmError::Unsupported(format!("lattice dimension {dim}")));
        }
        if points == 0 || shifts < 2 {
            return Err(MwmError::InvalidConfig("a lattice needs points and at least two shifts".into()));
        }
        let gen: Vec<f64> = PRIMES[..dim].iter().map(|&p| (p as f64).sqrt().fract()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z = Vec::with_capacity(shifts * points * dim);
        for _ in 0..shifts {
            let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
            for i in 1..=points {
                for d in 0..dim {
                    let x = (i as f64 * gen[d] + shift[d]).fract();
                    // tent transform, kept away from 0 and 1
                    let t = (2.0 * x - 1.0).abs().clamp(1e-12, 1.0 - 1e-12);
                    z.push(normal::quantile(t));
                }
            }
        }
        Ok(NormalLattice { dim, shifts, points, z })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Estimates `(E[min_i X_i], E[max_i X_i])` with 99% error half-widths.
    pub fn extreme_means(&self, theta: &DVector<f64>, loadings: &DMatrix<f64>) -> Result<(Estimate, Estimate)> {
        let (k, d) = loadings.shape();
        if d != self.dim || theta.len() != k || k == 0 {
            return Err(MwmError::DimensionMismatch(format!(
                "{} means, {k}x{d} loadings, lattice of dimension {}",
                theta.len(),
                self.dim
            )));
        }
        let rows: Vec<Vec<f64>> = (0..k).map(|i| loadings.row(i).iter().copied().collect()).collect();
        let mut lo_means = Vec::with_capacity(self.shifts);
        let mut hi_means = Vec::with_capacity(self.shifts);
        for s in 0..self.shifts {
            let (mut lo_acc, mut hi_acc) = (0.0, 0.0);
            for p in 0..self.points {
                let z = &self.z[(s * self.points + p) * d..][..d];
                let (mut lo_a, mut hi_a, mut lo_b, mut hi_b) =
                    (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
                for (t, r) in theta.iter().zip(&rows) {
                    let dz: f64 = r.iter().zip(z).map(|(a, b)| a * b).sum();
                    lo_a = lo_a.min(t + dz);
                    hi_a = hi_a.max(t + dz);
                    lo_b = lo_b.min(t - dz);
                    hi_b = hi_b.max(t - dz);
                }
                lo_acc += 0.5 * (lo_a + lo_b);
                hi_acc += 0.5 * (hi_a + hi_b);
            }
            lo_means.push(lo_acc / self.points as f64);
            hi_means.push(hi_acc / self.points as f64);
        }
        Ok((summarize(&lo_means), summarize(&hi_means)))
    }
}

fn summarize(means: &[f64]) -> Estimate {
    let m = means.len() as f64;
    let mean = means.iter().sum::<f64>() / m;
    let var = means.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    Estimate { value: mean, error: CONFIDENCE_Z * (var / m).sqrt() }
}
