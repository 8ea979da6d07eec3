use crate::error::{MwmError, Result};
use nalgebra::DMatrix;

/// Relative pivot size below which the remaining Schur complement is treated as zero.
pub(crate) const RANK_TOL: f64 = 1e-11;
/// Relative negative pivot still accepted as round-off.
const REPAIR_TOL: f64 = 1e-8;

/// Diagonally pivoted Cholesky of a symmetric positive semidefinite matrix.
///
/// Returns `L` (`n x rank`, rows in the original order) with `A = L L'` up to round-off.
/// Pivots below `RANK_TOL * max(diag)` end the factorization; tiny negative pivots are
/// clamped to zero and larger ones are reported.
pub fn pivoted_cholesky(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(MwmError::DimensionMismatch(format!("{}x{} is not square", n, a.ncols())));
    }
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    if n == 0 || scale == 0.0 {
        return Ok(DMatrix::zeros(n, 0));
    }
    let mut diag: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    let mut done = vec![false; n];
    let mut cols: Vec<Vec<f64>> = Vec::new();
    loop {
        let (piv, &d) = diag
            .iter()
            .enumerate()
            .filter(|(i, _)| !done[*i])
            .max_by(|x, y| x.1.total_cmp(y.1))
            .map(|(i, d)| (i, d))
            .unwrap_or((usize::MAX, &0.0));
        if piv == usize::MAX || d <= RANK_TOL * scale {
            let worst = diag
                .iter()
                .enumerate()
                .filter(|(i, _)| !done[*i])
                .map(|(_, d)| *d)
                .fold(0.0, f64::min);
            if worst < -REPAIR_TOL * scale {
                return Err(MwmError::NotPositiveSemidefinite { pivot: worst });
            }
            break;
        }
        let root = d.sqrt();
        let mut col = vec![0.0; n];
        col[piv] = root;
        for i in (0..n).filter(|&i| !done[i] && i != piv) {
            let s: f64 = cols.iter().map(|c| c[i] * c[piv]).sum();
            col[i] = (a[(i, piv)] - s) / root;
            diag[i] -= col[i] * col[i];
        }
        done[piv] = true;
        diag[piv] = 0.0;
        cols.push(col);
    }
    Ok(DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]))
}

/// Checks the shape of a correlation matrix: symmetric, unit diagonal, entries in `[-1, 1]`.
pub fn check_correlation(r: &DMatrix<f64>) -> Result<()> {
    let n = r.nrows();
    if r.ncols() != n {
        return Err(MwmError::DimensionMismatch(format!("{}x{} is not square", n, r.ncols())));
    }
    for i in 0..n {
        if (r[(i, i)] - 1.0).abs() > 1e-9 {
            return Err(MwmError::InvalidConfig(format!("R[{i},{i}] = {} is not 1", r[(i, i)])));
        }
        for j in 0..i {
            let v = r[(i, j)];
            if (v - r[(j, i)]).abs() > 1e-9 {
                return Err(MwmError::InvalidConfig(format!("R is not symmetric at ({i},{j})")));
            }
            if !(-1.0 - 1e-12..=1.0 + 1e-12).contains(&v) {
                return Err(MwmError::InvalidConfig(format!("R[{i},{j}] = {v} outside [-1, 1]")));
            }
        }
    }
    Ok(())
}

/// `log det` of a symmetric positive definite matrix through its Cholesky factor.
pub fn log_det_spd(a: &DMatrix<f64>) -> Option<f64> {
    let chol = a.clone().cholesky()?;
    Some(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}
