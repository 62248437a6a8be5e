//! Singular value decomposition by one-sided (Hestenes) Jacobi rotations,
//! plus the rank and pseudo-inverse routines built on it.

use crate::error::{LormaError, Result};
use crate::linalg::Matrix;

/// Maximum number of full Jacobi sweeps.
pub const MAX_SWEEPS: usize = 60;
/// A column pair counts as orthogonal once `|g_ij| ≤ tol·sqrt(g_ii·g_jj)`.
pub const ORTHOGONALITY_TOL: f64 = 1e-12;

/// Thin SVD `m = u · diag(sigma) · vt` with `p = min(rows, cols)` factors.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// `rows × p`, orthonormal columns.
    pub u: Matrix,
    /// Non-increasing, non-negative.
    pub sigma: Vec<f64>,
    /// `p × cols`, orthonormal rows.
    pub vt: Matrix,
}

impl SvdResult {
    pub fn sigma_max(&self) -> f64 {
        self.sigma.first().copied().unwrap_or(0.0)
    }

    /// Rank under the default tolerance `max(rows, cols)·eps·σ_max`.
    pub fn rank(&self) -> usize {
        let tol = self.default_tolerance();
        self.sigma.iter().filter(|&&s| s > tol).count()
    }

    pub fn default_tolerance(&self) -> f64 {
        let n = self.u.rows().max(self.vt.cols()) as f64;
        n * f64::EPSILON * self.sigma_max()
    }

    /// `u · diag(sigma) · vt`.
    pub fn reconstruct(&self) -> Matrix {
        let us = Matrix::from_fn(self.u.rows(), self.u.cols(), |i, j| {
            self.u.get(i, j) * self.sigma[j]
        });
        us.matmul(&self.vt).expect("svd factors are conformant")
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi on the columns of a tall (`rows ≥ cols`) matrix.
fn jacobi_tall(m: &Matrix) -> Result<SvdResult> {
    let (rows, n) = m.shape();
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| m.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let alpha = dot(&w[i], &w[i]);
                let beta = dot(&w[j], &w[j]);
                let gamma = dot(&w[i], &w[j]);
                if gamma == 0.0 || gamma.abs() <= ORTHOGONALITY_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, i, j, c, s);
                rotate(&mut v, i, j, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LormaError::NumericalFailure {
            op: "svd",
            detail: format!("no convergence after {MAX_SWEEPS} sweeps"),
        });
    }

    let norms: Vec<f64> = w.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));

    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let mut u_cols: Vec<Option<Vec<f64>>> = order
        .iter()
        .map(|&j| {
            let s = norms[j];
            if s > f64::MIN_POSITIVE {
                Some(w[j].iter().map(|x| x / s).collect())
            } else {
                None
            }
        })
        .collect();
    complete_orthonormal(&mut u_cols, rows);

    let u = Matrix::from_fn(rows, n, |i, j| u_cols[j].as_ref().unwrap()[i]);
    let vt = Matrix::from_fn(n, n, |i, j| v[order[i]][j]);
    Ok(SvdResult { u, sigma, vt })
}

fn rotate(cols: &mut [Vec<f64>], i: usize, j: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(j);
    let (a, b) = (&mut lo[i], &mut hi[0]);
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let xi = *x;
        let yj = *y;
        *x = c * xi - s * yj;
        *y = s * xi + c * yj;
    }
}

/// Replace missing columns with unit vectors orthogonal to all others
/// (two-pass Gram-Schmidt over the standard basis).
fn complete_orthonormal(cols: &mut [Option<Vec<f64>>], dim: usize) {
    if cols.iter().all(Option::is_some) {
        return;
    }
    let mut candidate = 0;
    for k in 0..cols.len() {
        if cols[k].is_some() {
            continue;
        }
        loop {
            assert!(candidate < dim, "cannot complete orthonormal basis");
            let mut e = vec![0.0; dim];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for other in cols.iter().flatten() {
                    let p = dot(&e, other);
                    for (x, o) in e.iter_mut().zip(other) {
                        *x -= p * o;
                    }
                }
            }
            let nrm = dot(&e, &e).sqrt();
            if nrm > 1e-8 {
                cols[k] = Some(e.iter().map(|x| x / nrm).collect());
                break;
            }
        }
    }
}

/// Thin SVD by one-sided Jacobi.
pub fn svd(m: &Matrix) -> Result<SvdResult> {
    if m.rows() >= m.cols() {
        jacobi_tall(m)
    } else {
        let t = jacobi_tall(&m.transpose())?;
        Ok(SvdResult {
            u: t.vt.transpose(),
            sigma: t.sigma,
            vt: t.u.transpose(),
        })
    }
}

/// Number of singular values above `max(rows, cols)·eps·σ_max`.
pub fn numerical_rank(m: &Matrix) -> Result<usize> {
    if m.max_abs() == 0.0 {
        return Ok(0);
    }
    Ok(svd(m)?.rank())
}

/// Left inverse `M0⁺ = V Σ⁻¹ Uᵀ` of a full-column-rank matrix.
pub fn left_pseudo_inverse(m0: &Matrix) -> Result<Matrix> {
    if m0.rows() < m0.cols() {
        return Err(LormaError::shape(
            "left_pseudo_inverse",
            format!("{}x{} is wide; need rows >= cols", m0.rows(), m0.cols()),
        ));
    }
    let f = svd(m0)?;
    let rank = if m0.max_abs() == 0.0 { 0 } else { f.rank() };
    if rank != m0.cols() {
        return Err(LormaError::RankDeficient {
            observed: rank,
            required: m0.cols(),
        });
    }
    pinv_from_svd(&f, m0.cols())
}

/// Moore-Penrose pseudo-inverse, truncating singular values at the default
/// rank tolerance.
pub fn pseudo_inverse(m: &Matrix) -> Result<Matrix> {
    if m.max_abs() == 0.0 {
        return Ok(Matrix::zeros(m.cols(), m.rows()));
    }
    let f = svd(m)?;
    let rank = f.rank();
    pinv_from_svd(&f, rank)
}

fn pinv_from_svd(f: &SvdResult, rank: usize) -> Result<Matrix> {
    // V Σ⁺ Uᵀ with only the leading `rank` triplets.
    let (n, m) = (f.vt.cols(), f.u.rows());
    let out = Matrix::from_fn(n, m, |i, j| {
        (0..rank)
            .map(|l| f.vt.get(l, i) * f.u.get(j, l) / f.sigma[l])
            .sum()
    });
    Ok(out)
}
