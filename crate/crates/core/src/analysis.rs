//! Metrics for comparing two weight updates, with a norm-matched random
//! baseline for reference.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{LormaError, Result};
use crate::linalg::{eigenvalues, qr_decompose, svd, Matrix};
use crate::rng::RngState;

fn same_shape(op: &'static str, w1: &Matrix, w2: &Matrix) -> Result<()> {
    if w1.shape() != w2.shape() {
        return Err(LormaError::shape(
            op,
            format!("{:?} vs {:?}", w1.shape(), w2.shape()),
        ));
    }
    Ok(())
}

pub fn frobenius_distance(w1: &Matrix, w2: &Matrix) -> Result<f64> {
    same_shape("frobenius_distance", w1, w2)?;
    Ok(w1.sub(w2)?.frobenius_norm())
}

/// Cosine similarity of the flattened matrices.
pub fn flattened_cosine(w1: &Matrix, w2: &Matrix) -> Result<f64> {
    same_shape("flattened_cosine", w1, w2)?;
    let (n1, n2) = (w1.frobenius_norm(), w2.frobenius_norm());
    if n1 == 0.0 || n2 == 0.0 {
        return Err(LormaError::UndefinedMetric {
            metric: "flattened_cosine",
            detail: "zero matrix".into(),
        });
    }
    Ok((w1.frobenius_dot(w2)? / (n1 * n2)).clamp(-1.0, 1.0))
}

fn check_r(metric: &'static str, r: usize, max: usize) -> Result<()> {
    if r == 0 || r > max {
        return Err(LormaError::UndefinedMetric {
            metric,
            detail: format!("r = {r} outside 1..={max}"),
        });
    }
    Ok(())
}

/// `Σ_{i<r} (σ_i(w1) − σ_i(w2))²`.
pub fn top_r_singular_ssd(w1: &Matrix, w2: &Matrix, r: usize) -> Result<f64> {
    same_shape("top_r_singular_ssd", w1, w2)?;
    check_r("top_r_singular_ssd", r, w1.rows().min(w1.cols()))?;
    let (s1, s2) = (svd(w1)?.sigma, svd(w2)?.sigma);
    Ok((0..r).map(|i| (s1[i] - s2[i]).powi(2)).sum())
}

/// `Σ_{i<r} (|λ_i(w1)| − |λ_i(w2)|)²` with eigenvalues ordered by modulus.
pub fn top_r_eigen_ssd(w1: &Matrix, w2: &Matrix, r: usize) -> Result<f64> {
    same_shape("top_r_eigen_ssd", w1, w2)?;
    if !w1.is_square() {
        return Err(LormaError::shape(
            "top_r_eigen_ssd",
            format!("{}x{} is not square", w1.rows(), w1.cols()),
        ));
    }
    check_r("top_r_eigen_ssd", r, w1.rows())?;
    let (e1, e2) = (eigenvalues(w1)?, eigenvalues(w2)?);
    Ok((0..r).map(|i| (e1[i].norm() - e2[i].norm()).powi(2)).sum())
}

/// Orthonormal basis of the span of the top-`k` left singular vectors.
fn top_left_basis(w: &Matrix, k: usize) -> Result<Matrix> {
    let f = svd(w)?;
    let rank = if w.max_abs() == 0.0 { 0 } else { f.rank() };
    if k == 0 || k > rank {
        return Err(LormaError::RankDeficient {
            observed: rank,
            required: k.max(1),
        });
    }
    // Re-orthonormalize to wash out Jacobi rounding.
    let (q, _) = qr_decompose(&f.u.leading_columns(k))?;
    Ok(q.leading_columns(k))
}

/// Smallest principal angle between the top-`k` left singular subspaces,
/// `arccos(σ_max(Q1ᵀ Q2))`, in `[0, π/2]`.
pub fn principal_angle_theta1(w1: &Matrix, w2: &Matrix, k: usize) -> Result<f64> {
    if w1.rows() != w2.rows() {
        return Err(LormaError::shape(
            "principal_angle_theta1",
            format!("row counts {} vs {}", w1.rows(), w2.rows()),
        ));
    }
    let q1 = top_left_basis(w1, k)?;
    let q2 = top_left_basis(w2, k)?;
    let cross = q1.transpose().matmul(&q2)?;
    let cos = svd(&cross)?.sigma_max().clamp(-1.0, 1.0);
    Ok(cos.acos().clamp(0.0, std::f64::consts::FRAC_PI_2))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub frobenius: f64,
    pub cosine: f64,
    pub sv_ssd_r: f64,
    /// `None` when the matrices are not square.
    pub eig_ssd_r: Option<f64>,
    pub theta1: f64,
    pub r_used: usize,
}

impl MetricsReport {
    /// All five metrics for one pair. `r` is capped at both numerical ranks
    /// so `theta1` stays defined; the cap is reported as `r_used`.
    pub fn compute(w1: &Matrix, w2: &Matrix, r: usize) -> Result<Self> {
        same_shape("compare_updates", w1, w2)?;
        let cosine = flattened_cosine(w1, w2)?;
        let rank1 = crate::linalg::numerical_rank(w1)?;
        let rank2 = crate::linalg::numerical_rank(w2)?;
        let r_used = r.min(rank1).min(rank2);
        check_r("compare_updates", r_used, w1.rows().min(w1.cols()))?;
        Ok(Self {
            frobenius: frobenius_distance(w1, w2)?,
            cosine,
            sv_ssd_r: top_r_singular_ssd(w1, w2, r_used)?,
            eig_ssd_r: if w1.is_square() {
                Some(top_r_eigen_ssd(w1, w2, r_used)?)
            } else {
                None
            },
            theta1: principal_angle_theta1(w1, w2, r_used)?,
            r_used,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub ref_vs_test: MetricsReport,
    pub ref_vs_random: MetricsReport,
}

impl Comparison {
    /// `metric,ref_vs_test,ref_vs_random` rows; `NA` marks a skipped metric.
    pub fn to_csv(&self) -> String {
        let (t, b) = (&self.ref_vs_test, &self.ref_vs_random);
        let na = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:?}"));
        let mut out = String::from("metric,ref_vs_test,ref_vs_random\n");
        let _ = writeln!(out, "frobenius,{:?},{:?}", t.frobenius, b.frobenius);
        let _ = writeln!(out, "cosine,{:?},{:?}", t.cosine, b.cosine);
        let _ = writeln!(out, "sv_ssd_r,{:?},{:?}", t.sv_ssd_r, b.sv_ssd_r);
        let _ = writeln!(out, "eig_ssd_r,{},{}", na(t.eig_ssd_r), na(b.eig_ssd_r));
        let _ = writeln!(out, "theta1,{:?},{:?}", t.theta1, b.theta1);
        let _ = writeln!(out, "r_used,{},{}", t.r_used, b.r_used);
        out
    }
}

/// I.i.d. Gaussian matrix rescaled to `target_norm`.
pub fn norm_matched_random(rows: usize, cols: usize, target_norm: f64, seed: u64) -> Matrix {
    let g = RngState::new(seed).gaussian_matrix(rows, cols, 1.0);
    let n = g.frobenius_norm();
    Matrix::from_fn(rows, cols, |i, j| g.get(i, j) * target_norm / n)
}

/// Compare `dw_test` against `dw_ref`, and a seeded random matrix with the
/// same Frobenius norm as `dw_ref` against `dw_ref`.
pub fn compare_updates(dw_ref: &Matrix, dw_test: &Matrix, r: usize, seed: u64) -> Result<Comparison> {
    same_shape("compare_updates", dw_ref, dw_test)?;
    let random = norm_matched_random(dw_ref.rows(), dw_ref.cols(), dw_ref.frobenius_norm(), seed);
    Ok(Comparison {
        ref_vs_test: MetricsReport::compute(dw_ref, dw_test, r)?,
        ref_vs_random: MetricsReport::compute(dw_ref, &random, r)?,
    })
}
