//! Constructive checks of when a target `M` is reachable from `M0` by a
//! single multiplier on the left or the right.

use serde::{Deserialize, Serialize};

use crate::adapters::MultiplySide;
use crate::error::{LormaError, Result};
use crate::linalg::{inverse, left_pseudo_inverse, numerical_rank, pseudo_inverse, Matrix};
use crate::rng::{derive_seed, RngState};

/// Relative residual below which a multiplier counts as exact.
pub const FEASIBILITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ExistenceCertificate {
    pub multiplier: Matrix,
    pub side: MultiplySide,
    /// `‖X·M0 − M‖_F` (pre) or `‖M0·X − M‖_F` (post).
    pub residual: f64,
    pub feasible: bool,
}

impl ExistenceCertificate {
    fn build(multiplier: Matrix, side: MultiplySide, m0: &Matrix, m: &Matrix) -> Result<Self> {
        let residual = residual_of(&multiplier, side, m0, m)?;
        Ok(Self {
            multiplier,
            side,
            residual,
            feasible: residual < FEASIBILITY_TOL * m.frobenius_norm().max(1.0),
        })
    }

    /// Residual recomputed from the stored multiplier.
    pub fn recompute_residual(&self, m0: &Matrix, m: &Matrix) -> Result<f64> {
        residual_of(&self.multiplier, self.side, m0, m)
    }
}

fn residual_of(x: &Matrix, side: MultiplySide, m0: &Matrix, m: &Matrix) -> Result<f64> {
    let reached = match side {
        MultiplySide::Pre => x.matmul(m0)?,
        MultiplySide::Post => m0.matmul(x)?,
    };
    Ok(reached.sub(m)?.frobenius_norm())
}

fn check_same_shape(op: &'static str, m0: &Matrix, m: &Matrix) -> Result<()> {
    if m0.shape() != m.shape() {
        return Err(LormaError::shape(
            op,
            format!("M0 {:?} vs M {:?}", m0.shape(), m.shape()),
        ));
    }
    Ok(())
}

/// `M_A = M·M0⁺` for full-column-rank `M0` (`n×m`, `n ≥ m`), so that
/// `M_A·M0 = M`.
pub fn construct_premultiplier(m0: &Matrix, m: &Matrix) -> Result<ExistenceCertificate> {
    check_same_shape("construct_premultiplier", m0, m)?;
    let pinv = left_pseudo_inverse(m0)?;
    ExistenceCertificate::build(m.matmul(&pinv)?, MultiplySide::Pre, m0, m)
}

/// Least-squares `X = M0⁺·M` minimizing `‖M0·X − M‖_F`. Not necessarily
/// feasible.
pub fn best_postmultiplier(m0: &Matrix, m: &Matrix) -> Result<ExistenceCertificate> {
    check_same_shape("best_postmultiplier", m0, m)?;
    let x = pseudo_inverse(m0)?.matmul(m)?;
    ExistenceCertificate::build(x, MultiplySide::Post, m0, m)
}

/// For invertible square `M0`: `(M·M0⁻¹, M0⁻¹·M)`.
pub fn square_both_sides(
    m0: &Matrix,
    m: &Matrix,
) -> Result<(ExistenceCertificate, ExistenceCertificate)> {
    check_same_shape("square_both_sides", m0, m)?;
    if !m0.is_square() {
        return Err(LormaError::shape(
            "square_both_sides",
            format!("M0 is {}x{}, need square", m0.rows(), m0.cols()),
        ));
    }
    let d = m0.rows();
    let rank = numerical_rank(m0)?;
    if rank != d {
        return Err(LormaError::RankDeficient {
            observed: rank,
            required: d,
        });
    }
    let inv = inverse(m0)?;
    Ok((
        ExistenceCertificate::build(m.matmul(&inv)?, MultiplySide::Pre, m0, m)?,
        ExistenceCertificate::build(inv.matmul(m)?, MultiplySide::Post, m0, m)?,
    ))
}

/// `M0 = [I_m; 0]`, `M = [0; I_m]` (both `2m×m`).
pub fn counterexample_pair(m: usize) -> (Matrix, Matrix) {
    let m0 = Matrix::from_fn(2 * m, m, |i, j| (i == j) as u8 as f64);
    let target = Matrix::from_fn(2 * m, m, |i, j| (i == j + m) as u8 as f64);
    (m0, target)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimResult {
    pub claim: String,
    pub passed: bool,
    pub detail: String,
}

fn full_rank_draw(rng: &mut RngState, rows: usize, cols: usize) -> Result<Matrix> {
    loop {
        let m = rng.gaussian_matrix(rows, cols, 1.0);
        if numerical_rank(&m)? == rows.min(cols) {
            return Ok(m);
        }
    }
}

/// Run every claim check with deterministic draws derived from `seed`.
pub fn run_claims(seed: u64) -> Result<Vec<ClaimResult>> {
    let mut out = Vec::new();

    // Left multiplier always exists for full-column-rank M0.
    let mut rng = RngState::new(derive_seed(seed, 1));
    let mut worst: f64 = 0.0;
    let mut all = true;
    for _ in 0..200 {
        let n = 1 + rng.below(32);
        let cols = 1 + rng.below(n);
        let m0 = full_rank_draw(&mut rng, n, cols)?;
        let m = rng.gaussian_matrix(n, cols, 1.0);
        let c = construct_premultiplier(&m0, &m)?;
        worst = worst.max(c.residual);
        all &= c.feasible && c.residual < FEASIBILITY_TOL;
    }
    out.push(ClaimResult {
        claim: "premultiplier_exists".into(),
        passed: all,
        detail: format!("200 full-column-rank instances, n <= 32, max residual {worst:.3e}"),
    });

    // Square invertible M0: both sides reachable.
    let mut rng = RngState::new(derive_seed(seed, 2));
    let (mut worst_pre, mut worst_post): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let m0 = full_rank_draw(&mut rng, 8, 8)?;
        let m = rng.gaussian_matrix(8, 8, 1.0);
        let (pre, post) = square_both_sides(&m0, &m)?;
        worst_pre = worst_pre.max(pre.residual);
        worst_post = worst_post.max(post.residual);
    }
    out.push(ClaimResult {
        claim: "square_both_sides".into(),
        passed: worst_pre < FEASIBILITY_TOL && worst_post < FEASIBILITY_TOL,
        detail: format!(
            "100 invertible 8x8 instances, max residual pre {worst_pre:.3e} post {worst_post:.3e}"
        ),
    });

    // Post-multiplication cannot move rows outside the row space of M0.
    let mut parts = Vec::new();
    let mut ok = true;
    for m in [1usize, 2, 4, 8] {
        let (m0, target) = counterexample_pair(m);
        let c = best_postmultiplier(&m0, &target)?;
        let want = (m as f64).sqrt();
        ok &= (c.residual - want).abs() < 1e-10 && !c.feasible;
        parts.push(format!("m={m}: {:?} (sqrt m = {want:?})", c.residual));
    }
    out.push(ClaimResult {
        claim: "post_counterexample".into(),
        passed: ok,
        detail: parts.join("; "),
    });

    // Tall random targets are essentially never reachable from the right.
    let mut rng = RngState::new(derive_seed(seed, 3));
    let mut reachable = 0;
    for _ in 0..100 {
        let n = 4 + rng.below(13);
        let cols = 1 + rng.below(n - 1);
        let m0 = full_rank_draw(&mut rng, n, cols)?;
        let m = rng.gaussian_matrix(n, cols, 1.0);
        if best_postmultiplier(&m0, &m)?.residual < 1e-6 {
            reachable += 1;
        }
    }
    out.push(ClaimResult {
        claim: "post_side_degrees_of_freedom".into(),
        passed: reachable == 0,
        detail: format!("{reachable}/100 random tall targets reachable by post-multiplication"),
    });

    Ok(out)
}
