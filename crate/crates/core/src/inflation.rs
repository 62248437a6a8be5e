//! Rank-inflation operators applied to the low-rank product `BA`.
//!
//! * [`inflate_pi`] rotates row `i` cyclically right by `i` places. It only
//!   rearranges entries, so it is a linear bijection whose adjoint and
//!   inverse are both [`deflate_pi`].
//! * [`inflate_plus`] returns `s·BA + I`, whose rank is at least `d − r`.

use serde::{Deserialize, Serialize};

use crate::error::{LormaError, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InflationKind {
    None,
    Permutation,
    Additive,
}

fn require_square(op: &'static str, m: &Matrix) -> Result<usize> {
    if m.is_square() {
        Ok(m.rows())
    } else {
        Err(LormaError::shape(
            op,
            format!("{}x{} is not square", m.rows(), m.cols()),
        ))
    }
}

/// Entry `(i, j)` moves to `(i, (j + i) mod d)`.
pub fn inflate_pi(m: &Matrix) -> Result<Matrix> {
    let d = require_square("inflate_pi", m)?;
    // out(i, j) = m(i, j - i mod d)
    Ok(Matrix::from_fn(d, d, |i, j| m.get(i, (j + d - i % d) % d)))
}

/// Inverse (and adjoint) of [`inflate_pi`]: row `i` rotated left by `i`.
pub fn deflate_pi(m: &Matrix) -> Result<Matrix> {
    let d = require_square("deflate_pi", m)?;
    Ok(Matrix::from_fn(d, d, |i, j| m.get(i, (j + i) % d)))
}

/// `s·ba + I`.
pub fn inflate_plus(ba: &Matrix, s: f64) -> Result<Matrix> {
    require_square("inflate_plus", ba)?;
    if !s.is_finite() {
        return Err(LormaError::Config(format!("scaling {s} is not finite")));
    }
    ba.scale(s)?.add_scaled_identity(1.0)
}

/// Apply the inflation selected by `kind` to an already scaled product.
pub fn apply(kind: InflationKind, scaled_ba: &Matrix) -> Result<Matrix> {
    match kind {
        InflationKind::None => Ok(scaled_ba.clone()),
        InflationKind::Permutation => inflate_pi(scaled_ba),
        InflationKind::Additive => inflate_plus(scaled_ba, 1.0),
    }
}
