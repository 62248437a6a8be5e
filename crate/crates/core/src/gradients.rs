//! Closed-form backward passes for every adapter variant, and a central
//! finite-difference checker for them.
//!
//! `upstream` is `dL/dh` for the forward output `h`. There is never a
//! gradient for `W0`.

use crate::adapters::{forward, AdapterState, AdapterVariant, MultiplySide};
use crate::error::{LormaError, Result};
use crate::inflation::{deflate_pi, inflate_pi};
use crate::linalg::Matrix;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-4;
/// Floor of the relative-error denominator.
pub const REL_ERROR_FLOOR: f64 = 1e-8;
/// Largest dimension [`grad_check`] accepts.
pub const GRAD_CHECK_MAX_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub d_b: Matrix,
    pub d_a: Matrix,
    pub d_x: Matrix,
}

pub fn backward(state: &AdapterState, x: &Matrix, upstream: &Matrix) -> Result<GradientBundle> {
    let (d, k) = state.w0().shape();
    if x.rows() != k {
        return Err(LormaError::shape(
            "backward",
            format!("input has {} rows, W0 is {d}x{k}", x.rows()),
        ));
    }
    if upstream.shape() != (d, x.cols()) {
        return Err(LormaError::shape(
            "backward",
            format!(
                "upstream is {:?}, forward output is {:?}",
                upstream.shape(),
                (d, x.cols())
            ),
        ));
    }
    let s = state.scaling();
    let (w0, b, a) = (state.w0(), state.b(), state.a());
    let g = upstream;

    match (state.variant(), state.side()) {
        (AdapterVariant::Lora, _) => {
            // h = W0 x + s B (A x)
            let ax = a.matmul(x)?;
            let bt_g = b.transpose().matmul(g)?;
            Ok(GradientBundle {
                d_b: g.matmul(&ax.transpose())?.scale(s)?,
                d_a: bt_g.matmul(&x.transpose())?.scale(s)?,
                d_x: w0
                    .transpose()
                    .matmul(g)?
                    .add(&a.transpose().matmul(&bt_g)?.scale(s)?)?,
            })
        }
        (AdapterVariant::LormaNaive, MultiplySide::Pre) => {
            // h = B (A u), u = W0 x
            let u = w0.matmul(x)?;
            let v = a.matmul(&u)?;
            let bt_g = b.transpose().matmul(g)?;
            Ok(GradientBundle {
                d_b: g.matmul(&v.transpose())?,
                d_a: bt_g.matmul(&u.transpose())?,
                d_x: w0.transpose().matmul(&a.transpose().matmul(&bt_g)?)?,
            })
        }
        (AdapterVariant::LormaNaive, MultiplySide::Post) => {
            // h = W0 (B (A x))
            let v = a.matmul(x)?;
            let g_w = w0.transpose().matmul(g)?;
            let bt_gw = b.transpose().matmul(&g_w)?;
            Ok(GradientBundle {
                d_b: g_w.matmul(&v.transpose())?,
                d_a: bt_gw.matmul(&x.transpose())?,
                d_x: a.transpose().matmul(&bt_gw)?,
            })
        }
        (AdapterVariant::LormaPlus, MultiplySide::Pre) => {
            // h = u + s B (A u), u = W0 x
            let u = w0.matmul(x)?;
            let au = a.matmul(&u)?;
            let bt_g = b.transpose().matmul(g)?;
            let g_u = g.add(&a.transpose().matmul(&bt_g)?.scale(s)?)?;
            Ok(GradientBundle {
                d_b: g.matmul(&au.transpose())?.scale(s)?,
                d_a: bt_g.matmul(&u.transpose())?.scale(s)?,
                d_x: w0.transpose().matmul(&g_u)?,
            })
        }
        (AdapterVariant::LormaPlus, MultiplySide::Post) => {
            // h = W0 v, v = x + s B (A x)
            let ax = a.matmul(x)?;
            let g_v = w0.transpose().matmul(g)?;
            let bt_gv = b.transpose().matmul(&g_v)?;
            Ok(GradientBundle {
                d_b: g_v.matmul(&ax.transpose())?.scale(s)?,
                d_a: bt_gv.matmul(&x.transpose())?.scale(s)?,
                d_x: g_v.add(&a.transpose().matmul(&bt_gv)?.scale(s)?)?,
            })
        }
        (AdapterVariant::LormaPi, side) => {
            // h = M u (pre, u = W0 x) or W0 (M x) (post), M = I_π(s B A).
            let m = inflate_pi(&state.scaled_product()?)?;
            let (d_m, d_x) = match side {
                MultiplySide::Pre => {
                    let u = w0.matmul(x)?;
                    let d_x = w0.transpose().matmul(&m.transpose().matmul(g)?)?;
                    (g.matmul(&u.transpose())?, d_x)
                }
                MultiplySide::Post => {
                    let g_v = w0.transpose().matmul(g)?;
                    let d_x = m.transpose().matmul(&g_v)?;
                    (g_v.matmul(&x.transpose())?, d_x)
                }
            };
            // The rearrangement's adjoint is its inverse.
            let d_p = deflate_pi(&d_m)?.scale(s)?;
            Ok(GradientBundle {
                d_b: d_p.matmul(&a.transpose())?,
                d_a: b.transpose().matmul(&d_p)?,
                d_x,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    B,
    A,
}

impl std::fmt::Display for Param {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Param::B => "b",
            Param::A => "a",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub param: Param,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Number of coordinates perturbed.
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Probe loss `½‖forward(state, x) − target‖²_F`.
pub fn probe_loss(state: &AdapterState, x: &Matrix, target: &Matrix) -> Result<f64> {
    let r = forward(state, x)?.sub(target)?;
    Ok(0.5 * r.frobenius_dot(&r)?)
}

/// Compare [`backward`] against central differences on every entry of `B`
/// and `A` for the probe loss.
pub fn grad_check(state: &AdapterState, x: &Matrix, target: &Matrix) -> Result<GradCheckReport> {
    grad_check_with(state, x, target, backward)
}

/// [`grad_check`] against an arbitrary backward implementation.
pub fn grad_check_with<F>(
    state: &AdapterState,
    x: &Matrix,
    target: &Matrix,
    backward_fn: F,
) -> Result<GradCheckReport>
where
    F: Fn(&AdapterState, &Matrix, &Matrix) -> Result<GradientBundle>,
{
    let (d, k) = state.w0().shape();
    let largest = d.max(k).max(x.cols());
    if largest > GRAD_CHECK_MAX_DIM {
        return Err(LormaError::Config(format!(
            "grad_check is limited to dimensions <= {GRAD_CHECK_MAX_DIM}, got {largest}"
        )));
    }
    let upstream = forward(state, x)?.sub(target)?;
    let grads = backward_fn(state, x, &upstream)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        param: Param::B,
        row: 0,
        col: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for param in [Param::B, Param::A] {
        let (base, analytic) = match param {
            Param::B => (state.b(), &grads.d_b),
            Param::A => (state.a(), &grads.d_a),
        };
        if analytic.shape() != base.shape() {
            return Err(LormaError::shape(
                "grad_check",
                format!("gradient for {param} has shape {:?}", analytic.shape()),
            ));
        }
        for i in 0..base.rows() {
            for j in 0..base.cols() {
                let eval = |delta: f64| -> Result<f64> {
                    let mut p = base.clone();
                    p.set(i, j, base.get(i, j) + delta);
                    let st = match param {
                        Param::B => state.with_factors(p, state.a().clone())?,
                        Param::A => state.with_factors(state.b().clone(), p)?,
                    };
                    probe_loss(&st, x, target)
                };
                let numeric = (eval(FD_STEP)? - eval(-FD_STEP)?) / (2.0 * FD_STEP);
                let a = analytic.get(i, j);
                let err = relative_error(a, numeric);
                report.checked += 1;
                if err > report.max_rel_error || report.checked == 1 {
                    report.max_rel_error = err;
                    report.param = param;
                    report.row = i;
                    report.col = j;
                    report.analytic = a;
                    report.numeric = numeric;
                }
            }
        }
    }
    Ok(report)
}
