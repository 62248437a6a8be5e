use crate::error::{LormaError, Result};
use crate::linalg::Matrix;

/// Thin Householder QR of a tall matrix: `m = q · r` with `q` of shape
/// `rows × cols` (orthonormal columns) and `r` upper triangular with a
/// non-negative diagonal.
pub fn qr_decompose(m: &Matrix) -> Result<(Matrix, Matrix)> {
    let (rows, cols) = m.shape();
    if rows < cols {
        return Err(LormaError::shape(
            "qr_decompose",
            format!("{rows}x{cols} is wide; need rows >= cols"),
        ));
    }
    let mut r: Vec<Vec<f64>> = (0..rows).map(|i| m.row(i).to_vec()).collect();
    let mut reflectors: Vec<Option<Vec<f64>>> = Vec::with_capacity(cols);

    for k in 0..cols {
        let below: f64 = (k + 1..rows).map(|i| r[i][k] * r[i][k]).sum();
        if below == 0.0 {
            // Column already triangular; skip the reflection.
            reflectors.push(None);
            continue;
        }
        let x0 = r[k][k];
        let norm = (x0 * x0 + below).sqrt();
        let alpha = if x0 >= 0.0 { -norm } else { norm };
        let mut v = vec![0.0; rows];
        v[k] = x0 - alpha;
        for i in k + 1..rows {
            v[i] = r[i][k];
        }
        let vnorm2: f64 = v[k..].iter().map(|x| x * x).sum();
        for j in k..cols {
            let p: f64 = (k..rows).map(|i| v[i] * r[i][j]).sum();
            let f = 2.0 * p / vnorm2;
            for i in k..rows {
                r[i][j] -= f * v[i];
            }
        }
        reflectors.push(Some(v));
    }

    // Q = H_0 H_1 … H_{n-1} applied to the first `cols` columns of I.
    let mut q: Vec<Vec<f64>> = (0..rows)
        .map(|i| (0..cols).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for (k, v) in reflectors.iter().enumerate().rev() {
        let Some(v) = v else { continue };
        let vnorm2: f64 = v[k..].iter().map(|x| x * x).sum();
        for j in 0..cols {
            let p: f64 = (k..rows).map(|i| v[i] * q[i][j]).sum();
            let f = 2.0 * p / vnorm2;
            for i in k..rows {
                q[i][j] -= f * v[i];
            }
        }
    }

    // Flip signs so diag(R) ≥ 0.
    for k in 0..cols {
        if r[k][k] < 0.0 {
            for j in k..cols {
                r[k][j] = -r[k][j];
            }
            for row in q.iter_mut() {
                row[k] = -row[k];
            }
        }
    }

    let q = Matrix::from_fn(rows, cols, |i, j| q[i][j]);
    let r = Matrix::from_fn(cols, cols, |i, j| if j >= i { r[i][j] } else { 0.0 });
    Ok((q, r))
}
