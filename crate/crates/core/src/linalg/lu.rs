use crate::error::{LormaError, Result};
use crate::linalg::Matrix;

/// Inverse by Gauss-Jordan elimination with partial pivoting.
///
/// Singularity is judged against the numerical rank tolerance: a pivot no
/// larger than `n·eps·max|m|` is treated as zero.
pub fn inverse(m: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return Err(LormaError::shape(
            "inverse",
            format!("{}x{} is not square", m.rows(), m.cols()),
        ));
    }
    let n = m.rows();
    let tol = n as f64 * f64::EPSILON * m.max_abs();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
    let mut inv: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        if a[pivot][col].abs() <= tol {
            return Err(LormaError::RankDeficient {
                observed: col,
                required: n,
            });
        }
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let p = a[col][col];
        for j in 0..n {
            a[col][j] /= p;
            inv[col][j] /= p;
        }
        for i in 0..n {
            if i == col {
                continue;
            }
            let f = a[i][col];
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                a[i][j] -= f * a[col][j];
                inv[i][j] -= f * inv[col][j];
            }
        }
    }
    Matrix::new(n, n, inv.into_iter().flatten().collect())
}
