//! Eigenvalues of general real square matrices: Householder reduction to
//! upper Hessenberg form followed by Francis double-shift QR.

use num_complex::Complex64;

use crate::error::{LormaError, Result};
use crate::linalg::Matrix;

/// Per-eigenvalue iteration cap before giving up.
const MAX_ITERS_PER_EIGENVALUE: usize = 60;

/// All eigenvalues, sorted by descending modulus (ties: real part, then
/// imaginary part, descending). Complex pairs appear as conjugates.
pub fn eigenvalues(m: &Matrix) -> Result<Vec<Complex64>> {
    if !m.is_square() {
        return Err(LormaError::shape(
            "eigenvalues",
            format!("{}x{} is not square", m.rows(), m.cols()),
        ));
    }
    let n = m.rows();
    // 1-based working copy keeps the QR sweep indexing readable.
    let mut a = vec![vec![0.0; n + 1]; n + 1];
    for i in 0..n {
        for j in 0..n {
            a[i + 1][j + 1] = m.get(i, j);
        }
    }
    hessenberg(&mut a, n);
    let mut vals = hqr(&mut a, n)?;
    vals.sort_by(|x, y| {
        y.norm()
            .total_cmp(&x.norm())
            .then(y.re.total_cmp(&x.re))
            .then(y.im.total_cmp(&x.im))
    });
    Ok(vals)
}

fn hessenberg(a: &mut [Vec<f64>], n: usize) {
    for k in 1..n.saturating_sub(1) {
        // Reflect column k below the subdiagonal.
        let alpha_sq: f64 = (k + 1..=n).map(|i| a[i][k] * a[i][k]).sum();
        let below: f64 = (k + 2..=n).map(|i| a[i][k] * a[i][k]).sum();
        if below == 0.0 {
            continue;
        }
        let x0 = a[k + 1][k];
        let norm = alpha_sq.sqrt();
        let alpha = if x0 >= 0.0 { -norm } else { norm };
        let mut v = vec![0.0; n + 1];
        v[k + 1] = x0 - alpha;
        for i in k + 2..=n {
            v[i] = a[i][k];
        }
        let vv: f64 = v[k + 1..].iter().map(|x| x * x).sum();
        for j in 1..=n {
            let p: f64 = (k + 1..=n).map(|i| v[i] * a[i][j]).sum();
            let f = 2.0 * p / vv;
            for i in k + 1..=n {
                a[i][j] -= f * v[i];
            }
        }
        for i in 1..=n {
            let p: f64 = (k + 1..=n).map(|j| a[i][j] * v[j]).sum();
            let f = 2.0 * p / vv;
            for j in k + 1..=n {
                a[i][j] -= f * v[j];
            }
        }
        for i in k + 2..=n {
            a[i][k] = 0.0;
        }
    }
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Francis double-shift QR on a 1-based upper Hessenberg matrix.
fn hqr(a: &mut [Vec<f64>], n: usize) -> Result<Vec<Complex64>> {
    let mut wr = vec![0.0; n + 1];
    let mut wi = vec![0.0; n + 1];
    let mut anorm = 0.0;
    for i in 1..=n {
        for j in i.saturating_sub(1).max(1)..=n {
            anorm += a[i][j].abs();
        }
    }
    let mut nn = n;
    let mut t = 0.0;
    let (mut p, mut q, mut r): (f64, f64, f64);
    let (mut x, mut y, mut z, mut w);
    while nn >= 1 {
        let mut its = 0;
        loop {
            let mut l = nn;
            while l >= 2 {
                let mut s = a[l - 1][l - 1].abs() + a[l][l].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[l][l - 1].abs() + s == s {
                    a[l][l - 1] = 0.0;
                    break;
                }
                l -= 1;
            }
            x = a[nn][nn];
            if l == nn {
                wr[nn] = x + t;
                wi[nn] = 0.0;
                nn -= 1;
            } else {
                y = a[nn - 1][nn - 1];
                w = a[nn][nn - 1] * a[nn - 1][nn];
                if l == nn - 1 {
                    p = 0.5 * (y - x);
                    q = p * p + w;
                    z = q.abs().sqrt();
                    x += t;
                    if q >= 0.0 {
                        z = p + sign(z, p);
                        wr[nn - 1] = x + z;
                        wr[nn] = x + z;
                        if z != 0.0 {
                            wr[nn] = x - w / z;
                        }
                        wi[nn - 1] = 0.0;
                        wi[nn] = 0.0;
                    } else {
                        wr[nn - 1] = x + p;
                        wr[nn] = x + p;
                        wi[nn - 1] = -z;
                        wi[nn] = z;
                    }
                    nn -= 2;
                } else {
                    if its == MAX_ITERS_PER_EIGENVALUE {
                        return Err(LormaError::NumericalFailure {
                            op: "eigenvalues",
                            detail: format!(
                                "QR iteration exceeded {MAX_ITERS_PER_EIGENVALUE} steps"
                            ),
                        });
                    }
                    if its > 0 && its % 10 == 0 {
                        // Exceptional shift.
                        t += x;
                        for i in 1..=nn {
                            a[i][i] -= x;
                        }
                        let s = a[nn][nn - 1].abs() + a[nn - 1][nn - 2].abs();
                        x = 0.75 * s;
                        y = x;
                        w = -0.4375 * s * s;
                    }
                    its += 1;
                    let mut m = nn - 2;
                    loop {
                        z = a[m][m];
                        r = x - z;
                        let s = y - z;
                        p = (r * s - w) / a[m + 1][m] + a[m][m + 1];
                        q = a[m + 1][m + 1] - z - r - s;
                        r = a[m + 2][m + 1];
                        let s = p.abs() + q.abs() + r.abs();
                        p /= s;
                        q /= s;
                        r /= s;
                        if m == l {
                            break;
                        }
                        let u = a[m][m - 1].abs() * (q.abs() + r.abs());
                        let v = p.abs() * (a[m - 1][m - 1].abs() + z.abs() + a[m + 1][m + 1].abs());
                        if u + v == v {
                            break;
                        }
                        m -= 1;
                    }
                    for i in m + 2..=nn {
                        a[i][i - 2] = 0.0;
                        if i != m + 2 {
                            a[i][i - 3] = 0.0;
                        }
                    }
                    let mut k = m;
                    while k < nn {
                        if k != m {
                            p = a[k][k - 1];
                            q = a[k + 1][k - 1];
                            r = 0.0;
                            if k != nn - 1 {
                                r = a[k + 2][k - 1];
                            }
                            x = p.abs() + q.abs() + r.abs();
                            if x != 0.0 {
                                p /= x;
                                q /= x;
                                r /= x;
                            }
                        }
                        let s = sign((p * p + q * q + r * r).sqrt(), p);
                        if s != 0.0 {
                            if k == m {
                                if l != m {
                                    a[k][k - 1] = -a[k][k - 1];
                                }
                            } else {
                                a[k][k - 1] = -s * x;
                            }
                            p += s;
                            x = p / s;
                            y = q / s;
                            z = r / s;
                            q /= p;
                            r /= p;
                            for j in k..=nn {
                                p = a[k][j] + q * a[k + 1][j];
                                if k != nn - 1 {
                                    p += r * a[k + 2][j];
                                    a[k + 2][j] -= p * z;
                                }
                                a[k + 1][j] -= p * y;
                                a[k][j] -= p * x;
                            }
                            let mmin = if nn < k + 3 { nn } else { k + 3 };
                            for i in l..=mmin {
                                p = x * a[i][k] + y * a[i][k + 1];
                                if k != nn - 1 {
                                    p += z * a[i][k + 2];
                                    a[i][k + 2] -= p * r;
                                }
                                a[i][k + 1] -= p * q;
                                a[i][k] -= p;
                            }
                        }
                        k += 1;
                    }
                }
            }
            if nn < 2 || l + 1 >= nn {
                break;
            }
        }
    }
    Ok((1..=n).map(|i| Complex64::new(wr[i], wi[i])).collect())
}
