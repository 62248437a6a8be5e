mod common;

use common::*;
use lorma_core::linalg::io::{decode_snapshot, encode_snapshot, from_csv, read_snapshot, to_csv, write_snapshot};
use lorma_core::linalg::{
    eigenvalues, inverse, left_pseudo_inverse, numerical_rank, pseudo_inverse, qr_decompose, svd,
};
use lorma_core::rng::RngState;
use lorma_core::{LormaError, Matrix};
use proptest::prelude::*;

fn random(seed: u64, rows: usize, cols: usize) -> Matrix {
    RngState::new(seed).gaussian_matrix(rows, cols, 1.0)
}

fn orthonormality_error(q: &Matrix) -> f64 {
    let g = q.transpose().matmul(q).unwrap();
    g.max_abs_diff(&Matrix::identity(q.cols())).unwrap()
}

fn low_rank(seed: u64, rows: usize, cols: usize, t: usize) -> Matrix {
    let mut rng = RngState::new(seed);
    let u = rng.gaussian_matrix(rows, t, 1.0);
    let v = rng.gaussian_matrix(t, cols, 1.0);
    u.matmul(&v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn matmul_matches_naive_product(seed in any::<u64>(), n in 1usize..20, m in 1usize..20, p in 1usize..20) {
        let a = random(seed, n, m);
        let b = random(seed ^ 1, m, p);
        let want = naive_matmul(&to_rows(&a), &to_rows(&b));
        let got = to_rows(&a.matmul(&b).unwrap());
        prop_assert!(max_abs_diff(&got, &want) <= 1e-12 * (m as f64));
    }

    #[test]
    fn matmul_is_associative(seed in any::<u64>(), n in 1usize..12, m in 1usize..12, p in 1usize..12, q in 1usize..12) {
        let a = random(seed, n, m);
        let b = random(seed ^ 2, m, p);
        let c = random(seed ^ 3, p, q);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        let scale = 1.0 + left.max_abs();
        prop_assert!(left.max_abs_diff(&right).unwrap() <= 1e-12 * scale * (m * p) as f64);
    }

    #[test]
    fn svd_reconstructs_and_is_orthonormal(seed in any::<u64>(), rows in 1usize..=64, cols in 1usize..=64) {
        let m = random(seed, rows, cols);
        let f = svd(&m).unwrap();
        let p = rows.min(cols);
        prop_assert_eq!(f.u.shape(), (rows, p));
        prop_assert_eq!(f.vt.shape(), (p, cols));
        prop_assert!(f.sigma.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(f.sigma.iter().all(|&s| s >= 0.0));
        prop_assert!(orthonormality_error(&f.u) < 1e-10);
        prop_assert!(orthonormality_error(&f.vt.transpose()) < 1e-10);
        prop_assert!(f.reconstruct().max_abs_diff(&m).unwrap() < 1e-10 * (1.0 + f.sigma_max()));
    }

    #[test]
    fn singular_values_match_gram_oracle(seed in any::<u64>(), rows in 1usize..=24, cols in 1usize..=24) {
        let m = random(seed, rows, cols);
        let got = svd(&m).unwrap().sigma;
        let want = singular_values(&to_rows(&m));
        let smax = want[0];
        for (g, w) in got.iter().zip(&want) {
            // Gram squaring costs half the digits on the small values.
            prop_assert!((g - w).abs() < 1e-7 * smax, "{} vs {}", g, w);
        }
    }

    #[test]
    fn qr_factors(seed in any::<u64>(), cols in 1usize..=32, extra in 0usize..=32) {
        let rows = cols + extra;
        let m = random(seed, rows, cols);
        let (q, r) = qr_decompose(&m).unwrap();
        prop_assert!(orthonormality_error(&q) < 1e-12);
        for i in 0..cols {
            prop_assert!(r.get(i, i) >= 0.0);
            for j in 0..i {
                prop_assert_eq!(r.get(i, j), 0.0);
            }
        }
        prop_assert!(q.matmul(&r).unwrap().max_abs_diff(&m).unwrap() < 1e-12 * (rows as f64));
    }

    #[test]
    fn rank_of_products_and_sums(seed in any::<u64>(), d in 4usize..24, t1 in 1usize..4, t2 in 1usize..4) {
        let a = low_rank(seed, d, d, t1);
        let b = low_rank(seed ^ 7, d, d, t2);
        let ra = numerical_rank(&a).unwrap();
        let rb = numerical_rank(&b).unwrap();
        prop_assert_eq!(ra, t1);
        prop_assert_eq!(rb, t2);
        // Count against the factors' scale: a product that nearly cancels
        // has roundoff of full rank relative to its own tiny norm.
        let (na, nb) = (svd(&a).unwrap().sigma_max(), svd(&b).unwrap().sigma_max());
        let rank_at = |m: &Matrix, scale: f64| {
            let tol = 1e-12 * scale;
            svd(m).unwrap().sigma.iter().filter(|&&s| s > tol).count()
        };
        prop_assert!(rank_at(&a.matmul(&b).unwrap(), na * nb) <= ra.min(rb));
        prop_assert!(rank_at(&a.add(&b).unwrap(), na + nb) <= ra + rb);
    }

    #[test]
    fn inverse_round_trip(seed in any::<u64>(), n in 1usize..20) {
        let m = random(seed, n, n).add_scaled_identity(n as f64).unwrap();
        let inv = inverse(&m).unwrap();
        prop_assert!(m.matmul(&inv).unwrap().max_abs_diff(&Matrix::identity(n)).unwrap() < 1e-11);
    }

    #[test]
    fn pseudo_inverse_penrose_conditions(seed in any::<u64>(), rows in 1usize..16, cols in 1usize..16, t in 1usize..6) {
        let t = t.min(rows).min(cols);
        let a = low_rank(seed, rows, cols, t);
        let p = pseudo_inverse(&a).unwrap();
        let apa = a.matmul(&p).unwrap().matmul(&a).unwrap();
        let pap = p.matmul(&a).unwrap().matmul(&p).unwrap();
        let ap = a.matmul(&p).unwrap();
        let pa = p.matmul(&a).unwrap();
        let sa = 1.0 + a.max_abs();
        let sp = 1.0 + p.max_abs();
        prop_assert!(apa.max_abs_diff(&a).unwrap() < 1e-9 * sa);
        prop_assert!(pap.max_abs_diff(&p).unwrap() < 1e-9 * sp * sp * sa);
        prop_assert!(ap.max_abs_diff(&ap.transpose()).unwrap() < 1e-9 * sa * sp);
        prop_assert!(pa.max_abs_diff(&pa.transpose()).unwrap() < 1e-9 * sa * sp);
    }

    #[test]
    fn symmetric_eigenvalues_match_jacobi_oracle(seed in any::<u64>(), n in 1usize..20) {
        let g = random(seed, n, n);
        let s = g.add(&g.transpose()).unwrap();
        let got = eigenvalues(&s).unwrap();
        let mut want = symmetric_eigenvalues(&to_rows(&s));
        want.sort_by(|x, y| y.abs().total_cmp(&x.abs()));
        for (z, w) in got.iter().zip(&want) {
            prop_assert!(z.im.abs() < 1e-8);
            prop_assert!((z.re.abs() - w.abs()).abs() < 1e-8, "{} vs {}", z.re, w);
        }
    }

    #[test]
    fn eigenvalue_sum_is_trace(seed in any::<u64>(), n in 1usize..24) {
        let m = random(seed, n, n);
        let ev = eigenvalues(&m).unwrap();
        let trace: f64 = (0..n).map(|i| m.get(i, i)).sum();
        let s: f64 = ev.iter().map(|z| z.re).sum();
        let si: f64 = ev.iter().map(|z| z.im).sum();
        prop_assert!((s - trace).abs() < 1e-9 * n as f64);
        prop_assert!(si.abs() < 1e-9 * n as f64);
    }

    #[test]
    fn snapshot_and_csv_round_trip_bit_exact(seed in any::<u64>(), rows in 1usize..10, cols in 1usize..10) {
        let m = random(seed, rows, cols).scale(1e3).unwrap();
        prop_assert_eq!(&decode_snapshot(&encode_snapshot(&m)).unwrap(), &m);
        prop_assert_eq!(&from_csv(&to_csv(&m)).unwrap(), &m);
    }
}

#[test]
fn left_pseudo_inverse_is_a_left_inverse() {
    let m = random(5, 10, 4);
    let p = left_pseudo_inverse(&m).unwrap();
    assert!(p.matmul(&m).unwrap().max_abs_diff(&Matrix::identity(4)).unwrap() < 1e-12);
    assert!(left_pseudo_inverse(&m.transpose()).is_err());
}

#[test]
fn left_pseudo_inverse_matches_normal_equations() {
    let m = random(6, 9, 3);
    let rows = to_rows(&m);
    let mt = transpose(&rows);
    let want = solve(&naive_matmul(&mt, &rows), &mt);
    let got = to_rows(&left_pseudo_inverse(&m).unwrap());
    assert!(max_abs_diff(&got, &want) < 1e-10);
}

#[test]
fn rank_of_zero_and_identity() {
    assert_eq!(numerical_rank(&Matrix::zeros(5, 3)).unwrap(), 0);
    assert_eq!(numerical_rank(&Matrix::identity(7)).unwrap(), 7);
}

#[test]
fn qr_of_identity_is_exact() {
    let (q, r) = qr_decompose(&Matrix::identity(6)).unwrap();
    assert_eq!(q, Matrix::identity(6));
    assert_eq!(r, Matrix::identity(6));
}

#[test]
fn snapshot_file_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.lrma");
    let m = random(9, 3, 5);
    write_snapshot(&m, &path).unwrap();
    assert_eq!(read_snapshot(&path).unwrap(), m);

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[2] = b'X';
    match decode_snapshot(&bytes) {
        Err(LormaError::Format { offset, .. }) => assert_eq!(offset, 2),
        other => panic!("expected format error, got {other:?}"),
    }
    let mut bytes = encode_snapshot(&m);
    bytes.pop();
    assert!(matches!(decode_snapshot(&bytes), Err(LormaError::Format { .. })));
}

#[test]
fn snapshot_layout_is_little_endian_row_major() {
    let m = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
    let b = encode_snapshot(&m);
    assert_eq!(&b[..5], b"LRMA\x01");
    assert_eq!(&b[5..9], &1u32.to_le_bytes());
    assert_eq!(&b[9..13], &2u32.to_le_bytes());
    assert_eq!(&b[13..21], &1.0f64.to_le_bytes());
    assert_eq!(&b[21..29], &2.0f64.to_le_bytes());
}

#[test]
fn csv_is_plain_and_lf_terminated() {
    let m = Matrix::from_rows(&[[0.1, -2.0], [3.5, 1e-20]]).unwrap();
    assert_eq!(to_csv(&m), "0.1,-2.0\n3.5,1e-20\n");
}
