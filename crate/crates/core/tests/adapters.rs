mod common;

use common::*;
use lorma_core::adapters::{
    delta_w, effective_weight, forward, forward_counted, init_adapter, load_adapter, merge,
    save_adapter, AdapterConfig, AdapterState, AdapterVariant, MultiplySide,
};
use lorma_core::gradients::{backward, grad_check, probe_loss};
use lorma_core::inflation::{deflate_pi, inflate_pi, inflate_plus};
use lorma_core::linalg::numerical_rank;
use lorma_core::rng::RngState;
use lorma_core::{FlopCounter, Matrix};
use proptest::prelude::*;

const SIDES: [MultiplySide; 2] = [MultiplySide::Pre, MultiplySide::Post];

/// Row `i` rotated right by `i`, written with `Vec::rotate_right`.
fn rotate_rows_oracle(m: &Matrix) -> Vec<Vec<f64>> {
    let mut rows = to_rows(m);
    for (i, r) in rows.iter_mut().enumerate() {
        let n = r.len();
        r.rotate_right(i % n);
    }
    rows
}

fn perturbed(w0: &Matrix, variant: AdapterVariant, side: MultiplySide, r: usize, seed: u64) -> AdapterState {
    let cfg = AdapterConfig::new(variant, side, r, r as f64, seed);
    let s = init_adapter(w0, &cfg).unwrap();
    let mut rng = RngState::new(seed ^ 0xabc);
    let b = s.b().add(&rng.gaussian_matrix(s.b().rows(), s.b().cols(), 0.3)).unwrap();
    let a = s.a().add(&rng.gaussian_matrix(s.a().rows(), s.a().cols(), 0.3)).unwrap();
    s.with_factors(b, a).unwrap()
}

/// Effective weight written out from the definitions with naive products.
fn effective_oracle(s: &AdapterState) -> Vec<Vec<f64>> {
    let (w0, b, a) = (to_rows(s.w0()), to_rows(s.b()), to_rows(s.a()));
    let ba = naive_matmul(&b, &a);
    let sc = s.scaling();
    let scaled: Vec<Vec<f64>> = ba.iter().map(|r| r.iter().map(|v| sc * v).collect()).collect();
    let n = ba.len();
    let eye = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
    let mult = match s.variant() {
        AdapterVariant::Lora => {
            return w0
                .iter()
                .zip(&scaled)
                .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
                .collect()
        }
        AdapterVariant::LormaNaive => ba,
        AdapterVariant::LormaPlus => (0..n)
            .map(|i| (0..n).map(|j| scaled[i][j] + eye(i, j)).collect())
            .collect(),
        AdapterVariant::LormaPi => rotate_rows_oracle(&from_rows(&scaled)),
    };
    match s.side() {
        MultiplySide::Pre => naive_matmul(&mult, &w0),
        MultiplySide::Post => naive_matmul(&w0, &mult),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn inflate_pi_matches_rotation_oracle(seed in any::<u64>(), d in 1usize..20) {
        let m = RngState::new(seed).gaussian_matrix(d, d, 1.0);
        prop_assert_eq!(to_rows(&inflate_pi(&m).unwrap()), rotate_rows_oracle(&m));
    }

    #[test]
    fn inflate_pi_is_linear_orthogonal_and_invertible(seed in any::<u64>(), d in 1usize..20, c in -3.0f64..3.0) {
        let mut rng = RngState::new(seed);
        let x = rng.gaussian_matrix(d, d, 1.0);
        let y = rng.gaussian_matrix(d, d, 1.0);
        let lhs = inflate_pi(&x.scale(c).unwrap().add(&y).unwrap()).unwrap();
        let rhs = inflate_pi(&x).unwrap().scale(c).unwrap().add(&inflate_pi(&y).unwrap()).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
        // Adjoint: <I(X), Y> = <X, I⁻¹(Y)>.
        let a = inflate_pi(&x).unwrap().frobenius_dot(&y).unwrap();
        let b = x.frobenius_dot(&deflate_pi(&y).unwrap()).unwrap();
        prop_assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
        prop_assert!((inflate_pi(&x).unwrap().frobenius_norm() - x.frobenius_norm()).abs() < 1e-12);
        prop_assert_eq!(deflate_pi(&inflate_pi(&x).unwrap()).unwrap(), x);
    }

    #[test]
    fn forward_equals_merged_weight(seed in any::<u64>(), v in 0usize..4, side in 0usize..2, d in 2usize..12, k in 2usize..12) {
        let variant = AdapterVariant::ALL[v];
        let side = SIDES[side];
        let w0 = RngState::new(seed).gaussian_matrix(d, k, 0.5);
        let r = 2usize.min(d).min(k);
        let s = perturbed(&w0, variant, side, r, seed);
        let x = RngState::new(seed ^ 5).gaussian_matrix(k, 3, 1.0);
        let h = forward(&s, &x).unwrap();
        let eff = effective_weight(&s).unwrap();
        let scale = 1.0 + h.max_abs();
        prop_assert!(h.max_abs_diff(&eff.matmul(&x).unwrap()).unwrap() < 1e-12 * scale);
        prop_assert!(max_abs_diff(&to_rows(&eff), &effective_oracle(&s)) < 1e-12 * (1.0 + eff.max_abs()));
        let dw = delta_w(&s).unwrap();
        prop_assert!(dw.max_abs_diff(&eff.sub(&w0).unwrap()).unwrap() < 1e-12 * (1.0 + eff.max_abs()));
        prop_assert_eq!(merge(&s).unwrap().weight, eff);
    }
}

#[test]
fn identity_initialized_variants_reproduce_w0() {
    let mut rng = RngState::new(77);
    let w0 = rng.gaussian_matrix(16, 16, 0.25);
    let x = rng.gaussian_matrix(16, 4, 1.0);
    let base = w0.matmul(&x).unwrap();
    for variant in [AdapterVariant::Lora, AdapterVariant::LormaPi, AdapterVariant::LormaPlus] {
        for side in SIDES {
            for seed in 0..10 {
                let s = init_adapter(&w0, &AdapterConfig::new(variant, side, 4, 8.0, seed)).unwrap();
                let err = forward(&s, &x).unwrap().max_abs_diff(&base).unwrap();
                assert!(err <= 1e-12 * base.max_abs(), "{variant} {side:?} seed {seed}: {err}");
            }
        }
    }
}

#[test]
fn naive_init_is_not_identity() {
    let w0 = RngState::new(1).gaussian_matrix(8, 8, 1.0);
    let s = init_adapter(&w0, &AdapterConfig::new(AdapterVariant::LormaNaive, MultiplySide::Pre, 2, 2.0, 0)).unwrap();
    assert!(effective_weight(&s).unwrap().max_abs_diff(&w0).unwrap() > 0.1);
}

#[test]
fn rank_laws_for_products_and_inflations() {
    let (d, r) = (16, 3);
    for seed in 0..30 {
        let mut rng = RngState::new(seed);
        let b = rng.gaussian_matrix(d, r, 1.0);
        let a = rng.gaussian_matrix(r, d, 1.0);
        let ba = b.matmul(&a).unwrap();
        assert!(numerical_rank(&ba).unwrap() <= r);
        assert!(numerical_rank(&inflate_plus(&ba, 0.7).unwrap()).unwrap() >= d - r);
        assert!(numerical_rank(&inflate_pi(&ba).unwrap()).unwrap() >= d - 2);
        let w0 = rng.gaussian_matrix(d, d, 1.0);
        assert!(numerical_rank(&ba.matmul(&w0).unwrap()).unwrap() <= r);
    }
}

/// Central differences computed here, independent of the library checker.
fn fd_gradient(s: &AdapterState, x: &Matrix, y: &Matrix, which_b: bool) -> Matrix {
    let h = 1e-5;
    let p = if which_b { s.b() } else { s.a() };
    Matrix::from_fn(p.rows(), p.cols(), |i, j| {
        let shifted = |delta: f64| {
            let mut rows = to_rows(p);
            rows[i][j] += delta;
            let np = from_rows(&rows);
            let st = if which_b {
                s.with_factors(np, s.a().clone()).unwrap()
            } else {
                s.with_factors(s.b().clone(), np).unwrap()
            };
            probe_loss(&st, x, y).unwrap()
        };
        (shifted(h) - shifted(-h)) / (2.0 * h)
    })
}

#[test]
fn backward_matches_independent_finite_differences() {
    for variant in AdapterVariant::ALL {
        for side in SIDES {
            let mut rng = RngState::new(9);
            let w0 = rng.gaussian_matrix(7, 5, 0.5);
            let s = perturbed(&w0, variant, side, 2, 3);
            let x = rng.gaussian_matrix(5, 4, 1.0);
            let y = rng.gaussian_matrix(7, 4, 1.0);
            let upstream = forward(&s, &x).unwrap().sub(&y).unwrap();
            let g = backward(&s, &x, &upstream).unwrap();
            let fb = fd_gradient(&s, &x, &y, true);
            let fa = fd_gradient(&s, &x, &y, false);
            let tol = 1e-6 * (1.0 + fb.max_abs().max(fa.max_abs()));
            assert!(g.d_b.max_abs_diff(&fb).unwrap() < tol, "{variant} {side:?} dB");
            assert!(g.d_a.max_abs_diff(&fa).unwrap() < tol, "{variant} {side:?} dA");
            assert!(grad_check(&s, &x, &y).unwrap().passes(1e-4), "{variant} {side:?}");
        }
    }
}

#[test]
fn input_gradient_matches_transposed_effective_weight() {
    for variant in AdapterVariant::ALL {
        let mut rng = RngState::new(4);
        let w0 = rng.gaussian_matrix(6, 6, 0.5);
        let s = perturbed(&w0, variant, MultiplySide::Pre, 2, 8);
        let x = rng.gaussian_matrix(6, 3, 1.0);
        let g = rng.gaussian_matrix(6, 3, 1.0);
        let want = effective_weight(&s).unwrap().transpose().matmul(&g).unwrap();
        let got = backward(&s, &x, &g).unwrap().d_x;
        assert!(got.max_abs_diff(&want).unwrap() < 1e-12, "{variant}");
    }
}

#[test]
fn forward_operation_counts() {
    let (d, k, r, b) = (24usize, 20usize, 3usize, 5usize);
    let w0 = RngState::new(2).gaussian_matrix(d, k, 1.0);
    let x = RngState::new(3).gaussian_matrix(k, b, 1.0);
    let count = |variant| {
        let s = init_adapter(&w0, &AdapterConfig::new(variant, MultiplySide::Pre, r, 1.0, 0)).unwrap();
        let c = FlopCounter::new();
        forward_counted(&s, &x, &c).unwrap();
        c.multiply_adds() as usize
    };
    // W0·x, then A·u, then B·(A·u), scale and add.
    assert_eq!(count(AdapterVariant::LormaPlus), d * k * b + 2 * d * r * b + 2 * d * b);
    assert_eq!(count(AdapterVariant::LormaNaive), d * k * b + 2 * d * r * b);
    assert_eq!(count(AdapterVariant::Lora), d * k * b + r * k * b + d * r * b + 2 * d * b);
    // B·A, scale, then the d×d multiplier times W0·x.
    assert_eq!(count(AdapterVariant::LormaPi), d * r * d + d * d + d * k * b + d * d * b);
}

#[test]
fn saved_adapter_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let w0 = RngState::new(5).gaussian_matrix(6, 4, 1.0);
    let s = perturbed(&w0, AdapterVariant::LormaPi, MultiplySide::Post, 2, 1);
    save_adapter(&s, dir.path()).unwrap();
    assert_eq!(load_adapter(dir.path()).unwrap(), s);
}
