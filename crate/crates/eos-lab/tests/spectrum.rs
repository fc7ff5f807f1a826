use eos_lab::linalg::{self, orthonormal_columns, sym_eig, Matrix};
use eos_lab::spectrum::{epsilon2_estimate, epsilon2_from_drifts, from_pair, measure, SpectrumState};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `5 u u^T` plus a small third-axis term, with `u` at angle `theta` in the (e1, e2) plane.
fn rotated(theta: f64) -> Matrix {
    let u = [theta.cos(), theta.sin(), 0.0];
    let mut m = Matrix::outer(&u, &u).scaled(5.0);
    m.add_scaled(0.01, &Matrix::from_diag(&[0.0, 0.0, 1.0]));
    m
}

#[test]
fn diagonal_case() {
    let s = measure(&Matrix::from_diag(&[3.0, 1.0, 1.0]), None, None).unwrap();
    assert!((s.lambda1 - 3.0).abs() < 1e-12);
    assert!((s.lambda2 - 1.0).abs() < 1e-9);
    assert!((s.v1[0].abs() - 1.0).abs() < 1e-10);
    assert_eq!(s.drift, 0.0);
    assert!(!s.degenerate);
}

#[test]
fn sign_aligned_to_previous() {
    let m = Matrix::from_diag(&[3.0, 1.0]);
    let first = measure(&m, None, None).unwrap();
    let fake_prev = SpectrumState { v1: linalg::scale(&first.v1, -1.0), ..first.clone() };
    let s = measure(&m, Some(&fake_prev), None).unwrap();
    assert!(linalg::dot(&s.v1, &fake_prev.v1) > 0.0);
    assert!(s.drift < 1e-12);
    // Re-measuring with the result as predecessor changes nothing.
    let again = measure(&m, Some(&s), None).unwrap();
    assert_eq!(again.v1, s.v1);
}

#[test]
fn rotation_drift_oracle() {
    let step = 0.01;
    let mut states: Vec<SpectrumState> = vec![];
    for k in 0..30 {
        let prev = states.last();
        let s = measure(&rotated(step * k as f64), prev, None).unwrap();
        if k > 0 {
            assert!((s.drift - (1.0 - step.cos())).abs() < 1e-8, "{}", s.drift);
        }
        states.push(s);
    }
    let e2 = epsilon2_estimate(&states, 0, 29);
    let direct = states.iter().map(|s| s.drift).fold(0.0, f64::max);
    assert_eq!(e2, direct);
}

#[test]
fn rotation_with_varying_steps() {
    let angles = [0.0, 0.02, 0.03, 0.08, 0.085];
    let mut states: Vec<SpectrumState> = vec![];
    for &a in &angles {
        let s = measure(&rotated(a), states.last(), None).unwrap();
        states.push(s);
    }
    let want = 1.0 - 0.05f64.cos();
    assert!((epsilon2_estimate(&states, 0, 4) - want).abs() < 1e-8);
    assert!((epsilon2_estimate(&states, 0, 2) - (1.0 - 0.02f64.cos())).abs() < 1e-8);
}

#[test]
fn constant_sequence_has_zero_epsilon() {
    let m = rotated(0.3);
    let mut states: Vec<SpectrumState> = vec![];
    for _ in 0..5 {
        let s = measure(&m, states.last(), None).unwrap();
        states.push(s);
    }
    assert!(epsilon2_estimate(&states, 0, 4) < 1e-14);
    assert_eq!(epsilon2_estimate(&[], 0, 3), 0.0);
}

#[test]
fn degenerate_steps_excluded() {
    let a = from_pair(1.0, 0.5, vec![1.0, 0.0], None, 1.0);
    let b = from_pair(1.0, 1.0, vec![0.0, 1.0], Some(&a), 1.0);
    assert!(b.degenerate);
    assert_eq!(b.drift, 1.0);
    assert_eq!(epsilon2_estimate(&[a, b], 0, 1), 0.0);
    assert_eq!(epsilon2_from_drifts(&[(0.1, false), (0.9, true), (0.2, false)]), 0.2);
}

#[test]
fn reference_direction_quadratic_form() {
    let m = Matrix::from_diag(&[4.0, 2.0]);
    let u = [0.6, 0.8];
    let s = measure(&m, None, Some(&u)).unwrap();
    assert!((s.lambda_star - (4.0 * 0.36 + 2.0 * 0.64)).abs() < 1e-14);
    assert!(s.lambda1 >= s.lambda_star);
}

#[test]
fn hundred_psd_matrices_match_full_solver() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let n = rng.random_range(2..15);
        let b = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let m = b.tr_matmul(&b);
        let s = measure(&m, None, None).unwrap();
        let full = sym_eig(&m).unwrap();
        assert!((s.lambda1 - full.values[0]).abs() <= 1e-8 * full.values[0]);
        assert!((linalg::norm(&s.v1) - 1.0).abs() < 1e-10);
        assert!(s.lambda1 >= s.lambda2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn variational_bound_and_unit_vector(seed in any::<u64>(), n in 2usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
        let q = orthonormal_columns(n, n, seed).unwrap();
        let mut m = Matrix::zeros(n, n);
        for (k, l) in vals.iter().enumerate() {
            let v = q.column(k);
            m.add_scaled(*l, &Matrix::outer(&v, &v));
        }
        m.symmetrize();
        let u = linalg::normalized(&(0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
        let s = measure(&m, None, Some(&u)).unwrap();
        prop_assert!(s.lambda1 >= s.lambda_star - 1e-10 * s.lambda1.max(1.0));
        prop_assert!(s.lambda1 >= s.lambda2);
        prop_assert!((linalg::norm(&s.v1) - 1.0).abs() < 1e-10);
        let s2 = measure(&m, Some(&s), None).unwrap();
        prop_assert!((0.0..=1.0).contains(&s2.drift));
        prop_assert!(linalg::dot(&s2.v1, &s.v1) >= 0.0);
    }
}
