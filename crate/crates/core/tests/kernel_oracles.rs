use dgp_core::kernel::{build_cov_blocks, se_cov, se_cov01, se_cov10, se_cov11, KernelParams};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn fd_second_arg(x: f64, t: f64, p: &KernelParams<f64>, step: f64) -> f64 {
    (se_cov(x, t + step, p).unwrap() - se_cov(x, t - step, p).unwrap()) / (2.0 * step)
}

fn fd_mixed(s: f64, t: f64, p: &KernelParams<f64>, step: f64) -> f64 {
    let k = |a: f64, b: f64| se_cov(a, b, p).unwrap();
    (k(s + step, t + step) - k(s + step, t - step) - k(s - step, t + step) + k(s - step, t - step)) / (4.0 * step * step)
}

fn min_eigenvalue(m: &dgp_core::Matrix64) -> f64 {
    let n = m.rows();
    let d = DMatrix::from_fn(n, n, |i, j| m[(i, j)]);
    d.symmetric_eigen().eigenvalues.min()
}

proptest! {
    #[test]
    fn cross_derivative_matches_finite_difference(
        tau_sq in 0.1f64..10.0, h in 0.1f64..5.0, t in -5.0f64..5.0, u in -5.0f64..5.0,
    ) {
        let p = KernelParams::new(tau_sq, h).unwrap();
        let x = t + u * h;
        let fd = fd_second_arg(x, t, &p, 1e-5);
        prop_assert!((se_cov01(x, t, &p).unwrap() - fd).abs() <= 1e-6 * tau_sq / h);
        prop_assert_eq!(se_cov01(x, t, &p).unwrap(), se_cov10(t, x, &p).unwrap());
    }

    #[test]
    fn second_derivative_matches_mixed_difference(
        tau_sq in 0.1f64..10.0, h in 0.1f64..5.0, t in -5.0f64..5.0, u in -5.0f64..5.0,
    ) {
        let p = KernelParams::new(tau_sq, h).unwrap();
        let s = t + u * h;
        let fd = fd_mixed(s, t, &p, 1e-3 * h);
        prop_assert!((se_cov11(s, t, &p).unwrap() - fd).abs() <= 1e-4 * tau_sq / (h * h));
    }

    #[test]
    fn symmetric_in_arguments(a in -10.0f64..10.0, b in -10.0f64..10.0, h in 0.05f64..5.0) {
        let p = KernelParams::new(1.3, h).unwrap();
        prop_assert_eq!(se_cov(a, b, &p).unwrap(), se_cov(b, a, &p).unwrap());
        prop_assert_eq!(se_cov11(a, b, &p).unwrap(), se_cov11(b, a, &p).unwrap());
    }

    #[test]
    fn stacked_blocks_are_psd(
        x in prop::collection::vec(-3.0f64..3.0, 1..20),
        t in prop::collection::vec(-3.0f64..3.0, 1..4),
        tau_sq in 0.1f64..5.0,
        h in 0.2f64..2.0,
    ) {
        let p = KernelParams::new(tau_sq, h).unwrap();
        // Distinct constraint points, as required by the block builder.
        let mut t = t;
        t.sort_by(|a, b| a.partial_cmp(b).unwrap());
        t.dedup_by(|a, b| (*a - *b).abs() < 0.05 * h);
        let blocks = build_cov_blocks(&x, &t, &p).unwrap();
        prop_assert!(min_eigenvalue(&blocks.stacked()) >= -1e-8 * tau_sq);
    }
}

#[test]
fn stacked_block_eigenvalues_with_one_constraint() {
    let x = [0.1, 0.35, 0.9, 1.4, 2.2];
    let p = KernelParams::new(1.0, 0.8).unwrap();
    let blocks = build_cov_blocks(&x, &[0.5], &p).unwrap();
    assert_eq!(blocks.stacked().rows(), 6);
    assert!(min_eigenvalue(&blocks.stacked()) >= -1e-10);
}

#[test]
fn block_shapes_and_transpose() {
    let p = KernelParams::new(2.0, 1.0).unwrap();
    let b = build_cov_blocks(&[0.0, 0.5, 1.0], &[0.2], &p).unwrap();
    assert_eq!((b.k.rows(), b.k.cols()), (3, 3));
    assert_eq!((b.k01.rows(), b.k01.cols()), (3, 1));
    assert_eq!((b.k11.rows(), b.k11.cols()), (1, 1));
    for i in 0..3 {
        assert_eq!(b.k01[(i, 0)], b.k10[(0, i)]);
    }
    let b2 = build_cov_blocks(&[0.0], &[0.0, 1.0], &KernelParams::new(1.0f64, 1.0).unwrap()).unwrap();
    assert!(b2.k11[(0, 1)].abs() < 1e-16);
}

#[test]
fn near_duplicate_constraints_rejected() {
    let p = KernelParams::new(1.0, 1.0).unwrap();
    assert!(matches!(
        build_cov_blocks(&[0.0], &[0.5, 0.5 + 1e-5], &p),
        Err(dgp_core::DgpError::DegenerateConstraint { .. })
    ));
}
