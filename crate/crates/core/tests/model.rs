use std::f64::consts::PI;
use std::sync::Arc;

use mim_spectral::model::{
    build_model, check_generative_exponent, empirical_g_oracle, sample_dataset, LinkModel,
    OracleOptions,
};
use mim_spectral::special::x_k1_over_k0;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::RngCore;

#[test]
fn registry_examples() {
    let m = build_model("norm-sq", 4).unwrap();
    let g = m.conditional_g(2.5).unwrap();
    assert_eq!(g, DMatrix::identity(4, 4) * 1.5);
    assert!(m.joint_eigenbasis().is_some());

    let r = build_model("ratio", 2).unwrap();
    assert!(r.joint_eigenbasis().is_none());
    let y: f64 = 0.7;
    let s = 1.0 / (1.0 + y * y);
    let want = DMatrix::from_row_slice(2, 2, &[(y * y - 1.0) * s, 2.0 * y * s, 2.0 * y * s, (1.0 - y * y) * s]);
    assert!((r.conditional_g(y).unwrap() - want).amax() < 1e-15);

    let sp = build_model("sign-product2", 2).unwrap();
    let c = 2.0 / PI;
    assert!((sp.conditional_g(1.0).unwrap() - DMatrix::from_row_slice(2, 2, &[0.0, c, c, 0.0])).amax() < 1e-15);

    let p2 = build_model("product2", 2).unwrap();
    let g = p2.conditional_g(-1.3).unwrap();
    assert!((g[(0, 0)] - (x_k1_over_k0(1.3) - 1.0)).abs() < 1e-15);
    assert_eq!(g[(0, 1)], -1.3);

    assert!(build_model("nope", 2).is_err());
    assert!(build_model("product2", 3).is_err());
    assert!(build_model("custom", 2).is_err());
}

#[test]
fn conditional_g_examples() {
    let m = build_model("norm-sq", 4).unwrap();
    assert_eq!(m.conditional_g(1.0).unwrap(), DMatrix::zeros(4, 4));
    assert!(m.conditional_g(0.0).is_err());
    assert!(m.conditional_g(-1.0).is_err());
    let r = build_model("ratio", 2).unwrap();
    assert_eq!(r.conditional_g(0.0).unwrap(), DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]));
    let sp = build_model("sign-product2", 2).unwrap();
    assert!(sp.conditional_g(0.5).is_err());
}

#[test]
fn dataset_shapes_and_reproducibility() {
    let m = build_model("norm-sq", 4).unwrap();
    let a = sample_dataset(&m, 100, 50, 11).unwrap();
    assert_eq!(a.x.shape(), (100, 50));
    assert_eq!(a.y.len(), 100);
    assert_eq!(a.w_star.shape(), (50, 4));
    let b = sample_dataset(&m, 100, 50, 11).unwrap();
    assert_eq!(a.x, b.x);
    assert_eq!(a.y, b.y);
    assert_eq!(a.w_star, b.w_star);
    let c = sample_dataset(&m, 100, 50, 12).unwrap();
    assert_ne!(a.y, c.y);
}

#[test]
fn oracle_matches_norm_sq_near_two() {
    let m = build_model("norm-sq", 2).unwrap();
    let table = empirical_g_oracle(&m, 400_000, 40, 5).unwrap();
    assert_eq!(table.bins.iter().map(|b| b.count).sum::<usize>(), 400_000);
    let bin = table.bins.iter().find(|b| b.lo <= 2.0 && 2.0 < b.hi).unwrap();
    // Compare against λ(y) = y − 1 at the bin's mean label.
    let want = DMatrix::identity(2, 2) * (bin.center - 1.0);
    for k in 0..4 {
        let se = bin.se.as_slice()[k].max(1e-12);
        let diff = (bin.g.as_slice()[k] - want.as_slice()[k]).abs();
        assert!(diff <= 3.0 * se + 1e-12, "entry {k}: {diff} vs 3σ = {}", 3.0 * se);
    }
    assert!((bin.g[(0, 0)] - 1.0).abs() < 0.1);
}

#[test]
fn oracle_matches_product2_bessel_form() {
    let m = build_model("product2", 2).unwrap();
    let table = empirical_g_oracle(&m, 400_000, 40, 6).unwrap();
    assert_eq!(table.bins.iter().map(|b| b.count).sum::<usize>(), 400_000);
    let bin = table.bins.iter().find(|b| b.lo <= 0.5 && 0.5 < b.hi).unwrap();
    let reference = bin.g_reference.as_ref().unwrap();
    for k in 0..4 {
        let diff = (bin.g.as_slice()[k] - reference.as_slice()[k]).abs();
        assert!(diff <= 3.0 * bin.se.as_slice()[k], "entry {k}: {diff}");
    }
}

#[test]
fn generative_exponent() {
    let ratio = build_model("ratio", 2).unwrap();
    assert!(check_generative_exponent(&ratio, 200_000, 1).unwrap().passes);
    let p2 = build_model("product2", 2).unwrap();
    assert!(check_generative_exponent(&p2, 200_000, 2).unwrap().passes);

    let linear = LinkModel::custom(
        "linear",
        1,
        Arc::new(|z: &[f64], _: &mut dyn RngCore| z[0]),
        OracleOptions {
            n_samples: 50_000,
            n_bins: 16,
            seed: 3,
        },
    )
    .unwrap();
    let check = check_generative_exponent(&linear, 200_000, 3).unwrap();
    assert!(!check.passes);
    assert!(check.max_deviation > 10.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn g_is_symmetric_with_bounded_diagonal(y in -20.0f64..20.0) {
        for name in ["product2", "ratio"] {
            let m = build_model(name, 2).unwrap();
            let g = m.conditional_g(y).unwrap();
            prop_assert_eq!(g[(0, 1)], g[(1, 0)]);
            // E[z_μ² | y] ≥ 0 forces G_μμ ≥ −1.
            prop_assert!(g[(0, 0)] >= -1.0 && g[(1, 1)] >= -1.0);
        }
    }

    #[test]
    fn joint_basis_diagonalises_product2(y in -15.0f64..15.0) {
        let m = build_model("product2", 2).unwrap();
        let u = m.joint_eigenbasis().unwrap().u;
        let lam = m.joint_eigenvalues(y).unwrap();
        let d = u.transpose() * m.conditional_g(y).unwrap() * &u;
        prop_assert!((d[(0, 0)] - lam[0]).abs() < 1e-12 * (1.0 + y.abs()));
        prop_assert!((d[(1, 1)] - lam[1]).abs() < 1e-12 * (1.0 + y.abs()));
        prop_assert!(d[(0, 1)].abs() < 1e-12 * (1.0 + y.abs()));
    }

    #[test]
    fn datasets_are_seed_deterministic(seed in any::<u64>()) {
        let m = build_model("sign-product2", 2).unwrap();
        let a = sample_dataset(&m, 12, 6, seed).unwrap();
        let b = sample_dataset(&m, 12, 6, seed).unwrap();
        prop_assert_eq!(a.x, b.x);
        prop_assert_eq!(a.y, b.y);
    }
}
