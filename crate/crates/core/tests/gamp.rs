use mim_spectral::eig::{power_dominant, DEFAULT_MAX_ITER, DEFAULT_TOL};
use mim_spectral::gamp::{
    max_asymmetry, measure_overlaps, min_eigenvalue, run_asym_gamp, run_linear_gamp, run_sym_gamp,
    trajectory_columns, trajectory_rows, Init,
};
use mim_spectral::linops::{dense_materialize, LOperator, Which, DENSE_CAP};
use mim_spectral::model::{build_model, sample_dataset};
use mim_spectral::sevo::{critical_alpha, se_linear_step, se_sym_fixed_point};
use mim_spectral::Error;
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

#[test]
fn asym_gamp_is_scaled_power_iteration() {
    for (name, p) in [("product2", 2), ("norm-sq", 3)] {
        let m = build_model(name, p).unwrap();
        let ds = sample_dataset(&m, 500, 500, 1).unwrap();
        let run = run_asym_gamp(&ds, &m, 1.7, 20, &Init::Random { seed: 2 }).unwrap();
        assert_eq!(run.cross_check.len(), 19);
        let worst = run.cross_check.iter().cloned().fold(0.0, f64::max);
        assert!(worst <= 1e-10, "{name}: {worst}");
        for r in &run.trajectory.records {
            assert!(min_eigenvalue(&r.q) >= -1e-10);
        }
    }
}

#[test]
fn asym_gamp_growth_follows_gamma() {
    let m = build_model("product2", 2).unwrap();
    // α = 2: the outlier is well separated from the bulk.
    let ds = sample_dataset(&m, 400, 200, 3).unwrap();
    let l = LOperator::new(&ds, &m).unwrap();
    let top = power_dominant(&l, 1, DEFAULT_TOL, DEFAULT_MAX_ITER);
    assert!(top.converged);
    let lambda = top.eigenvalues[0].re;

    let run = run_asym_gamp(&ds, &m, lambda, 150, &Init::Random { seed: 4 }).unwrap();
    assert!((run.growth_rate - 1.0).abs() < 1e-3, "rate {}", run.growth_rate);
    let recs = &run.trajectory.records;
    let (a, b) = (&recs[recs.len() - 2], &recs[recs.len() - 1]);
    assert!((a.overlap - b.overlap).abs() < 1e-6);

    let run = run_asym_gamp(&ds, &m, 10.0 * lambda, 20, &Init::Random { seed: 4 }).unwrap();
    assert!((run.growth_rate - 0.1).abs() < 0.01, "rate {}", run.growth_rate);
    assert!(run.vanishing);

    match run_asym_gamp(&ds, &m, 0.1 * lambda, 200, &Init::Random { seed: 4 }) {
        Err(Error::Diverged { rate, .. }) => assert!(rate > 5.0),
        other => panic!("expected divergence, got {other:?}"),
    }
    assert!(run_asym_gamp(&ds, &m, 0.0, 5, &Init::Random { seed: 4 }).is_err());
}

#[test]
fn linear_gamp_onsager_vanishes_with_n() {
    let m = build_model("norm-sq", 2).unwrap();
    let g_out = |y: f64| m.conditional_g(y).unwrap();
    let v = |_| DMatrix::identity(2, 2);
    let mut norms = Vec::new();
    for n in [400, 6400] {
        let ds = sample_dataset(&m, n, 100, 5).unwrap();
        let init = Init::Random { seed: 1 }.build(&ds).unwrap();
        let (_, state) = run_linear_gamp(&ds, g_out, v, 1, &init).unwrap();
        // A = d⁻¹ΣG(y_i) = α·mean G, so ‖A‖/α ~ n^{−1/2}.
        norms.push(state.a.norm() / ds.alpha);
    }
    assert!(norms[1] < norms[0] / 2.0, "{norms:?}");
    assert!(norms[1] < 0.1);
}

#[test]
fn linear_gamp_tracks_state_evolution_on_average() {
    // Single runs fluctuate at O(1/√d); the mean deviation from the SE must be
    // within a few standard errors of zero.
    let m = build_model("norm-sq", 2).unwrap();
    let g_out = |y: f64| m.conditional_g(y).unwrap();
    let v = |_| DMatrix::identity(2, 2);
    let (d, seeds) = (500, 16u64);
    let mut devs = vec![Vec::new(); 3];
    for seed in 0..seeds {
        let ds = sample_dataset(&m, 1000, d, seed).unwrap();
        let init = Init::Informed { eps: 0.5, seed }.build(&ds).unwrap();
        let (traj, _) = run_linear_gamp(&ds, g_out, v, 2, &init).unwrap();
        let (mut mt, mut qt) = (traj.records[0].m.clone(), traj.records[0].q.clone());
        for (t, r) in traj.records.iter().enumerate().skip(1) {
            (mt, qt) = se_linear_step(&m, ds.alpha, g_out, &DMatrix::identity(2, 2), &mt, &qt).unwrap();
            devs[t].push(&r.m - &mt);
        }
    }
    let k = seeds as f64;
    for t in 1..3 {
        let mean = devs[t].iter().fold(DMatrix::zeros(2, 2), |acc, x| acc + x) / k;
        let var = devs[t].iter().map(|x| (x - &mean).norm_squared()).sum::<f64>() / (k - 1.0);
        let stderr = (var / k).sqrt();
        assert!(mean.norm() <= 3.0 * stderr, "t = {t}: mean deviation {} vs stderr {stderr}", mean.norm());
    }
}

#[test]
fn sym_gamp_v_is_symmetric_and_large_a_shrinks() {
    let m = build_model("product2", 2).unwrap();
    let ds = sample_dataset(&m, 600, 300, 7).unwrap();
    let run = run_sym_gamp(&ds, &m, 1.5, 30, &Init::Random { seed: 1 }).unwrap();
    assert!(max_asymmetry(&run.vs) <= 1e-12);
    assert!(run.vs.len() == 31 && run.gammas.len() == 30);
    for r in &run.trajectory.records {
        assert!(min_eigenvalue(&r.q) >= -1e-10);
    }

    let run = run_sym_gamp(&ds, &m, 1e3, 10, &Init::Random { seed: 1 }).unwrap();
    let q: Vec<f64> = run.trajectory.records.iter().map(|r| r.q.trace()).collect();
    assert!(q[10] < 1e-6 * q[0], "{q:?}");
    assert!(run_sym_gamp(&ds, &m, 0.5, 3, &Init::Random { seed: 1 }).is_err());
}

#[test]
fn sym_gamp_stationary_point_is_an_eigenvector_of_t() {
    for (name, p) in [("product2", 2), ("norm-sq", 2)] {
        let m = build_model(name, p).unwrap();
        let ac = critical_alpha(&m).unwrap().alpha_c;
        let alpha = 3.0 * ac;
        let d = 150;
        let ds = sample_dataset(&m, (alpha * d as f64) as usize, d, 8).unwrap();
        let a = se_sym_fixed_point(&m, alpha).unwrap().a.unwrap();

        // V_t and γ_t depend on the labels only; read off the limit γ, then
        // rescale X so that the top eigenvalue of T equals aγ.
        let probe = run_sym_gamp(&ds, &m, a, 200, &Init::Random { seed: 1 }).unwrap();
        let gamma = *probe.gammas.last().unwrap();
        let t = dense_materialize(Which::T, &ds, &m, DENSE_CAP).unwrap();
        let top = SymmetricEigen::new(t).eigenvalues.max();
        let mut scaled = ds.clone();
        scaled.x *= (a * gamma / top).sqrt();

        let run = run_sym_gamp(&scaled, &m, a, 600, &Init::Random { seed: 2 }).unwrap();
        assert!(run.fixed_point_residual <= 1e-6, "{name}: {}", run.fixed_point_residual);
    }
}

#[test]
fn init_validation_and_trajectory_layout() {
    let m = build_model("norm-sq", 2).unwrap();
    let ds = sample_dataset(&m, 40, 20, 9).unwrap();
    assert!(Init::Given(DMatrix::zeros(20, 2)).build(&ds).is_err());
    assert!(Init::Given(DMatrix::identity(3, 2)).build(&ds).is_err());
    let w = Init::Informed { eps: 0.5, seed: 3 }.build(&ds).unwrap();
    assert_eq!(w.shape(), (20, 2));
    assert_eq!(Init::Random { seed: 3 }.build(&ds).unwrap(), Init::Random { seed: 3 }.build(&ds).unwrap());

    let run = run_asym_gamp(&ds, &m, 2.0, 3, &Init::Random { seed: 1 }).unwrap();
    let cols = trajectory_columns(2);
    assert_eq!(cols.len(), 1 + 4 + 4 + 3);
    assert_eq!(cols[1], "M_00");
    assert_eq!(cols[2], "M_01");
    let rows = trajectory_rows(&run.trajectory);
    assert_eq!(rows.len(), 4);
    let r = &run.trajectory.records[2];
    assert_eq!(rows[2][2], r.m[(0, 1)]);
    assert_eq!(rows[2][9], r.overlap);
    assert_eq!(rows[2][10], 2.0);
    assert!(rows[2][11].is_nan());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn overlaps_are_bounded(seed in 0u64..1000, scale in 0.1f64..10.0) {
        let m = build_model("norm-sq", 3).unwrap();
        let ds = sample_dataset(&m, 10, 200, seed).unwrap();
        let w = Init::Random { seed: seed ^ 9 }.build(&ds).unwrap() * scale;
        let o = measure_overlaps(&w, &ds.w_star).unwrap();
        prop_assert!(o.overlap >= 0.0 && o.overlap <= 3f64.sqrt());
        prop_assert!(min_eigenvalue(&o.q) >= -1e-10);
        // m is invariant to the scale of Ŵ.
        let o2 = measure_overlaps(&(&w * 3.0), &ds.w_star).unwrap();
        prop_assert!((o.overlap - o2.overlap).abs() < 1e-12);
    }
}
