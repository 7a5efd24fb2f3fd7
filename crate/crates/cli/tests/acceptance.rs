//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use mim_spectral::eig::{
    dense_real_eigenvector, dense_spectrum, subspace_dominant, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use mim_spectral::gamp::{run_asym_gamp, Init};
use mim_spectral::linops::{
    dense_materialize, eigpair_l_to_t, eigpair_t_to_l, jointly_diag_blocks, l_apply, t_apply,
    LOperator, Which, DENSE_CAP,
};
use mim_spectral::model::{sample_dataset, Dataset};
use mim_spectral::sevo::{
    critical_alpha, f_matrix_rep, informed_bound, jointly_diag_constants, se_asym_informed,
    SymParams, Variant,
};
use mim_spectral::{build_model, LinkModel};
use mim_spectral_cli::commands::{self, InitKind, Method, Sizes, TraceParams};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 8] = [
        ("thresholds", Duration::from_secs(4), thresholds),
        ("asymmetric outlier", Duration::from_secs(180), asymmetric_outlier),
        ("symmetric outliers", Duration::from_secs(180), symmetric_outliers),
        ("overlap formulas", Duration::from_secs(600), overlap_formulas),
        ("L/T eigenpair roundtrip", Duration::from_secs(10), roundtrip),
        ("GAMP is power iteration", Duration::from_secs(30), gamp_power_iteration),
        ("SE agreement", Duration::from_secs(120), se_agreement),
        ("operator properties", Duration::from_secs(60), operator_properties),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = check();
        let took = start.elapsed();
        let in_time = took <= *budget;
        let pass = out.pass && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {} ({name}): {} — {}; {:.1} s of {} s{}",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64(),
            budget.as_secs(),
            if in_time { "" } else { " (over budget)" }
        );
    }
    println!("acceptance: {} of 8 criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn model(name: &str, p: usize) -> LinkModel {
    build_model(name, p).expect("built-in model")
}

fn gaussian(len: usize, seed: u64) -> DVector<f64> {
    let mut r = mim_spectral::rng::stream(seed, 11);
    DVector::from_fn(len, |_, _| r.sample(StandardNormal))
}

fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Criterion 1. Each threshold must come back within one second.
fn thresholds() -> Outcome {
    let cases = [
        ("norm-sq", 4, 2.0, 1e-9),
        ("sign-product2", 2, PI * PI / 4.0, 1e-9),
        ("ratio", 2, 1.0, 1e-9),
        ("product2", 2, 0.59375, 1e-3),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, p, want, tol) in cases {
        let start = Instant::now();
        let got = commands::alpha_c(&model(name, p)).map(|r| r.alpha_c);
        let secs = start.elapsed().as_secs_f64();
        let ok = matches!(got, Ok(v) if (v - want).abs() <= tol) && secs <= 1.0;
        pass &= ok;
        match got {
            Ok(v) => parts.push(format!("{name} {v:.10} ({:.2e} off, {secs:.2} s)", (v - want).abs())),
            Err(e) => parts.push(format!("{name} error: {e}")),
        }
    }
    outcome(pass, parts.join(", "))
}

/// Criterion 2.
fn asymmetric_outlier() -> Outcome {
    let m = model("product2", 2);
    let ac = critical_alpha(&m).unwrap().alpha_c;
    let target = 1.0 / ac;

    let ds = sample_dataset(&m, 2000, 2000, 0).unwrap();
    let l = LOperator::new(&ds, &m).unwrap();
    let r = subspace_dominant(&l, 6, 0, DEFAULT_TOL, DEFAULT_MAX_ITER);
    let top = r.leading_real();
    let top_ok = r.converged && top.is_some_and(|t| (t - target).abs() <= 0.05 * target);

    let alpha = 0.4;
    let ds = sample_dataset(&m, 600, 1500, 0).unwrap();
    let dense = dense_materialize(Which::L, &ds, &m, DENSE_CAP).unwrap();
    let spec = dense_spectrum(&dense, false, DENSE_CAP).unwrap();
    let max_re = spec.eigenvalues.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let bound = 1.1 * (alpha / ac).sqrt();
    let above = spec.eigenvalues.iter().filter(|z| z.re > bound).count();

    outcome(
        top_ok && above == 0,
        format!(
            "α=1, n=2000: top {} vs {target:.4} (5% band); α=0.4, n=600: max Re {max_re:.4} vs bound {bound:.4}, {above} above",
            top.map_or("none".into(), |t| format!("{t:.4}"))
        ),
    )
}

/// Criterion 3. `T` is block-diagonal in the joint eigenbasis, so its full
/// spectrum (with multiplicity) is the union of the block spectra.
fn symmetric_outliers() -> Outcome {
    let m = model("norm-sq", 4);
    let alpha = 6.0;
    let ds = sample_dataset(&m, 9000, 1500, 0).unwrap();
    let blocks = jointly_diag_blocks(&ds, &m).unwrap();
    let mut eig: Vec<f64> = blocks
        .into_iter()
        .flat_map(|b| SymmetricEigen::new(b).eigenvalues.iter().copied().collect::<Vec<_>>())
        .collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let in_window = eig.iter().filter(|&&x| (0.95..=1.05).contains(&x)).count();
    let lambda_b = jointly_diag_constants(&m, alpha).unwrap().lambda_b;
    let fifth = eig[4];
    let pass = in_window == 4 && fifth <= 1.05 * lambda_b;
    let top: Vec<String> = eig[..6].iter().map(|x| format!("{x:.4}")).collect();
    outcome(
        pass,
        format!(
            "{in_window} eigenvalues in [0.95, 1.05]; top six [{}]; fifth {fifth:.4} vs 1.05·λ_b = {:.4}",
            top.join(", "),
            1.05 * lambda_b
        ),
    )
}

/// Criterion 4.
fn overlap_formulas() -> Outcome {
    let nsq = model("norm-sq", 4);
    let cases: [(&str, &LinkModel, Method, f64, f64); 3] = [
        ("norm-sq α=6", &nsq, Method::Asym, 6.0, 0.5),
        ("ratio α=4", &model("ratio", 2), Method::Asym, 4.0, 0.75),
        ("sign-product2 α=6", &model("sign-product2", 2), Method::Asym, 6.0, 1.0 - PI * PI / 24.0),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, m, method, alpha, want) in cases {
        let r = commands::overlap_sweep(m, method, 2000, &[alpha], 10, 0).unwrap();
        let row = &r.rows[0];
        let ok = row.trials_ok == 10 && row.m2_emp_mean.is_some_and(|v| (v - want).abs() <= 0.05);
        pass &= ok;
        parts.push(format!(
            "{label}: {} vs {want:.4} ({}/10)",
            row.m2_emp_mean.map_or("none".into(), |v| format!("{v:.4}")),
            row.trials_ok
        ));
    }
    let ac = critical_alpha(&nsq).unwrap().alpha_c;
    let r = commands::overlap_sweep(&nsq, Method::Sym, 2000, &[0.5 * ac], 10, 0).unwrap();
    let row = &r.rows[0];
    let ok = row.trials_ok == 10 && row.m2_emp_mean.is_some_and(|v| v <= 0.05);
    pass &= ok;
    parts.push(format!(
        "norm-sq α=0.5·α_c (T): {} ≤ 0.05 ({}/10)",
        row.m2_emp_mean.map_or("none".into(), |v| format!("{v:.4}")),
        row.trials_ok
    ));
    outcome(pass, parts.join("; "))
}

/// First seed whose dense `L` at `n = 40, d = 30` has real eigenvalues `≥ 1`.
fn seed_with_real_outliers(m: &LinkModel) -> Option<(Dataset, DMatrix<f64>, Vec<f64>)> {
    (0..200).find_map(|seed| {
        let ds = sample_dataset(m, 40, 30, seed).ok()?;
        let l = dense_materialize(Which::L, &ds, m, DENSE_CAP).ok()?;
        let spec = dense_spectrum(&l, false, DENSE_CAP).ok()?;
        let real: Vec<f64> = spec
            .eigenvalues
            .iter()
            .filter(|z| z.im == 0.0 && z.re >= 1.0)
            .map(|z| z.re)
            .collect();
        (!real.is_empty()).then_some((ds, l, real))
    })
}

/// Criterion 5.
fn roundtrip() -> Outcome {
    let m = model("product2", 2);
    let Some((ds, l, real)) = seed_with_real_outliers(&m) else {
        return outcome(false, "no dataset with a real eigenvalue ≥ 1 in 200 seeds".into());
    };
    let mut worst_lt: f64 = 0.0;
    for &gamma in &real {
        let (omega, _) = dense_real_eigenvector(&l, gamma).unwrap();
        worst_lt = worst_lt.max(eigpair_l_to_t(&ds, &m, gamma, &omega).unwrap().residual);
    }

    // Rescale X so that T has eigenvalue exactly 1 at the top.
    let t = dense_materialize(Which::T, &ds, &m, DENSE_CAP).unwrap();
    let top = SymmetricEigen::new(t).eigenvalues.max();
    let mut ds1 = ds.clone();
    ds1.x /= top.sqrt();
    let t1 = dense_materialize(Which::T, &ds1, &m, DENSE_CAP).unwrap();
    let eig = SymmetricEigen::new(t1);
    let (k, _) = eig.eigenvalues.argmax();
    let w = eig.eigenvectors.column(k).into_owned();
    let back = eigpair_t_to_l(&ds1, &m, 1.0, &w).unwrap();
    let l_res = rel(&l_apply(&ds1, &m, &back.vector).unwrap(), &back.vector);
    let tl = back.residual.max(l_res);

    outcome(
        worst_lt <= 1e-8 && tl <= 1e-8,
        format!(
            "seed {}: {} L→T transfers, worst residual {worst_lt:.2e}; T→L residual {tl:.2e}",
            ds.seed,
            real.len()
        ),
    )
}

/// Criterion 6.
fn gamp_power_iteration() -> Outcome {
    let m = model("product2", 2);
    let ac = critical_alpha(&m).unwrap().alpha_c;
    let ds = sample_dataset(&m, 500, 500, 0).unwrap();
    let run = run_asym_gamp(&ds, &m, 1.0 / ac, 20, &Init::Random { seed: 0 }).unwrap();
    let worst = run.cross_check.iter().copied().fold(0.0, f64::max);
    outcome(
        worst <= 1e-10 && run.cross_check.len() == 19,
        format!("{} steps checked, worst relative residual {worst:.2e}", run.cross_check.len()),
    )
}

/// Criterion 7.
fn se_agreement() -> Outcome {
    let m = model("product2", 2);
    let d = 1000;
    let sizes = Sizes { n: 1000, d, alpha: 1.0 };
    let params = TraceParams {
        scheme: Method::Asym,
        gamma: None,
        a: None,
        iters: 10,
        init: InitKind::Informed,
        eps: 0.3,
    };
    let r = commands::gamp_trace(&m, sizes, params, &[0, 1, 2, 3, 4]).unwrap();
    let bound = 10.0 / (d as f64).sqrt();
    let devs: Vec<f64> = r.summary.mean_se_deviation.iter().map(|x| x.unwrap_or(f64::INFINITY)).collect();
    let first_bad = devs.iter().position(|&x| x > bound);
    let shown: Vec<String> = devs.iter().map(|x| format!("{x:.3}")).collect();
    outcome(
        first_bad.is_none(),
        format!(
            "mean ‖M_emp − M_SE‖_F over 5 seeds for t = 0..10: [{}] vs {bound:.3}{}",
            shown.join(", "),
            first_bad.map_or(String::new(), |t| format!("; first exceeded at t = {t}"))
        ),
    )
}

/// Criterion 8.
fn operator_properties() -> Outcome {
    let builtins = [
        ("product2", 2),
        ("sign-product2", 2),
        ("norm-sq", 3),
        ("ratio", 2),
        ("single-index-square", 1),
    ];
    let mut asym: f64 = 0.0;
    let mut reduce: f64 = 0.0;
    let mut b7 = true;
    let mut ac_gap: f64 = 0.0;
    for (name, p) in builtins {
        let m = model(name, p);
        let f = f_matrix_rep(&m, &Variant::F).unwrap();
        asym = asym.max(f.asymmetry);
        let ac = critical_alpha(&m).unwrap().alpha_c;
        for factor in [1.5, 3.0] {
            let fp = se_asym_informed(&m, factor * ac).unwrap();
            let (lhs, rhs) = informed_bound(&m, &fp).unwrap();
            b7 &= lhs >= rhs - 1e-10 * rhs.abs().max(1.0);
        }
        // ratio: G(y) has eigenvalue −1, so the symmetric kernel does not exist.
        if name == "ratio" {
            continue;
        }
        for variant in [
            Variant::FSym(SymParams::identity(1.0, p)),
            Variant::FTilde(SymParams::identity(1.0, p)),
        ] {
            let rep = f_matrix_rep(&m, &variant).unwrap();
            asym = asym.max(rep.asymmetry);
            reduce = reduce.max((&rep.dense - &f.dense).amax());
        }
        let jc = jointly_diag_constants(&m, 3.0).unwrap();
        ac_gap = ac_gap.max((jc.alpha_c - ac).abs() / ac);
    }

    let mut implicit: f64 = 0.0;
    for (name, p, n, d) in [("product2", 2, 40, 30), ("norm-sq", 3, 60, 40), ("single-index-square", 1, 40, 30)] {
        let m = model(name, p);
        for seed in 0..4 {
            let ds = sample_dataset(&m, n, d, seed).unwrap();
            let l = dense_materialize(Which::L, &ds, &m, DENSE_CAP).unwrap();
            let v = gaussian(n * p, seed);
            implicit = implicit.max(rel(&l_apply(&ds, &m, &v).unwrap(), &(&l * &v)));
            let t = dense_materialize(Which::T, &ds, &m, DENSE_CAP).unwrap();
            let w = gaussian(d * p, seed + 100);
            implicit = implicit.max(rel(&t_apply(&ds, &m, &w, 1.0).unwrap(), &(&t * &w)));
        }
    }
    let pass = asym <= 1e-8 && reduce <= 1e-8 && implicit <= 1e-10 && b7 && ac_gap <= 1e-8;
    outcome(
        pass,
        format!(
            "rep asymmetry {asym:.1e}; F(·;1,I) vs F {reduce:.1e}; implicit vs dense {implicit:.1e}; informed bound {}; α_c consistency {ac_gap:.1e}",
            if b7 { "holds" } else { "violated" }
        ),
    )
}
