//! The experiments behind each subcommand, as plain functions returning
//! typed reports. File writing lives in [`crate::run`].

use clap::ValueEnum;
use mim_spectral::eig::{
    dense_spectrum, subspace_dominant, symmetric_top_k, EigenReport, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use mim_spectral::gamp::{measure_overlaps, run_asym_gamp, run_sym_gamp, Init, Record};
use mim_spectral::linops::{
    dense_materialize, estimator_from_t_eigvec, LOperator, TOperator, Which, DENSE_CAP,
};
use mim_spectral::model::sample_dataset;
use mim_spectral::sevo::{
    critical_alpha, jointly_diag_constants, predicted_overlap_asym, se_asym_informed,
    se_asym_run, se_asym_uninformed, se_sym_fixed_point, SEFixedPoint, SEIterate,
};
use mim_spectral::{Dataset, Error as CoreError, LinkModel};
use nalgebra::{Complex, DMatrix};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::output::matrix_rows;

/// Which spectral operator (or GAMP scheme).
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// The `np × np` operator `L`.
    Asym,
    /// The `dp × dp` operator `T`.
    Sym,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Random,
    Informed,
}

#[derive(Debug, Clone, Serialize)]
pub struct AlphaCReport {
    pub model: String,
    pub p: usize,
    pub alpha_c: f64,
    #[serde(rename = "M1")]
    pub m1: Vec<Vec<f64>>,
    pub backend_error: f64,
}

pub fn alpha_c(model: &LinkModel) -> CliResult<AlphaCReport> {
    let c = critical_alpha(model)?;
    Ok(AlphaCReport {
        model: model.name().to_string(),
        p: model.p(),
        alpha_c: c.alpha_c,
        m1: matrix_rows(&c.m1),
        backend_error: c.backend_error,
    })
}

/// Sample sizes of one dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sizes {
    pub n: usize,
    pub d: usize,
    /// The requested `α`; `n/d` up to rounding.
    pub alpha: f64,
}

/// Fills in the missing one of `(n, d, α)`. With neither `n` nor `d` the
/// method's primary size (`n` for `L`, `d` for `T`) defaults to `default_size`.
pub fn resolve_sizes(
    method: Method,
    n: Option<usize>,
    d: Option<usize>,
    alpha: Option<f64>,
    default_size: usize,
) -> CliResult<Sizes> {
    if let Some(a) = alpha {
        if !(a > 0.0 && a.is_finite()) {
            return Err(CliError::Input(format!("--alpha must be positive, got {a}")));
        }
    }
    let other = |size: usize, factor: f64| -> CliResult<usize> {
        let v = (size as f64 * factor).round();
        if v < 1.0 || v > 1e8 {
            return Err(CliError::Input(format!("derived dimension {v} is out of range")));
        }
        Ok(v as usize)
    };
    let sizes = match (n, d, alpha) {
        (Some(n), Some(d), a) => {
            let ratio = n as f64 / d.max(1) as f64;
            if let Some(a) = a {
                if (a - ratio).abs() > 1e-9 * a {
                    return Err(CliError::Input(format!(
                        "--alpha {a} contradicts --n {n} / --d {d}"
                    )));
                }
            }
            Sizes { n, d, alpha: a.unwrap_or(ratio) }
        }
        (Some(n), None, Some(a)) => Sizes { n, d: other(n, 1.0 / a)?, alpha: a },
        (None, Some(d), Some(a)) => Sizes { n: other(d, a)?, d, alpha: a },
        (None, None, Some(a)) => match method {
            Method::Asym => Sizes { n: default_size, d: other(default_size, 1.0 / a)?, alpha: a },
            Method::Sym => Sizes { n: other(default_size, a)?, d: default_size, alpha: a },
        },
        _ => return Err(CliError::Input("give --alpha, or both --n and --d".into())),
    };
    if sizes.n == 0 || sizes.d == 0 {
        return Err(CliError::Input("--n and --d must be positive".into()));
    }
    Ok(sizes)
}

/// Bulk edge and outlier location predicted for the operator.
pub fn spectrum_theory(
    model: &LinkModel,
    method: Method,
    alpha: f64,
) -> CliResult<(Option<f64>, Option<f64>)> {
    let ac = critical_alpha(model)?.alpha_c;
    match method {
        Method::Asym => {
            let r = alpha / ac;
            Ok((Some(r.sqrt()), (r > 1.0).then_some(r)))
        }
        Method::Sym => {
            if model.joint_eigenbasis().is_some() {
                let jc = jointly_diag_constants(model, alpha)?;
                Ok((Some(jc.lambda_b), jc.lambda_s))
            } else if alpha > ac {
                let fp = se_sym_fixed_point(model, alpha)?;
                Ok((fp.lambda_b, fp.lambda_s))
            } else {
                Ok((None, None))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumSummary {
    pub method: Method,
    pub model: String,
    pub p: usize,
    pub n: usize,
    pub d: usize,
    pub alpha: f64,
    pub seed: u64,
    pub dense: bool,
    pub top_eig: f64,
    pub bulk_edge_theory: Option<f64>,
    pub outlier_theory: Option<f64>,
    pub converged: bool,
    pub n_eigenvalues: usize,
}

#[derive(Debug, Clone)]
pub struct SpectrumReport {
    /// Sorted by decreasing real part.
    pub eigenvalues: Vec<Complex<f64>>,
    pub summary: SpectrumSummary,
}

/// Eigenvalues of `L` or `T` on one synthetic dataset: the full spectrum with
/// `dense`, otherwise the `k` leading ones.
pub fn spectrum(
    model: &LinkModel,
    method: Method,
    sizes: Sizes,
    seed: u64,
    dense: bool,
    k: usize,
) -> CliResult<SpectrumReport> {
    if k == 0 {
        return Err(CliError::Input("--k must be positive".into()));
    }
    let flat = match method {
        Method::Asym => sizes.n * model.p(),
        Method::Sym => sizes.d * model.p(),
    };
    if dense && flat > DENSE_CAP {
        return Err(CoreError::CapExceeded { dim: flat, cap: DENSE_CAP }.into());
    }
    let ds = sample_dataset(model, sizes.n, sizes.d, seed)?;
    let report = top_eigenvalues(&ds, model, method, seed, dense, k.min(flat))?;
    let (bulk, outlier) = spectrum_theory(model, method, sizes.alpha)?;
    let top = report.eigenvalues.first().map_or(f64::NAN, |z| z.re);
    Ok(SpectrumReport {
        summary: SpectrumSummary {
            method,
            model: model.name().to_string(),
            p: model.p(),
            n: sizes.n,
            d: sizes.d,
            alpha: sizes.alpha,
            seed,
            dense,
            top_eig: top,
            bulk_edge_theory: bulk,
            outlier_theory: outlier,
            converged: report.converged,
            n_eigenvalues: report.eigenvalues.len(),
        },
        eigenvalues: report.eigenvalues,
    })
}

fn top_eigenvalues(
    ds: &Dataset,
    model: &LinkModel,
    method: Method,
    seed: u64,
    dense: bool,
    k: usize,
) -> CliResult<EigenReport> {
    let (which, symmetric) = match method {
        Method::Asym => (Which::L, false),
        Method::Sym => (Which::T, true),
    };
    if dense {
        let m = dense_materialize(which, ds, model, DENSE_CAP)?;
        return Ok(dense_spectrum(&m, symmetric, DENSE_CAP)?);
    }
    Ok(match method {
        Method::Asym => {
            let l = LOperator::new(ds, model)?;
            let mut r = subspace_dominant(&l, k.max(outlier_block(model.p())), seed, DEFAULT_TOL, DEFAULT_MAX_ITER);
            r.eigenvalues.truncate(k);
            r
        }
        Method::Sym => {
            let t = TOperator::new(ds, model, 1.0)?;
            symmetric_top_k(&t, k, seed, DEFAULT_TOL, DEFAULT_MAX_ITER)?
        }
    })
}

/// Asymptotic `m²` of the estimator built from the leading eigenvector.
pub fn overlap_theory(model: &LinkModel, method: Method, alpha: f64) -> CliResult<f64> {
    match method {
        Method::Asym => Ok(predicted_overlap_asym(model, alpha)?),
        Method::Sym => {
            let ac = critical_alpha(model)?.alpha_c;
            if alpha > ac {
                Ok(se_sym_fixed_point(model, alpha)?.m2)
            } else {
                Ok(0.0)
            }
        }
    }
}

/// Subspace-iteration block for `L`. Its outliers come from the `p²`-dimensional
/// signal space (all of it for isotropic links such as norm-sq), so the block
/// must hold the whole cluster for the Ritz values to separate quickly.
pub fn outlier_block(p: usize) -> usize {
    p * p + 4
}

/// One sweep trial: `m²` of the spectral estimator, or `None` when the
/// eigensolver did not converge to a real leading eigenvector.
pub fn overlap_trial(
    model: &LinkModel,
    method: Method,
    size: usize,
    alpha: f64,
    seed: u64,
) -> CliResult<Option<f64>> {
    let sizes = resolve_sizes(method, None, None, Some(alpha), size)?;
    let ds = sample_dataset(model, sizes.n, sizes.d, seed)?;
    let p = model.p();
    let w_hat = match method {
        Method::Asym => {
            let l = LOperator::new(&ds, model)?;
            let r = subspace_dominant(&l, outlier_block(p), seed, DEFAULT_TOL, DEFAULT_MAX_ITER);
            let Some(v) = r.leading_vector().filter(|_| r.converged && r.leading_real().is_some())
            else {
                return Ok(None);
            };
            l.estimator(&v, p as f64)?
        }
        Method::Sym => {
            let t = TOperator::new(&ds, model, 1.0)?;
            let r = symmetric_top_k(&t, 1, seed, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
            let Some(v) = r.leading_vector().filter(|_| r.converged) else {
                return Ok(None);
            };
            estimator_from_t_eigvec(&v, sizes.d, p, p as f64)?
        }
    };
    Ok(Some(measure_overlaps(&w_hat, &ds.w_star)?.overlap.powi(2)))
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub m2_theory: f64,
    pub m2_emp_mean: Option<f64>,
    pub m2_emp_std: Option<f64>,
    pub trials_ok: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialResult {
    pub alpha: f64,
    pub seed: u64,
    pub m2: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub trials: Vec<TrialResult>,
}

/// Seeds `seed, seed + 1, …` for `trials` trials.
pub fn trial_seeds(seed: u64, trials: usize) -> Vec<u64> {
    (0..trials as u64).map(|k| seed.wrapping_add(k)).collect()
}

/// Empirical vs predicted `m²` over a grid of `α`. Trials run in parallel;
/// results do not depend on scheduling.
pub fn overlap_sweep(
    model: &LinkModel,
    method: Method,
    size: usize,
    alphas: &[f64],
    trials: usize,
    seed: u64,
) -> CliResult<SweepReport> {
    if trials == 0 {
        return Err(CliError::Input("--trials must be at least 1".into()));
    }
    if alphas.is_empty() {
        return Err(CliError::Input("--alphas must list at least one value".into()));
    }
    let seeds = trial_seeds(seed, trials);
    let jobs: Vec<(f64, u64)> = alphas
        .iter()
        .flat_map(|&a| seeds.iter().map(move |&s| (a, s)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(a, s)| overlap_trial(model, method, size, a, s))
        .collect::<CliResult<Vec<_>>>()?;
    let trials_out: Vec<TrialResult> = jobs
        .iter()
        .zip(&results)
        .map(|(&(alpha, seed), &m2)| TrialResult { alpha, seed, m2 })
        .collect();
    let mut rows = Vec::with_capacity(alphas.len());
    for (i, &alpha) in alphas.iter().enumerate() {
        let ok: Vec<f64> = results[i * trials..(i + 1) * trials].iter().flatten().copied().collect();
        let (mean, std) = mean_std(&ok);
        rows.push(SweepRow {
            alpha,
            m2_theory: overlap_theory(model, method, alpha)?,
            m2_emp_mean: mean,
            m2_emp_std: std,
            trials_ok: ok.len(),
        });
    }
    Ok(SweepReport { rows, trials: trials_out })
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let k = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / k;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0)
    } else {
        0.0
    };
    (Some(mean), Some(var.sqrt()))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TraceParams {
    pub scheme: Method,
    /// Asymmetric scheme only; defaults to the fixed-point value.
    pub gamma: Option<f64>,
    /// Symmetric scheme only; defaults to the fixed-point value.
    pub a: Option<f64>,
    pub iters: usize,
    pub init: InitKind,
    pub eps: f64,
}

/// One seed's GAMP trajectory next to its state evolution.
#[derive(Debug, Clone)]
pub struct SeedTrace {
    pub seed: u64,
    pub records: Vec<Record>,
    /// SE overlap matrices started from the empirical `(M₀, Q₀)`; `None` past
    /// the end of the SE run or for the symmetric scheme.
    pub se: Vec<Option<SEIterate>>,
}

impl SeedTrace {
    /// `‖M_t^emp − M_t^SE‖_F` per record.
    pub fn se_deviation(&self) -> Vec<Option<f64>> {
        self.records
            .iter()
            .zip(&self.se)
            .map(|(r, s)| s.as_ref().map(|s| (&r.m - &s.m).norm()))
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceSummary {
    pub scheme: Method,
    pub model: String,
    pub p: usize,
    pub n: usize,
    pub d: usize,
    pub alpha: f64,
    pub gamma: Option<f64>,
    pub a: Option<f64>,
    pub iters: usize,
    pub seeds: Vec<u64>,
    /// Seed average of `‖M_t^emp − M_t^SE‖_F` per iteration.
    pub mean_se_deviation: Vec<Option<f64>>,
    pub final_overlap: Vec<f64>,
    /// Last fixed-point residual per seed (symmetric scheme).
    pub final_residual: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct TraceReport {
    pub traces: Vec<SeedTrace>,
    pub summary: TraceSummary,
}

/// `γ` for the asymmetric scheme: `α/α_c` above the threshold, the bulk
/// radius `√(α/α_c)` below it.
pub fn default_gamma(model: &LinkModel, alpha: f64) -> CliResult<f64> {
    let ac = critical_alpha(model)?.alpha_c;
    let r = alpha / ac;
    Ok(if r > 1.0 { r } else { r.sqrt() })
}

/// Runs the chosen GAMP scheme on each seed and, for the asymmetric scheme,
/// its state evolution from the same starting overlaps.
pub fn gamp_trace(
    model: &LinkModel,
    sizes: Sizes,
    params: TraceParams,
    seeds: &[u64],
) -> CliResult<TraceReport> {
    if seeds.is_empty() {
        return Err(CliError::Input("--trials must be at least 1".into()));
    }
    let alpha = sizes.alpha;
    let (gamma, a) = match params.scheme {
        Method::Asym => (Some(params.gamma.map_or_else(|| default_gamma(model, alpha), Ok)?), None),
        Method::Sym => {
            let a = match params.a {
                Some(a) => a,
                None => se_sym_fixed_point(model, alpha)?
                    .a
                    .ok_or_else(|| CliError::Numerical("symmetric fixed point has no a".into()))?,
            };
            (None, Some(a))
        }
    };
    let traces = seeds
        .par_iter()
        .map(|&seed| -> CliResult<SeedTrace> {
            let ds = sample_dataset(model, sizes.n, sizes.d, seed)?;
            let init = match params.init {
                InitKind::Random => Init::Random { seed },
                InitKind::Informed => Init::Informed { eps: params.eps, seed },
            };
            match params.scheme {
                Method::Asym => {
                    let g = gamma.expect("asymmetric scheme has γ");
                    let run = run_asym_gamp(&ds, model, g, params.iters, &init)?;
                    let r0 = &run.trajectory.records[0];
                    let se = se_trace(model, alpha, g, &r0.m, &r0.q, params.iters)?;
                    let mut se: Vec<Option<SEIterate>> = se.into_iter().map(Some).collect();
                    se.resize(run.trajectory.records.len(), None);
                    Ok(SeedTrace { seed, records: run.trajectory.records, se })
                }
                Method::Sym => {
                    let run = run_sym_gamp(&ds, model, a.expect("symmetric scheme has a"), params.iters, &init)?;
                    let len = run.trajectory.records.len();
                    Ok(SeedTrace { seed, records: run.trajectory.records, se: vec![None; len] })
                }
            }
        })
        .collect::<CliResult<Vec<_>>>()?;

    let len = params.iters + 1;
    let mut mean_dev = Vec::with_capacity(len);
    for t in 0..len {
        let devs: Vec<f64> = traces.iter().filter_map(|s| s.se_deviation().get(t).copied().flatten()).collect();
        mean_dev.push((devs.len() == traces.len()).then(|| devs.iter().sum::<f64>() / devs.len() as f64));
    }
    let summary = TraceSummary {
        scheme: params.scheme,
        model: model.name().to_string(),
        p: model.p(),
        n: sizes.n,
        d: sizes.d,
        alpha,
        gamma,
        a,
        iters: params.iters,
        seeds: seeds.to_vec(),
        mean_se_deviation: mean_dev,
        final_overlap: traces.iter().map(|s| s.records.last().map_or(0.0, |r| r.overlap)).collect(),
        final_residual: traces.iter().map(|s| s.records.last().and_then(|r| r.residual)).collect(),
    };
    Ok(TraceReport { traces, summary })
}

/// Asymmetric SE iterates `0..=iters`, cut short where the recursion leaves
/// floating-point range.
fn se_trace(
    model: &LinkModel,
    alpha: f64,
    gamma: f64,
    m0: &DMatrix<f64>,
    q0: &DMatrix<f64>,
    iters: usize,
) -> CliResult<Vec<SEIterate>> {
    match se_asym_run(model, alpha, gamma, m0, q0, iters, 0.0) {
        Ok(run) => Ok(run.trace),
        Err(CoreError::Diverged { iteration, .. }) if iteration > 1 => {
            Ok(se_asym_run(model, alpha, gamma, m0, q0, iteration - 1, 0.0)?.trace)
        }
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FixedPointReport {
    pub scheme: Method,
    pub model: String,
    pub p: usize,
    pub alpha: f64,
    pub alpha_c: f64,
    pub branch: String,
    pub a: Option<f64>,
    pub gamma: f64,
    pub lambda_s: Option<f64>,
    pub lambda_b: Option<f64>,
    #[serde(rename = "M")]
    pub m: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    pub m2: f64,
}

/// The state-evolution fixed point the scheme settles on at `α`.
pub fn se_fixed_point(model: &LinkModel, scheme: Method, alpha: f64) -> CliResult<FixedPointReport> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(CliError::Input(format!("--alpha must be positive, got {alpha}")));
    }
    let fp: SEFixedPoint = match scheme {
        Method::Asym => {
            let ac = critical_alpha(model)?.alpha_c;
            if alpha > ac {
                se_asym_informed(model, alpha)?
            } else {
                se_asym_uninformed(model, alpha)?
            }
        }
        Method::Sym => se_sym_fixed_point(model, alpha)?,
    };
    Ok(FixedPointReport {
        scheme,
        model: model.name().to_string(),
        p: model.p(),
        alpha,
        alpha_c: fp.alpha_c,
        branch: fp.branch.as_str().to_string(),
        a: fp.a,
        gamma: fp.gamma,
        lambda_s: fp.lambda_s,
        lambda_b: fp.lambda_b,
        m: matrix_rows(&fp.m),
        q: matrix_rows(&fp.q),
        m2: fp.m2,
    })
}
