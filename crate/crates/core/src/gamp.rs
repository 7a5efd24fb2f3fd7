//! Linear GAMP and its two spectral specialisations, with overlap tracking.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linops::{mul_x, mul_xt, vec_of, BlockDiag, GSpectra, ImplicitOperator, LOperator, TOperator};
use crate::model::{Dataset, LinkModel};
use crate::rng;

/// Stream id for initial estimates, away from row and weight streams.
const INIT_STREAM: u64 = u64::MAX - 2;

/// Overlaps `M = ŴᵀW⋆/d`, `Q = ŴᵀŴ/d` and `m = ‖M‖_F/√Tr Q`.
#[derive(Debug, Clone)]
pub struct Overlaps {
    pub m: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub overlap: f64,
}

pub fn measure_overlaps(w_hat: &DMatrix<f64>, w_star: &DMatrix<f64>) -> Result<Overlaps> {
    if w_hat.shape() != w_star.shape() {
        return Err(Error::InvalidDimensions(format!(
            "estimate is {}×{}, planted weights are {}×{}",
            w_hat.nrows(),
            w_hat.ncols(),
            w_star.nrows(),
            w_star.ncols()
        )));
    }
    let d = w_hat.nrows() as f64;
    let m = w_hat.tr_mul(w_star) / d;
    let q = w_hat.tr_mul(w_hat) / d;
    let tr = q.trace();
    if !(tr > 0.0) {
        return Err(Error::Degenerate("Tr(Q) = 0: the estimate vanishes".into()));
    }
    let overlap = m.norm() / tr.sqrt();
    Ok(Overlaps { m, q, overlap })
}

/// Starting estimate `Ŵ⁰`.
#[derive(Debug, Clone)]
pub enum Init {
    /// i.i.d. `N(0, 1)` entries.
    Random { seed: u64 },
    /// `εW⋆` plus i.i.d. `N(0, 1)` noise.
    Informed { eps: f64, seed: u64 },
    Given(DMatrix<f64>),
}

impl Init {
    pub fn build(&self, ds: &Dataset) -> Result<DMatrix<f64>> {
        let (d, p) = (ds.d(), ds.p());
        let noise = |seed: u64| {
            let mut r = rng::stream(seed, INIT_STREAM);
            DMatrix::from_fn(d, p, |_, _| r.sample::<f64, _>(StandardNormal))
        };
        let w = match self {
            Init::Random { seed } => noise(*seed),
            Init::Informed { eps, seed } => &ds.w_star * *eps + noise(*seed),
            Init::Given(w) => {
                if w.shape() != (d, p) {
                    return Err(Error::InvalidDimensions(format!(
                        "initial estimate must be {d}×{p}"
                    )));
                }
                w.clone()
            }
        };
        if w.norm() == 0.0 {
            return Err(Error::InvalidArgument("initial estimate must be non-zero".into()));
        }
        Ok(w)
    }
}

/// One trajectory record.
#[derive(Debug, Clone)]
pub struct Record {
    pub t: usize,
    pub m: DMatrix<f64>,
    pub q: DMatrix<f64>,
    /// `‖M‖_F/√Tr Q`, 0 when the estimate vanishes.
    pub overlap: f64,
    pub gamma_t: Option<f64>,
    pub a_t: Option<f64>,
    /// Scheme-specific residual (power-iteration cross-check or fixed-point
    /// residual).
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub records: Vec<Record>,
}

fn record(t: usize, w: &DMatrix<f64>, w_star: &DMatrix<f64>) -> Record {
    let d = w.nrows() as f64;
    let m = w.tr_mul(w_star) / d;
    let q = w.tr_mul(w) / d;
    let tr = q.trace();
    let overlap = if tr > 0.0 { m.norm() / tr.sqrt() } else { 0.0 };
    Record {
        t,
        m,
        q,
        overlap,
        gamma_t: None,
        a_t: None,
        residual: None,
    }
}

/// Iterate of a GAMP run.
#[derive(Debug, Clone)]
pub struct GampState {
    /// `n × p`.
    pub omega: DMatrix<f64>,
    /// `d × p`.
    pub w_hat: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub t: usize,
}

fn check_blowup(t: usize, w: &DMatrix<f64>, prev: f64) -> Result<()> {
    let norm = w.norm();
    let limit = 1e6 * (w.nrows() as f64).sqrt();
    if !norm.is_finite() || norm > limit {
        return Err(Error::Diverged {
            iteration: t,
            norm,
            rate: norm / prev.max(f64::MIN_POSITIVE),
        });
    }
    Ok(())
}

/// Rows `i ↦ B_i ω_i` for an `n × p` matrix.
fn apply_rows(blocks: &BlockDiag, omega: &DMatrix<f64>) -> DMatrix<f64> {
    blocks.apply_rows(omega)
}

/// Linear GAMP with denoisers `g_out(ω, y) = G_out(y)ω`, `f_in(b) = V b`:
///
/// `Ω^t = XŴ^t − Γ^{t−1}V_tᵀ`, `Γ^t_i = G_out(y_i)Ω^t_i`,
/// `Ŵ^{t+1} = (XᵀΓ^t − Ŵ^t A_tᵀ)V_{t+1}ᵀ`, `A_t = d⁻¹Σ_i G_out(y_i)`.
///
/// `v_schedule(t)` supplies `V_t` for `t ≥ 1`.
pub fn run_linear_gamp<G, V>(
    ds: &Dataset,
    g_out: G,
    v_schedule: V,
    iters: usize,
    init: &DMatrix<f64>,
) -> Result<(Trajectory, GampState)>
where
    G: Fn(f64) -> DMatrix<f64>,
    V: Fn(usize) -> DMatrix<f64>,
{
    let (n, d, p) = (ds.n(), ds.d(), ds.p());
    if init.shape() != (d, p) {
        return Err(Error::InvalidDimensions(format!("initial estimate must be {d}×{p}")));
    }
    if init.norm() == 0.0 {
        return Err(Error::InvalidArgument("initial estimate must be non-zero".into()));
    }
    let blocks = BlockDiag::from_blocks(&ds.y.iter().map(|&y| g_out(y)).collect::<Vec<_>>());
    let a = blocks.block_sum() / d as f64;

    let mut w = init.clone();
    let mut gamma_prev = DMatrix::zeros(n, p);
    let mut omega = DMatrix::zeros(n, p);
    let mut v = DMatrix::identity(p, p);
    let mut traj = Trajectory::default();
    traj.records.push(record(0, &w, &ds.w_star));
    for t in 0..iters {
        let v_t = if t == 0 { DMatrix::identity(p, p) } else { v_schedule(t) };
        omega = mul_x(&ds.x, &w) - &gamma_prev * v_t.transpose();
        let gamma_t = apply_rows(&blocks, &omega);
        v = v_schedule(t + 1);
        let next = (mul_xt(&ds.x, &gamma_t) - &w * a.transpose()) * v.transpose();
        check_blowup(t + 1, &next, w.norm())?;
        w = next;
        gamma_prev = gamma_t;
        traj.records.push(record(t + 1, &w, &ds.w_star));
    }
    Ok((
        traj,
        GampState {
            omega,
            w_hat: w,
            v,
            a,
            t: iters,
        },
    ))
}

/// Outcome of the asymmetric spectral GAMP.
#[derive(Debug, Clone)]
pub struct AsymGampRun {
    pub trajectory: Trajectory,
    pub state: GampState,
    /// `‖vec Ω^t − γ⁻¹L vec Ω^{t−1}‖/‖vec Ω^t‖` for `t ≥ 1`.
    pub cross_check: Vec<f64>,
    /// Geometric growth rate of `‖Ω^t‖` over the last steps.
    pub growth_rate: f64,
    /// `‖Ω^t‖` fell below `1e−8` of its initial value.
    pub vanishing: bool,
}

/// `Ω^t = XŴ^t − γ⁻¹ mat(Ĝ vec Ω^{t−1})`, `Ŵ^{t+1} = γ⁻¹ Xᵀ mat(Ĝ vec Ω^t)`,
/// with `Ω^{−1} = 0`. Each step is checked against `γ⁻¹L` applied through
/// the operator path.
pub fn run_asym_gamp(
    ds: &Dataset,
    model: &LinkModel,
    gamma: f64,
    iters: usize,
    init: &Init,
) -> Result<AsymGampRun> {
    if gamma == 0.0 || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!("gamma must be non-zero, got {gamma}")));
    }
    let ghat = BlockDiag::ghat(&ds.y, model)?;
    let l = LOperator::from_parts(&ds.x, ghat.clone());
    let (n, p) = (ds.n(), ds.p());
    let mut w = init.build(ds)?;
    let mut g_prev = DMatrix::zeros(n, p);
    let mut omega_prev: Option<DMatrix<f64>> = None;
    let mut omega = DMatrix::zeros(n, p);
    let mut traj = Trajectory::default();
    traj.records.push(record(0, &w, &ds.w_star));
    let mut cross = Vec::with_capacity(iters);
    let mut norms = Vec::with_capacity(iters);
    for t in 0..iters {
        omega = mul_x(&ds.x, &w) - &g_prev / gamma;
        let residual = omega_prev.as_ref().map(|prev| {
            let want = l.apply(&vec_of(prev)) / gamma;
            let got = vec_of(&omega);
            (&got - &want).norm() / got.norm().max(f64::MIN_POSITIVE)
        });
        if let Some(r) = residual {
            cross.push(r);
        }
        norms.push(omega.norm());
        let g = ghat.apply_rows(&omega);
        let next = mul_xt(&ds.x, &g) / gamma;
        check_blowup(t + 1, &next, w.norm())?;
        w = next;
        g_prev = g;
        omega_prev = Some(omega.clone());
        let mut rec = record(t + 1, &w, &ds.w_star);
        rec.gamma_t = Some(gamma);
        rec.residual = residual;
        traj.records.push(rec);
    }
    let growth_rate = geometric_rate(&norms);
    let vanishing = match (norms.first(), norms.last()) {
        (Some(&a), Some(&b)) => b < 1e-8 * a,
        _ => false,
    };
    Ok(AsymGampRun {
        trajectory: traj,
        state: GampState {
            omega,
            w_hat: w,
            v: DMatrix::identity(p, p) / gamma,
            a: DMatrix::zeros(p, p),
            t: iters,
        },
        cross_check: cross,
        growth_rate,
        vanishing,
    })
}

/// Geometric mean of successive ratios over the last (up to) five steps.
fn geometric_rate(norms: &[f64]) -> f64 {
    if norms.len() < 2 {
        return f64::NAN;
    }
    let k = (norms.len() - 1).min(5);
    let last = norms[norms.len() - 1];
    let first = norms[norms.len() - 1 - k];
    (last / first).powf(1.0 / k as f64)
}

/// Outcome of the symmetric spectral GAMP.
#[derive(Debug, Clone)]
pub struct SymGampRun {
    pub trajectory: Trajectory,
    pub state: GampState,
    pub gammas: Vec<f64>,
    pub vs: Vec<DMatrix<f64>>,
    /// `‖T vec(ŴV) − aγ vec(ŴV)‖/‖vec(ŴV)‖` at the last step.
    pub fixed_point_residual: f64,
}

/// Symmetric spectral GAMP with `a` held fixed and `V₀ = I`:
///
/// `B_i = 𝒯_i V_t (a − V_t𝒯_iV_t)⁻¹`, `A_t = d⁻¹Σ_i B_i`,
/// `Ω^t = XŴ^t − Γ^{t−1}V_tᵀ`, `Ŵ^{t+1} = (XᵀΓ^t − Ŵ^t A_tᵀ)V_{t+1}ᵀ`,
/// with `V_{t+1} = (γ_t V_t − A_t)⁻¹` and `γ_t = ‖V_t⁻¹ + V_t A_t‖_op`, the
/// value that keeps `‖V_{t+1}‖ = 1` given the empirical `A_t`. With these
/// choices a stationary iterate satisfies `T vec(ŴV) = aγ vec(ŴV)` exactly.
pub fn run_sym_gamp(
    ds: &Dataset,
    model: &LinkModel,
    a: f64,
    iters: usize,
    init: &Init,
) -> Result<SymGampRun> {
    if !(a >= 1.0) {
        return Err(Error::InvalidArgument(format!("a must be at least 1, got {a}")));
    }
    let (n, d, p) = (ds.n(), ds.d(), ds.p());
    let spectra = GSpectra::new(&ds.y, model)?;
    let tcal = spectra.shifted_kernel(1.0)?;
    let t_op = TOperator::from_parts(&ds.x, tcal.clone(), 1.0);

    let mut w = init.build(ds)?;
    let mut v = DMatrix::<f64>::identity(p, p);
    let mut g_prev = DMatrix::zeros(n, p);
    let mut omega = DMatrix::zeros(n, p);
    let mut a_mat = DMatrix::zeros(p, p);
    let mut traj = Trajectory::default();
    let mut gammas = Vec::with_capacity(iters);
    let mut vs = vec![v.clone()];
    let mut residual = f64::NAN;
    let mut rec0 = record(0, &w, &ds.w_star);
    rec0.a_t = Some(a);
    traj.records.push(rec0);
    for t in 0..iters {
        let b = tcal.map_blocks(|i, tc| {
            let k = &v * tc * &v;
            let shifted = DMatrix::identity(p, p) * a - k;
            let inv = shifted.try_inverse().ok_or(Error::SingularBlock {
                sample: i,
                eigenvalue: a,
                shift: -a,
            })?;
            Ok(tc * &v * inv)
        })?;
        a_mat = b.block_sum() / d as f64;
        let vinv = v
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("V_t became singular".into()))?;
        let gamma = op_norm(&(&vinv + &v * &a_mat));
        let v_next = (&v * gamma - &a_mat)
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("γ_t V_t − A_t is singular".into()))?;

        omega = mul_x(&ds.x, &w) - &g_prev * v.transpose();
        let g = b.apply_rows(&omega);
        let next = (mul_xt(&ds.x, &g) - &w * a_mat.transpose()) * v_next.transpose();
        check_blowup(t + 1, &next, w.norm())?;

        w = next;
        v = v_next;
        g_prev = g;
        gammas.push(gamma);
        vs.push(v.clone());

        let wv = vec_of(&(&w * &v));
        let norm = wv.norm();
        residual = if norm > 0.0 {
            (t_op.apply(&wv) - &wv * (a * gamma)).norm() / norm
        } else {
            f64::NAN
        };
        let mut rec = record(t + 1, &w, &ds.w_star);
        rec.gamma_t = Some(gamma);
        rec.a_t = Some(a);
        rec.residual = Some(residual);
        traj.records.push(rec);
    }
    Ok(SymGampRun {
        trajectory: traj,
        state: GampState {
            omega,
            w_hat: w,
            v,
            a: a_mat,
            t: iters,
        },
        gammas,
        vs,
        fixed_point_residual: residual,
    })
}

fn op_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

/// Largest asymmetry `max |V − Vᵀ|` over a series.
pub fn max_asymmetry(vs: &[DMatrix<f64>]) -> f64 {
    vs.iter().map(|v| (v - v.transpose()).amax()).fold(0.0, f64::max)
}

/// Smallest eigenvalue of the symmetric part of `Q`.
pub fn min_eigenvalue(q: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new((q + q.transpose()) * 0.5).eigenvalues.min()
}

/// Flattens a trajectory into one row per record: `t`, `M` row-major,
/// `Q` row-major, `m`, `γ_t`, `a_t` (NaN when not applicable).
pub fn trajectory_rows(traj: &Trajectory) -> Vec<Vec<f64>> {
    traj.records
        .iter()
        .map(|r| {
            let p = r.m.nrows();
            let mut row = Vec::with_capacity(4 + 2 * p * p);
            row.push(r.t as f64);
            for i in 0..p {
                for j in 0..p {
                    row.push(r.m[(i, j)]);
                }
            }
            for i in 0..p {
                for j in 0..p {
                    row.push(r.q[(i, j)]);
                }
            }
            row.push(r.overlap);
            row.push(r.gamma_t.unwrap_or(f64::NAN));
            row.push(r.a_t.unwrap_or(f64::NAN));
            row
        })
        .collect()
}

/// Column names matching [`trajectory_rows`].
pub fn trajectory_columns(p: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    for name in ["M", "Q"] {
        for i in 0..p {
            for j in 0..p {
                cols.push(format!("{name}_{i}{j}"));
            }
        }
    }
    cols.extend(["m", "gamma_t", "a_t"].map(String::from));
    cols
}

/// `vec` of an `n × p` or `d × p` matrix.
pub fn flatten(m: &DMatrix<f64>) -> DVector<f64> {
    vec_of(m)
}
