//! Eigensolvers for implicit and dense operators.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linops::ImplicitOperator;
use crate::rng;

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 5000;

/// Outcome of an eigensolve.
#[derive(Debug, Clone)]
pub struct EigenReport {
    /// Sorted by decreasing real part.
    pub eigenvalues: Vec<Complex<f64>>,
    /// Column `j` belongs to `eigenvalues[j]`, when vectors were requested and
    /// the eigenvalue is real.
    pub vectors: Option<DMatrix<f64>>,
    pub iterations: usize,
    pub converged: bool,
    /// `‖Av − λv‖/‖v‖` per returned vector.
    pub residuals: Vec<f64>,
    /// Largest entry of `residuals` (0 for dense solves without vectors).
    pub residual: f64,
    /// Period-2 behaviour of the power iterate: a dominant ± or complex pair.
    pub oscillating: bool,
}

impl EigenReport {
    /// The leading eigenvalue when it is real.
    pub fn leading_real(&self) -> Option<f64> {
        self.eigenvalues
            .first()
            .filter(|z| z.im.abs() <= 1e-10 * z.re.abs().max(1.0))
            .map(|z| z.re)
    }

    /// The leading eigenvector, if computed.
    pub fn leading_vector(&self) -> Option<DVector<f64>> {
        self.vectors
            .as_ref()
            .filter(|v| v.ncols() > 0)
            .map(|v| v.column(0).into_owned())
    }
}

fn random_block(dim: usize, k: usize, seed: u64, restart: u64) -> DMatrix<f64> {
    let mut r = rng::stream(seed, rng::START_STREAM - restart);
    DMatrix::from_fn(dim, k, |_, _| r.sample(StandardNormal))
}

fn real(x: f64) -> Complex<f64> {
    Complex::new(x, 0.0)
}

/// Eigenvalues of a general square matrix. faer's Hessenberg QR has the
/// exceptional shifts and aggressive deflation that nalgebra's lacks; the
/// latter can cycle forever on nearly triangular matrices with tight
/// clusters, which is exactly what a converging Ritz block of `I_p ⊗ L₁`
/// looks like.
fn general_eigenvalues(m: &DMatrix<f64>) -> Option<Vec<Complex<f64>>> {
    let k = m.nrows();
    let f = faer::Mat::<f64>::from_fn(k, k, |i, j| m[(i, j)]);
    let ev = f.eigenvalues().ok()?;
    Some(ev.iter().map(|z| Complex::new(z.re, z.im)).collect())
}

/// Power iteration with Rayleigh-quotient tracking.
///
/// Converged when the relative change of the Rayleigh quotient is at most
/// `tol` and the residual at most `√tol·max(1, |ρ|)`.
pub fn power_dominant(
    op: &dyn ImplicitOperator,
    seed: u64,
    tol: f64,
    max_iter: usize,
) -> EigenReport {
    let start = random_block(op.dim(), 1, seed, 0).column(0).into_owned();
    power_from(op, start, tol, max_iter)
}

/// Power iteration from a given start vector.
pub fn power_from(
    op: &dyn ImplicitOperator,
    start: DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> EigenReport {
    let mut v = start;
    let norm = v.norm();
    if norm > 0.0 {
        v /= norm;
    }
    let mut rho_hist: Vec<f64> = Vec::new();
    let mut dots: Vec<f64> = Vec::new();
    let mut rho = f64::NAN;
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut it = 0;
    while it < max_iter {
        it += 1;
        let av = op.apply(&v);
        let new_rho = v.dot(&av);
        residual = (&av - &v * new_rho).norm();
        let change = (new_rho - rho).abs() / new_rho.abs().max(f64::MIN_POSITIVE);
        rho = new_rho;
        rho_hist.push(rho);
        let scale = rho.abs().max(1.0);
        if change <= tol && residual <= tol.sqrt() * scale {
            converged = true;
            break;
        }
        let n = av.norm();
        if !(n > 0.0) || !n.is_finite() {
            // Null or overflowing iterate: nothing further to learn.
            break;
        }
        let next = av / n;
        dots.push(next.dot(&v));
        v = next;
    }
    let oscillating = !converged && detect_period_two(&rho_hist, &dots);
    EigenReport {
        eigenvalues: vec![real(rho)],
        vectors: Some(DMatrix::from_column_slice(v.len(), 1, v.as_slice())),
        iterations: it,
        converged,
        residuals: vec![residual],
        residual,
        oscillating,
    }
}

fn detect_period_two(rho: &[f64], dots: &[f64]) -> bool {
    const WINDOW: usize = 20;
    if rho.len() < WINDOW + 2 {
        return false;
    }
    let tail = &rho[rho.len() - WINDOW..];
    let step1: f64 = tail.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    let step2: f64 = tail.windows(3).map(|w| (w[2] - w[0]).abs()).sum();
    let rayleigh_flip = step1 > 0.0 && step2 < 0.1 * step1;
    // The iterate flipping sign while failing to converge: ±λ pair.
    let tail_dots = &dots[dots.len().saturating_sub(WINDOW)..];
    let sign_flip = tail_dots.iter().all(|d| d.abs() < 0.9);
    rayleigh_flip || sign_flip
}

/// Subspace iteration with Rayleigh–Ritz. Resolves dominant `±λ` pairs and
/// near-degenerate leaders that defeat plain power iteration; returns the
/// Ritz values sorted by real part, with the vector of the leading one when
/// it is real.
pub fn subspace_dominant(
    op: &dyn ImplicitOperator,
    block: usize,
    seed: u64,
    tol: f64,
    max_iter: usize,
) -> EigenReport {
    let dim = op.dim();
    let b = block.clamp(1, dim.max(1));
    let mut v = orthonormalize(&random_block(dim, b, seed, 0));
    let mut prev = f64::NAN;
    let mut last = None;
    for it in 1..=max_iter {
        let av = op.apply_block(&v);
        let h = v.transpose() * &av;
        let Some(mut vals) = general_eigenvalues(&h) else {
            break;
        };
        vals.sort_by(|a, b| b.re.total_cmp(&a.re));
        let lead = vals[0];
        let (vec, residual) = if lead.im.abs() <= 1e-10 * lead.re.abs().max(1.0) {
            let s = small_null_vector(&h, lead.re);
            let y = &v * &s;
            let r = (&av * &s - &y * lead.re).norm() / y.norm();
            (Some(y), r)
        } else {
            (None, f64::INFINITY)
        };
        let change = (lead.re - prev).abs() / lead.re.abs().max(f64::MIN_POSITIVE);
        prev = lead.re;
        let converged = vec.is_some()
            && change <= tol
            && residual <= tol.sqrt() * lead.norm().max(1.0);
        last = Some((vals, vec, residual, it));
        if converged {
            break;
        }
        let next = orthonormalize(&av);
        if next.ncols() < b {
            // The operator has rank below the block size; the current basis
            // already spans an invariant subspace.
            break;
        }
        v = next;
    }
    let Some((vals, vec, residual, iterations)) = last else {
        return EigenReport {
            eigenvalues: Vec::new(),
            vectors: None,
            iterations: 0,
            converged: false,
            residuals: vec![f64::INFINITY],
            residual: f64::INFINITY,
            oscillating: false,
        };
    };
    let lead = vals[0];
    let converged = vec.is_some()
        && residual <= tol.sqrt() * lead.norm().max(1.0);
    EigenReport {
        eigenvalues: vals,
        vectors: vec.map(|y| DMatrix::from_column_slice(dim, 1, y.as_slice())),
        iterations,
        converged,
        residuals: vec![residual],
        residual,
        oscillating: false,
    }
}

/// Unit vector minimising `‖(H − θI)s‖`.
fn small_null_vector(h: &DMatrix<f64>, theta: f64) -> DVector<f64> {
    let k = h.nrows();
    let shifted = h - DMatrix::identity(k, k) * theta;
    let svd = shifted.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let (j, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let mut s = vt.row(j).transpose();
    // Fix the sign for reproducibility.
    let (imax, _) = s.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).unwrap();
    if s[imax] < 0.0 {
        s.neg_mut();
    }
    s
}

/// Orthonormal basis of the column space (Gram–Schmidt twice, dropping
/// numerically dependent columns).
fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let empty = DMatrix::zeros(m.nrows(), 0);
    let (q, _) = extend_basis(&empty, m);
    q
}

/// Orthonormalises `new` against the orthonormal columns of `basis` and
/// itself. Returns the accepted columns and how many were dropped.
fn extend_basis(basis: &DMatrix<f64>, new: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let dim = new.nrows();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(new.ncols());
    let mut dropped = 0;
    for j in 0..new.ncols() {
        let mut c = new.column(j).into_owned();
        let before = c.norm();
        if !(before > 0.0) || !before.is_finite() {
            dropped += 1;
            continue;
        }
        for _ in 0..2 {
            if basis.ncols() > 0 {
                let coeff = basis.tr_mul(&c);
                c -= basis * coeff;
            }
            for q in &cols {
                let s = q.dot(&c);
                c.axpy(-s, q, 1.0);
            }
        }
        let after = c.norm();
        if after <= 1e-10 * before {
            dropped += 1;
            continue;
        }
        cols.push(c / after);
    }
    let mut out = DMatrix::zeros(dim, cols.len());
    for (j, c) in cols.iter().enumerate() {
        out.set_column(j, c);
    }
    (out, dropped)
}

/// The `k` largest eigenpairs of a symmetric operator by thick-restart block
/// Lanczos (residual expansion, full reorthogonalisation).
///
/// Converged when every returned residual is at most `tol·|λ_max|`.
pub fn symmetric_top_k(
    op: &dyn ImplicitOperator,
    k: usize,
    seed: u64,
    tol: f64,
    max_iter: usize,
) -> Result<EigenReport> {
    if !op.is_symmetric() {
        return Err(Error::InvalidArgument(
            "symmetric_top_k needs a symmetric operator".into(),
        ));
    }
    let dim = op.dim();
    if k == 0 || k > dim {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must lie in 1..={dim}"
        )));
    }
    let bs = k.clamp(4, 8).min(dim);
    let max_basis = (3 * k + 4 * bs).max(40).min(dim);
    let keep = (k + bs).min(max_basis.saturating_sub(bs)).max(k);

    let mut restarts = 0u64;
    let mut v = orthonormalize(&random_block(dim, bs, seed, restarts));
    let mut av = op.apply_block(&v);
    let mut iterations = 0;
    loop {
        iterations += 1;
        let h = v.transpose() * &av;
        let h = (&h + h.transpose()) * 0.5;
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let m = order.len();
        let s = DMatrix::from_fn(m, m, |i, j| eig.eigenvectors[(i, order[j])]);
        let theta: Vec<f64> = order.iter().map(|&j| eig.eigenvalues[j]).collect();

        let kk = k.min(m);
        let s_k = s.columns(0, kk).into_owned();
        let x = &v * &s_k;
        let ax = &av * &s_k;
        let mut r = ax.clone();
        for j in 0..kk {
            r.column_mut(j).axpy(-theta[j], &x.column(j), 1.0);
        }
        let residuals: Vec<f64> = (0..kk).map(|j| r.column(j).norm()).collect();
        let lmax = theta.iter().fold(0.0f64, |a, t| a.max(t.abs()));
        let thresh = tol * lmax.max(f64::MIN_POSITIVE);
        let done = kk == k && residuals.iter().all(|&e| e <= thresh);
        if done || iterations >= max_iter || v.ncols() == dim {
            let residual = residuals.iter().copied().fold(0.0, f64::max);
            let converged = kk == k && residual <= thresh.max(1e-12 * lmax);
            return Ok(EigenReport {
                eigenvalues: theta[..kk].iter().map(|&t| real(t)).collect(),
                vectors: Some(x),
                iterations,
                converged,
                residuals,
                residual,
                oscillating: false,
            });
        }

        // Expansion block: residuals of the leading unconverged Ritz pairs.
        let mut picks: Vec<usize> = (0..kk).filter(|&j| residuals[j] > thresh).collect();
        picks.truncate(bs);
        let mut expand = DMatrix::zeros(dim, picks.len());
        for (c, &j) in picks.iter().enumerate() {
            expand.set_column(c, &r.column(j));
        }

        if v.ncols() + picks.len() > max_basis {
            let kept = keep.min(m);
            let s_keep = s.columns(0, kept).into_owned();
            v = &v * &s_keep;
            av = &av * &s_keep;
        }
        let room = dim - v.ncols();
        let (mut new, _) = extend_basis(&v, &expand);
        if new.ncols() > room {
            new = new.columns(0, room).into_owned();
        }
        if new.ncols() == 0 {
            if restarts >= 3 {
                return Err(Error::Degenerate(
                    "Lanczos breakdown persisted after 3 restarts".into(),
                ));
            }
            restarts += 1;
            let fresh = random_block(dim, bs.min(room), seed, restarts);
            new = extend_basis(&v, &fresh).0;
            if new.ncols() == 0 {
                continue;
            }
        }
        let anew = op.apply_block(&new);
        v = hcat(&v, &new);
        av = hcat(&av, &anew);
    }
}

fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Full spectrum of a dense matrix, sorted by decreasing real part.
pub fn dense_spectrum(matrix: &DMatrix<f64>, symmetric: bool, cap: usize) -> Result<EigenReport> {
    if !matrix.is_square() {
        return Err(Error::InvalidArgument("matrix must be square".into()));
    }
    let dim = matrix.nrows();
    if dim > cap {
        return Err(Error::CapExceeded { dim, cap });
    }
    let mut vals: Vec<Complex<f64>> = if symmetric {
        let sym = (matrix + matrix.transpose()) * 0.5;
        SymmetricEigen::new(sym).eigenvalues.iter().map(|&v| real(v)).collect()
    } else {
        general_eigenvalues(matrix)
            .ok_or_else(|| Error::Degenerate("nonsymmetric eigensolver did not converge".into()))?
    };
    vals.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    Ok(EigenReport {
        eigenvalues: vals,
        vectors: None,
        iterations: 0,
        converged: true,
        residuals: Vec::new(),
        residual: 0.0,
        oscillating: false,
    })
}

/// Unit eigenvector of a dense matrix for a known real eigenvalue, taken as
/// the right singular vector of `A − λI` with the smallest singular value.
/// Returns the vector and its relative residual `‖Av − λv‖`.
pub fn dense_real_eigenvector(matrix: &DMatrix<f64>, lambda: f64) -> Result<(DVector<f64>, f64)> {
    if !matrix.is_square() {
        return Err(Error::InvalidArgument("matrix must be square".into()));
    }
    let v = small_null_vector(matrix, lambda);
    let residual = (matrix * &v - &v * lambda).norm() / v.norm();
    Ok((v, residual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::DenseOperator;

    #[test]
    fn power_on_scaled_identity() {
        let op = DenseOperator::new(DMatrix::identity(10, 10) * 3.0, true);
        let r = power_dominant(&op, 1, 1e-9, 100);
        assert!(r.converged);
        assert!((r.eigenvalues[0].re - 3.0).abs() < 1e-12);
        assert!(r.iterations <= 2);
    }

    #[test]
    fn power_flags_pm_pair() {
        let op = DenseOperator::new(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, -2.0, 0.5])), false);
        let r = power_dominant(&op, 3, 1e-9, 200);
        assert!(!r.converged);
        assert!(r.oscillating);
    }

    #[test]
    fn subspace_resolves_pm_pair() {
        let op = DenseOperator::new(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, -2.0, 0.5, 0.1])), false);
        let r = subspace_dominant(&op, 3, 3, 1e-10, 500);
        assert!(r.converged);
        assert!((r.leading_real().unwrap() - 2.0).abs() < 1e-9);
        let v = r.leading_vector().unwrap();
        assert!((v[0].abs() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn top_k_diagonal() {
        let op = DenseOperator::new(
            DMatrix::from_diagonal(&DVector::from_vec(vec![5.0, 4.0, 3.0, 2.0, 1.0])),
            true,
        );
        let r = symmetric_top_k(&op, 2, 0, 1e-10, 100).unwrap();
        assert!(r.converged);
        assert!((r.eigenvalues[0].re - 5.0).abs() < 1e-10);
        assert!((r.eigenvalues[1].re - 4.0).abs() < 1e-10);
    }

    #[test]
    fn dense_rotation() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let r = dense_spectrum(&m, false, 10).unwrap();
        assert!((r.eigenvalues[0] - Complex::new(0.0, 1.0)).norm() < 1e-12);
        assert!((r.eigenvalues[1] - Complex::new(0.0, -1.0)).norm() < 1e-12);
        assert!(dense_spectrum(&m, false, 1).is_err());
    }
}
