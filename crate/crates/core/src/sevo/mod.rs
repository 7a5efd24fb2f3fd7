//! State evolution: `α_c`, asymmetric and symmetric fixed points, closed-form
//! overlaps and the random-matrix constants of jointly diagonalisable links.

mod ops;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub use ops::{
    f_matrix_rep, op_f, op_f_sym, op_f_tilde, op_g, op_g_sym, MatrixOperatorRep, SymParams, Variant,
};

use crate::error::{Error, Result};
use crate::model::LinkModel;
use crate::special::bisect;

/// Upper end of every bisection bracket over `a`.
pub const A_MAX: f64 = 1e6;

/// `α_c = 1/ν₁` with the leading direction `M₁` of `F`.
#[derive(Debug, Clone)]
pub struct CriticalAlpha {
    pub alpha_c: f64,
    pub nu1: f64,
    /// Symmetric PSD, `‖M₁‖_F = 1`.
    pub m1: DMatrix<f64>,
    pub backend_error: f64,
}

pub fn critical_alpha(model: &LinkModel) -> Result<CriticalAlpha> {
    let rep = f_matrix_rep(model, &Variant::F)?;
    let nu1 = rep.nu1();
    if !(nu1 > rep.error.max(1e-14)) {
        return Err(Error::NotLearnable(nu1));
    }
    let m1 = rep.leading_direction();
    let min_eig = SymmetricEigen::new(m1.clone()).eigenvalues.min();
    if min_eig < -1e-8 {
        return Err(Error::Degenerate(format!(
            "leading direction of F is not PSD (smallest eigenvalue {min_eig:.3e})"
        )));
    }
    Ok(CriticalAlpha {
        alpha_c: 1.0 / nu1,
        nu1,
        m1,
        backend_error: rep.error / (nu1 * nu1),
    })
}

/// `m² = ‖M‖²_F / Tr Q`.
pub fn overlap_m2(m: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    let tr = q.trace();
    if tr > 0.0 {
        m.norm_squared() / tr
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Informed,
    Uninformed,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Informed => "informed",
            Branch::Uninformed => "uninformed",
        }
    }
}

/// A state-evolution fixed point. Symmetric-scheme fields are `None` for the
/// asymmetric scheme.
#[derive(Debug, Clone)]
pub struct SEFixedPoint {
    pub branch: Branch,
    pub alpha: f64,
    pub alpha_c: f64,
    pub gamma: f64,
    pub m: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub m2: f64,
    pub a: Option<f64>,
    pub v: Option<DMatrix<f64>>,
    pub lambda_s: Option<f64>,
    pub lambda_b: Option<f64>,
}

/// One state-evolution iterate.
#[derive(Debug, Clone)]
pub struct SEIterate {
    pub t: usize,
    pub m: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct AsymSeRun {
    pub fixed_point: SEFixedPoint,
    pub trace: Vec<SEIterate>,
    pub converged: bool,
}

/// Iterates `M⁺ = (α/γ)F(M)`, `Q⁺ = MMᵀ + (α/γ²)(G(M) + F(Q))`.
pub fn se_asym_run(
    model: &LinkModel,
    alpha: f64,
    gamma: f64,
    m0: &DMatrix<f64>,
    q0: &DMatrix<f64>,
    iters: usize,
    tol: f64,
) -> Result<AsymSeRun> {
    if gamma == 0.0 || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!("gamma must be non-zero, got {gamma}")));
    }
    let p = model.p();
    for m in [m0, q0] {
        if m.shape() != (p, p) {
            return Err(Error::InvalidDimensions(format!("M0 and Q0 must be {p}×{p}")));
        }
    }
    let crit = critical_alpha(model)?;
    let f = f_matrix_rep(model, &Variant::F)?;
    let mut m = m0.clone();
    let mut q = q0.clone();
    let mut trace = vec![SEIterate {
        t: 0,
        m: m.clone(),
        q: q.clone(),
    }];
    let mut converged = false;
    let mut prev_size = m.norm() + q.norm();
    for t in 1..=iters {
        let g = if m.norm() > 0.0 { op_g(model, &m)? } else { DMatrix::zeros(p, p) };
        let m_next = f.apply(&m) * (alpha / gamma);
        let q_next = &m * m.transpose() + (g + f.apply(&q)) * (alpha / (gamma * gamma));
        let size = m_next.norm() + q_next.norm();
        if !size.is_finite() || size > 1e12 {
            return Err(Error::Diverged {
                iteration: t,
                norm: size,
                rate: size / prev_size.max(f64::MIN_POSITIVE),
            });
        }
        let change = (&m_next - &m).norm() + (&q_next - &q).norm();
        m = m_next;
        q = (&q_next + q_next.transpose()) * 0.5;
        prev_size = size;
        trace.push(SEIterate {
            t,
            m: m.clone(),
            q: q.clone(),
        });
        if change <= tol * size.max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    let m2 = overlap_m2(&m, &q);
    let branch = if m2 > 1e-12 { Branch::Informed } else { Branch::Uninformed };
    Ok(AsymSeRun {
        fixed_point: SEFixedPoint {
            branch,
            alpha,
            alpha_c: crit.alpha_c,
            gamma,
            m,
            q,
            m2,
            a: None,
            v: None,
            lambda_s: None,
            lambda_b: None,
        },
        trace,
        converged,
    })
}

/// Solves `(I − c·rep)·vec Q = vec(rhs)`.
fn solve_q(rep: &MatrixOperatorRep, c: f64, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = rep.p;
    let pp = p * p;
    let a = DMatrix::identity(pp, pp) - &rep.dense * c;
    let b = DVector::from_column_slice(rhs.as_slice());
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Degenerate("Q equation is singular".into()))?;
    let q = DMatrix::from_column_slice(p, p, x.as_slice());
    Ok((&q + q.transpose()) * 0.5)
}

/// Informed asymmetric fixed point: `γ = α/α_c`, `M = M₁`, `Q` from the
/// linear equation `Q = MMᵀ + (α_c²/α)(G(M) + F(Q))`.
pub fn se_asym_informed(model: &LinkModel, alpha: f64) -> Result<SEFixedPoint> {
    let crit = critical_alpha(model)?;
    let ac = crit.alpha_c;
    if !(alpha > ac) {
        return Err(Error::BelowThreshold { alpha, alpha_c: ac });
    }
    let f = f_matrix_rep(model, &Variant::F)?;
    let m = crit.m1.clone();
    let c = ac * ac / alpha;
    let rhs = &m * m.transpose() + op_g(model, &m)? * c;
    let q = solve_q(&f, c, &rhs)?;
    let m2 = overlap_m2(&m, &q);
    Ok(SEFixedPoint {
        branch: Branch::Informed,
        alpha,
        alpha_c: ac,
        gamma: alpha / ac,
        m,
        q,
        m2,
        a: None,
        v: None,
        lambda_s: None,
        lambda_b: None,
    })
}

/// Uninformed asymmetric fixed point: `γ = √(α/α_c)`, `M = 0`, `Q = M₁`.
pub fn se_asym_uninformed(model: &LinkModel, alpha: f64) -> Result<SEFixedPoint> {
    let crit = critical_alpha(model)?;
    let p = model.p();
    Ok(SEFixedPoint {
        branch: Branch::Uninformed,
        alpha,
        alpha_c: crit.alpha_c,
        gamma: (alpha / crit.alpha_c).sqrt(),
        m: DMatrix::zeros(p, p),
        q: crit.m1,
        m2: 0.0,
        a: None,
        v: None,
        lambda_s: None,
        lambda_b: None,
    })
}

/// Asymptotic squared overlap `m²` of the asymmetric estimator, clamped at 0.
///
/// Built-in links use their closed forms; other links use the informed
/// fixed point.
pub fn predicted_overlap_asym(model: &LinkModel, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    let p = model.p() as f64;
    // Within quadrature round-off of the threshold counts as the threshold.
    if let Some(ac) = model.closed_form_alpha_c() {
        if alpha <= ac * (1.0 + 1e-12) {
            return Ok(0.0);
        }
    }
    let third_moment = |ac: f64| -> Result<f64> {
        let e3 = model
            .label_law()
            .expect_scalar(|y| Ok(model.joint_eigenvalues_unchecked(y)?[0].powi(3)))?;
        Ok(((alpha - ac) / (alpha + ac * ac * e3)).max(0.0))
    };
    let m2 = if model.is_builtin("norm-sq") {
        (alpha - p / 2.0) / (alpha + 2.0)
    } else if model.is_builtin("sign-product2") {
        1.0 - PI * PI / (4.0 * alpha)
    } else if model.is_builtin("ratio") {
        1.0 - 1.0 / alpha
    } else if model.is_builtin("single-index-square") || model.is_builtin("product2") {
        let ac = critical_alpha(model)?.alpha_c;
        if alpha <= ac {
            return Ok(0.0);
        }
        third_moment(ac)?
    } else {
        let ac = critical_alpha(model)?.alpha_c;
        if alpha <= ac {
            return Ok(0.0);
        }
        se_asym_informed(model, alpha)?.m2
    };
    Ok(m2.max(0.0))
}

/// `‖M‖² ≥ (1 − α_c/α)·Tr Q·(1 + (α_c²/α)·Tr G(M/‖M‖))⁻¹`; returns
/// (lhs, rhs).
pub fn informed_bound(model: &LinkModel, fp: &SEFixedPoint) -> Result<(f64, f64)> {
    let nm = fp.m.norm();
    if nm == 0.0 {
        return Err(Error::Degenerate("M = 0 at an informed fixed point".into()));
    }
    let dir = &fp.m / nm;
    let trg = op_g(model, &dir)?.trace();
    let ratio = fp.alpha_c / fp.alpha;
    let rhs = (1.0 - ratio) * fp.q.trace() / (1.0 + fp.alpha_c * ratio * trg);
    Ok((nm * nm, rhs))
}

/// One step `V ↦ (γV − αV⁻¹E[R])⁻¹` with `γ = ‖V⁻¹ + αE[R]‖_op`; returns
/// the new `V` (symmetrised, snapped to `I` within 1e−12) and `γ`.
pub fn v_step(model: &LinkModel, alpha: f64, a: f64, v: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let p = model.p();
    let id = DMatrix::<f64>::identity(p, p);
    let sp = SymParams { a, v: v.clone() };
    let s = ops::mean_r(model, &sp)?;
    let vinv = v
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("V became singular".into()))?;
    let b = &vinv + &s * alpha;
    let b = (&b + b.transpose()) * 0.5;
    let gamma = SymmetricEigen::new(b).eigenvalues.amax();
    let next = (v * gamma - &vinv * &s * alpha)
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("γV − A is singular".into()))?;
    let mut next = (&next + next.transpose()) * 0.5;
    if (&next - &id).amax() <= 1e-12 {
        next = id;
    }
    Ok((next, gamma))
}

/// Fixed point of [`v_step`] started from `V = I`.
pub fn v_fixed_point(model: &LinkModel, alpha: f64, a: f64) -> Result<(DMatrix<f64>, f64)> {
    let p = model.p();
    let mut v = DMatrix::<f64>::identity(p, p);
    let mut gamma = f64::NAN;
    for _ in 0..500 {
        let (next, g) = v_step(model, alpha, a, &v)?;
        gamma = g;
        let change = (&next - &v).amax();
        v = next;
        if change <= 1e-13 {
            break;
        }
    }
    Ok((v, gamma))
}

fn solve_for_a<F>(alpha: f64, mut nu1: F) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    // ν₁ decreases in a; bisect in log a for uniform relative resolution.
    let target = 1.0 / alpha;
    let t = bisect(
        |t| Ok(nu1(t.exp())? - target),
        0.0,
        A_MAX.ln(),
        1e-15,
        1e-10 * target.max(1e-300),
    )?;
    Ok(t.exp())
}

/// Symmetric-scheme fixed point (informed branch and bulk edge).
pub fn se_sym_fixed_point(model: &LinkModel, alpha: f64) -> Result<SEFixedPoint> {
    let crit = critical_alpha(model)?;
    let ac = crit.alpha_c;
    if !(alpha > ac) {
        return Err(Error::BelowThreshold { alpha, alpha_c: ac });
    }
    let params = |a: f64| -> Result<SymParams> {
        let (v, _) = v_fixed_point(model, alpha, a)?;
        Ok(SymParams { a, v })
    };
    let a = solve_for_a(alpha, |a| Ok(f_matrix_rep(model, &Variant::FSym(params(a)?))?.nu1()))?;
    let (v, gamma) = v_fixed_point(model, alpha, a)?;
    let sp = SymParams { a, v: v.clone() };
    let rep = f_matrix_rep(model, &Variant::FSym(sp.clone()))?;
    let m = rep.leading_direction();
    let ft = f_matrix_rep(model, &Variant::FTilde(sp.clone()))?;
    let rhs = &m * m.transpose() + op_g_sym(model, &sp, &m)? * alpha;
    let q = solve_q(&ft, alpha, &rhs)?;

    let a_b = solve_for_a(alpha, |a| Ok(f_matrix_rep(model, &Variant::FTilde(params(a)?))?.nu1()))?;
    let (_, gamma_b) = v_fixed_point(model, alpha, a_b)?;

    let m2 = overlap_m2(&m, &q);
    Ok(SEFixedPoint {
        branch: Branch::Informed,
        alpha,
        alpha_c: ac,
        gamma,
        m,
        q,
        m2,
        a: Some(a),
        v: Some(v),
        lambda_s: Some(a * gamma),
        lambda_b: Some(a_b * gamma_b),
    })
}

/// Scalar reduction of the symmetric scheme for jointly diagonalisable links
/// with a single eigenvalue profile `λ(y)` (the first joint direction).
#[derive(Debug, Clone, Copy)]
pub struct ScalarSym {
    pub a: f64,
    pub gamma: f64,
    pub m2: f64,
}

/// Solves `E[λ²/(a(1+λ) − λ)] = 1/α`, `γ = 1 + α E[λ/(a(1+λ) − λ)]` and
/// `m² = (1 − αE[λ²/D²]) / (1 + αE[λ³/D²])` with `D = a(1+λ) − λ`.
pub fn scalar_sym(model: &LinkModel, alpha: f64) -> Result<ScalarSym> {
    if model.joint_eigenbasis().is_none() {
        return Err(Error::NoJointBasis(model.name().to_string()));
    }
    let law = model.label_law();
    let lam = |y: f64| -> Result<f64> { Ok(model.joint_eigenvalues_unchecked(y)?[0]) };
    let moments = |a: f64| -> Result<Vec<f64>> {
        Ok(law
            .expect(4, |y, out| {
                let l = lam(y)?;
                let d = a * (1.0 + l) - l;
                out[0] = l * l / d;
                out[1] = l / d;
                out[2] = l * l / (d * d);
                out[3] = l * l * l / (d * d);
                Ok(())
            })?
            .value)
    };
    let e2 = law.expect_scalar(|y| Ok(lam(y)?.powi(2)))?;
    if !(alpha * e2 > 1.0) {
        return Err(Error::BelowThreshold {
            alpha,
            alpha_c: 1.0 / e2,
        });
    }
    let a = solve_for_a(alpha, |a| Ok(moments(a)?[0]))?;
    let mo = moments(a)?;
    let m2 = ((1.0 - alpha * mo[2]) / (1.0 + alpha * mo[3])).max(0.0);
    Ok(ScalarSym {
        a,
        gamma: 1.0 + alpha * mo[1],
        m2,
    })
}

/// Per-direction constants of a jointly diagonalisable link.
#[derive(Debug, Clone, Copy)]
pub struct DirectionConstants {
    /// `1/E[λ_l²]`.
    pub alpha_c: f64,
    /// `sup z_l`, `z_l = λ_l/(λ_l + 1)`.
    pub sup_z: f64,
    /// Root of `E[(z_l/(ā − z_l))²] = 1/α`, or `sup z_l` when there is none.
    pub a_bar: f64,
    /// True when `ā` sits on the boundary `sup z_l`.
    pub boundary: bool,
    /// `ψ(ā) = ā(1 + αE[z_l/(ā − z_l)])`.
    pub psi: f64,
}

#[derive(Debug, Clone)]
pub struct JointConstants {
    pub alpha: f64,
    pub directions: Vec<DirectionConstants>,
    /// `min_l α_{c,l}`.
    pub alpha_c: f64,
    /// `max_l ψ(ā_l)`.
    pub lambda_b: f64,
    /// `Some(1)` above the threshold.
    pub lambda_s: Option<f64>,
}

/// Bulk edge and outlier location of `T` for jointly diagonalisable links.
pub fn jointly_diag_constants(model: &LinkModel, alpha: f64) -> Result<JointConstants> {
    if model.joint_eigenbasis().is_none() {
        return Err(Error::NoJointBasis(model.name().to_string()));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    let law = model.label_law();
    let sups = model.sup_preprocessed()?;
    let mut directions = Vec::with_capacity(model.p());
    for (l, &sup_z) in sups.iter().enumerate() {
        let lam = |y: f64| -> Result<f64> { Ok(model.joint_eigenvalues_unchecked(y)?[l]) };
        // z/(a − z) = λ/(a(1+λ) − λ).
        let ratio_moments = |a: f64| -> Result<(f64, f64)> {
            let v = law
                .expect(2, |y, out| {
                    let x = lam(y)?;
                    let r = x / (a * (1.0 + x) - x);
                    out[0] = r * r;
                    out[1] = r;
                    Ok(())
                })?
                .value;
            Ok((v[0], v[1]))
        };
        let e2 = law.expect_scalar(|y| Ok(lam(y)?.powi(2)))?;
        let target = 1.0 / alpha;
        let lo = sup_z + 1e-12;
        let (f_lo, _) = ratio_moments(lo)?;
        let (a_bar, boundary) = if f_lo > target {
            let a = bisect(
                |a| Ok(ratio_moments(a)?.0 - target),
                lo,
                A_MAX,
                1e-15,
                1e-10 * target,
            )?;
            (a, false)
        } else {
            (sup_z, true)
        };
        let psi = a_bar * (1.0 + alpha * ratio_moments(a_bar)?.1);
        directions.push(DirectionConstants {
            alpha_c: 1.0 / e2,
            sup_z,
            a_bar,
            boundary,
            psi,
        });
    }
    let alpha_c = directions.iter().map(|d| d.alpha_c).fold(f64::INFINITY, f64::min);
    let lambda_b = directions.iter().map(|d| d.psi).fold(f64::NEG_INFINITY, f64::max);
    Ok(JointConstants {
        alpha,
        directions,
        alpha_c,
        lambda_b,
        lambda_s: (alpha > alpha_c).then_some(1.0),
    })
}

/// One step of the state evolution of linear GAMP with denoiser `G_out(y)`
/// and input matrix `V`:
/// `M⁺ = V M̂`, `Q⁺ = V(M̂M̂ᵀ + Q̂)Vᵀ`.
pub fn se_linear_step<F>(
    model: &LinkModel,
    alpha: f64,
    g_out: F,
    v: &DMatrix<f64>,
    m: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)>
where
    F: Fn(f64) -> DMatrix<f64>,
{
    let p = model.p();
    let (mats, _) = ops::expect_matrix(model, p, 3 * p, |y| {
        let go = g_out(y);
        let g = model.g_unchecked(y);
        let a = &go * m * &g;
        let b = &a * m.transpose() * go.transpose();
        let c = &go * q * go.transpose();
        let mut out = DMatrix::zeros(p, 3 * p);
        out.columns_mut(0, p).copy_from(&a);
        out.columns_mut(p, p).copy_from(&b);
        out.columns_mut(2 * p, p).copy_from(&c);
        Ok(out)
    })?;
    let m_hat = mats.columns(0, p) * alpha;
    let q_hat = (mats.columns(p, p) + mats.columns(2 * p, p)) * alpha;
    let m_next = v * &m_hat;
    let q_next = v * (&m_hat * m_hat.transpose() + q_hat) * v.transpose();
    Ok((m_next, q_next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;

    #[test]
    fn critical_alpha_closed_forms() {
        for (name, p, want) in [
            ("norm-sq", 4, 2.0),
            ("sign-product2", 2, PI * PI / 4.0),
            ("ratio", 2, 1.0),
            ("single-index-square", 1, 0.5),
        ] {
            let m = build_model(name, p).unwrap();
            let c = critical_alpha(&m).unwrap();
            assert!((c.alpha_c - want).abs() < 1e-9, "{name}: {}", c.alpha_c);
        }
        let c = critical_alpha(&build_model("product2", 2).unwrap()).unwrap();
        assert!((c.alpha_c - 0.59375).abs() < 1e-3, "{}", c.alpha_c);
    }

    #[test]
    fn norm_sq_symmetric_reference() {
        let m = build_model("norm-sq", 4).unwrap();
        let fp = se_sym_fixed_point(&m, 6.0).unwrap();
        assert!((fp.a.unwrap() - 2.802575525629828).abs() < 1e-7);
        assert!((fp.gamma - 0.35681464811738417).abs() < 1e-7);
        assert!((fp.lambda_s.unwrap() - 1.0).abs() < 1e-6);
        assert!((fp.m2 - 0.6431853518826157).abs() < 1e-7);
        let jc = jointly_diag_constants(&m, 6.0).unwrap();
        assert!((jc.directions[0].a_bar - 1.6171982792951385).abs() < 1e-7);
        assert!((jc.lambda_b - 0.6344252375810775).abs() < 1e-7);
        assert!((fp.lambda_b.unwrap() - jc.lambda_b).abs() < 1e-6);
    }
}
