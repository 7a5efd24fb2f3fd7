//! Exact maps between eigenvectors of `L` and `T_γ`.

use nalgebra::DVector;

use super::{mat_of, mul_x, mul_xt, vec_of, BlockDiag, GSpectra, ImplicitOperator, LOperator, TOperator};
use crate::error::{Error, Result};
use crate::model::{Dataset, LinkModel};

/// A transferred eigenvector and the relative residual of the target
/// eigen-equation.
#[derive(Debug, Clone)]
pub struct Transfer {
    pub vector: DVector<f64>,
    pub residual: f64,
}

/// `Lω = γ_L ω` ⇒ `w = vec(Xᵀ mat(Ĝω))` satisfies `T_{γ_L} w = w`.
///
/// Only real `γ_L ≥ 1` is accepted.
pub fn eigpair_l_to_t(
    ds: &Dataset,
    model: &LinkModel,
    gamma_l: f64,
    omega: &DVector<f64>,
) -> Result<Transfer> {
    if !(gamma_l >= 1.0) || !gamma_l.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "eigenvalue transfer needs real gamma_L >= 1, got {gamma_l}"
        )));
    }
    let (n, p) = (ds.n(), model.p());
    if omega.len() != n * p {
        return Err(Error::DimensionMismatch {
            expected: n * p,
            got: omega.len(),
        });
    }
    let ghat = BlockDiag::ghat(&ds.y, model)?;
    let u = ghat.apply(omega)?;
    let w = vec_of(&mul_xt(&ds.x, &mat_of(&u, n)));
    let norm = w.norm();
    if !(norm > 0.0) {
        return Err(Error::Degenerate("Xᵀ mat(Ĝω) vanishes".into()));
    }
    let t = TOperator::new(ds, model, gamma_l)?;
    let residual = (t.apply(&w) - &w).norm() / norm;
    Ok(Transfer { vector: w, residual })
}

/// `T w = γ_T w` ⇒ `ω = (I + Ĝ)⁻¹ vec(X mat(w))` satisfies
/// `Lω = γ_T ω + (γ_T − 1) Ĝω`.
pub fn eigpair_t_to_l(
    ds: &Dataset,
    model: &LinkModel,
    gamma_t: f64,
    w: &DVector<f64>,
) -> Result<Transfer> {
    let (d, p) = (ds.d(), model.p());
    if w.len() != d * p {
        return Err(Error::DimensionMismatch {
            expected: d * p,
            got: w.len(),
        });
    }
    let res = GSpectra::new(&ds.y, model)?.resolvent_at_minus_one()?;
    let xw = mul_x(&ds.x, &mat_of(w, d));
    let omega = vec_of(&res.apply_rows(&xw));
    let norm = omega.norm();
    if !(norm > 0.0) {
        return Err(Error::Degenerate("X mat(w) vanishes".into()));
    }
    let l = LOperator::new(ds, model)?;
    let g_omega = l.ghat().apply(&omega)?;
    let r = l.apply(&omega) - &omega * gamma_t - g_omega * (gamma_t - 1.0);
    Ok(Transfer {
        vector: omega,
        residual: r.norm() / norm,
    })
}
