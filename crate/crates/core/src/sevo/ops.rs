//! Expectations over the label law: `F`, `G`, their symmetric-scheme
//! variants and `p² × p²` representations.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::LinkModel;

/// Parameters `(a, V)` of the symmetric scheme.
#[derive(Debug, Clone)]
pub struct SymParams {
    pub a: f64,
    pub v: DMatrix<f64>,
}

impl SymParams {
    pub fn identity(a: f64, p: usize) -> Self {
        Self {
            a,
            v: DMatrix::identity(p, p),
        }
    }

    fn v_is_identity(&self) -> bool {
        let p = self.v.nrows();
        self.v == DMatrix::identity(p, p)
    }
}

/// `G(y)` and `R(y) = V𝒯V(a − V𝒯V)⁻¹` with `𝒯 = G(G + I)⁻¹`.
pub(crate) fn sym_kernel(model: &LinkModel, y: f64, sp: &SymParams) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let g = model.g_unchecked(y);
    let eig = SymmetricEigen::new(g.clone());
    let u = &eig.eigenvectors;
    let singular = |what: &str| {
        Error::Degenerate(format!(
            "{what} is singular near y = {y} for model `{}`",
            model.name()
        ))
    };
    for &lam in eig.eigenvalues.iter() {
        if (1.0 + lam).abs() <= 1e-12 * lam.abs().max(1.0) {
            return Err(singular("G(y) + I"));
        }
    }
    if sp.v_is_identity() {
        // r = z/(a − z) with z = λ/(1+λ), written without cancellation.
        let mut r = eig.eigenvalues.clone();
        for v in r.iter_mut() {
            let lam = *v;
            let den = sp.a * (1.0 + lam) - lam;
            if den.abs() <= 1e-12 * lam.abs().max(1.0) * sp.a.max(1.0) {
                return Err(singular("a·I − 𝒯(y)"));
            }
            *v = lam / den;
        }
        return Ok((g, u * DMatrix::from_diagonal(&r) * u.transpose()));
    }
    let z = eig.eigenvalues.map(|lam| lam / (1.0 + lam));
    let tcal = u * DMatrix::from_diagonal(&z) * u.transpose();
    let k = &sp.v * tcal * &sp.v;
    let k = (&k + k.transpose()) * 0.5;
    let ke = SymmetricEigen::new(k);
    let mut r = ke.eigenvalues.clone();
    for v in r.iter_mut() {
        let den = sp.a - *v;
        if den.abs() <= 1e-12 * sp.a.abs().max(1.0) {
            return Err(singular("a·I − V𝒯(y)V"));
        }
        *v /= den;
    }
    Ok((g, &ke.eigenvectors * DMatrix::from_diagonal(&r) * ke.eigenvectors.transpose()))
}

/// `E_y[f(y)]` for a matrix-valued `f` of shape `rows × cols`.
pub(crate) fn expect_matrix<F>(model: &LinkModel, rows: usize, cols: usize, mut f: F) -> Result<(DMatrix<f64>, f64)>
where
    F: FnMut(f64) -> Result<DMatrix<f64>>,
{
    let e = model.label_law().expect(rows * cols, |y, out| {
        let m = f(y)?;
        out.copy_from_slice(m.as_slice());
        Ok(())
    })?;
    Ok((DMatrix::from_vec(rows, cols, e.value), e.error))
}

fn check_square(model: &LinkModel, m: &DMatrix<f64>) -> Result<()> {
    let p = model.p();
    if m.shape() != (p, p) {
        return Err(Error::InvalidDimensions(format!(
            "expected a {p}×{p} matrix, got {}×{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// `F(M) = E[G M G]`.
pub fn op_f(model: &LinkModel, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(model, m)?;
    let p = model.p();
    Ok(expect_matrix(model, p, p, |y| {
        let g = model.g_unchecked(y);
        Ok(&g * m * &g)
    })?
    .0)
}

/// `G(M) = E[G M G Mᵀ G]`.
pub fn op_g(model: &LinkModel, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(model, m)?;
    let p = model.p();
    Ok(expect_matrix(model, p, p, |y| {
        let g = model.g_unchecked(y);
        Ok(&g * m * &g * m.transpose() * &g)
    })?
    .0)
}

/// `F(M; a, V) = E[R M G]`.
pub fn op_f_sym(model: &LinkModel, sp: &SymParams, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(model, m)?;
    let p = model.p();
    Ok(expect_matrix(model, p, p, |y| {
        let (g, r) = sym_kernel(model, y, sp)?;
        Ok(r * m * g)
    })?
    .0)
}

/// `F̃(Q; a, V) = E[R Q R]`.
pub fn op_f_tilde(model: &LinkModel, sp: &SymParams, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(model, q)?;
    let p = model.p();
    Ok(expect_matrix(model, p, p, |y| {
        let (_, r) = sym_kernel(model, y, sp)?;
        Ok(&r * q * &r)
    })?
    .0)
}

/// `G(M; a, V) = E[R M G Mᵀ R]`.
pub fn op_g_sym(model: &LinkModel, sp: &SymParams, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(model, m)?;
    let p = model.p();
    Ok(expect_matrix(model, p, p, |y| {
        let (g, r) = sym_kernel(model, y, sp)?;
        Ok(&r * m * g * m.transpose() * &r)
    })?
    .0)
}

/// `E[R(y)]`, the symmetric scheme's Onsager average.
pub(crate) fn mean_r(model: &LinkModel, sp: &SymParams) -> Result<DMatrix<f64>> {
    let p = model.p();
    Ok(expect_matrix(model, p, p, |y| Ok(sym_kernel(model, y, sp)?.1))?.0)
}

/// Which operator [`f_matrix_rep`] represents.
#[derive(Debug, Clone)]
pub enum Variant {
    F,
    FSym(SymParams),
    FTilde(SymParams),
}

/// Dense `p² × p²` representation acting on column-major `vec(M)`, with its
/// eigendecomposition sorted by decreasing eigenvalue.
#[derive(Debug, Clone)]
pub struct MatrixOperatorRep {
    pub p: usize,
    pub dense: DMatrix<f64>,
    /// Backend error estimate of the entries.
    pub error: f64,
    /// Largest `|rep − repᵀ|` entry before symmetrisation.
    pub asymmetry: f64,
    pub eigenvalues: Vec<f64>,
    /// `p × p` eigenvectors, orthonormal in the Frobenius inner product.
    pub eigenvectors: Vec<DMatrix<f64>>,
}

impl MatrixOperatorRep {
    pub fn nu1(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// Applies the representation to `M`.
    pub fn apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let v = &self.dense * DMatrix::from_column_slice(self.p * self.p, 1, m.as_slice());
        DMatrix::from_column_slice(self.p, self.p, v.as_slice())
    }

    /// Leading direction, normalised and symmetrised. For a degenerate top
    /// eigenvalue the identity is projected onto the top eigenspace, so the
    /// choice does not depend on the eigensolver's basis.
    pub fn leading_direction(&self) -> DMatrix<f64> {
        let p = self.p;
        let nu1 = self.eigenvalues[0];
        let gap_tol = (1e-8 * nu1.abs().max(1.0)).max(10.0 * self.error);
        let top: Vec<&DMatrix<f64>> = self
            .eigenvalues
            .iter()
            .zip(&self.eigenvectors)
            .filter(|(v, _)| nu1 - **v <= gap_tol)
            .map(|(_, m)| m)
            .collect();
        let id = DMatrix::<f64>::identity(p, p);
        let mut proj = DMatrix::zeros(p, p);
        if top.len() > 1 {
            for m in &top {
                proj += *m * m.dot(&id);
            }
        }
        let mut dir = if proj.norm() > 1e-6 { proj } else { top[0].clone() };
        dir = (&dir + dir.transpose()) * 0.5;
        if dir.trace() < 0.0 {
            dir.neg_mut();
        }
        let n = dir.norm();
        if n > 0.0 {
            dir /= n;
        }
        dir
    }
}

/// Builds the `p² × p²` representation of `F`, `F(·; a, V)` or `F̃(·; a, V)`.
pub fn f_matrix_rep(model: &LinkModel, variant: &Variant) -> Result<MatrixOperatorRep> {
    let p = model.p();
    let pp = p * p;
    let (dense, error) = expect_matrix(model, pp, pp, |y| match variant {
        Variant::F => {
            let g = model.g_unchecked(y);
            Ok(g.kronecker(&g))
        }
        Variant::FSym(sp) => {
            let (g, r) = sym_kernel(model, y, sp)?;
            Ok(g.kronecker(&r))
        }
        Variant::FTilde(sp) => {
            let (_, r) = sym_kernel(model, y, sp)?;
            Ok(r.kronecker(&r))
        }
    })?;
    let asymmetry = (&dense - dense.transpose()).amax();
    let tolerance = (1e-8 * dense.amax().max(1.0)).max(4.0 * error);
    if asymmetry > tolerance {
        return Err(Error::Asymmetric {
            asymmetry,
            tolerance,
        });
    }
    let sym = (&dense + dense.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    let mut order: Vec<usize> = (0..pp).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    Ok(MatrixOperatorRep {
        p,
        dense: sym,
        error,
        asymmetry,
        eigenvalues: order.iter().map(|&k| eig.eigenvalues[k]).collect(),
        eigenvectors: order
            .iter()
            .map(|&k| DMatrix::from_column_slice(p, p, eig.eigenvectors.column(k).as_slice()))
            .collect(),
    })
}
