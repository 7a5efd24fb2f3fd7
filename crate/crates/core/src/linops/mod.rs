//! Matrix-free `Ĝ`, `L` and `T_γ`, dense materialisation and estimator
//! reconstruction.
//!
//! A stacked vector of base dimension `b` holds component `(i, μ)` at flat
//! index `μ·b + i`: it is the column-major layout of a `b × p` matrix, so
//! `vec`/`mat` are free reshapes.

mod transfer;

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub use transfer::{eigpair_l_to_t, eigpair_t_to_l, Transfer};

use crate::error::{Error, Result};
use crate::model::{Dataset, LinkModel};

/// Default cap on the flat dimension of dense materialisations.
pub const DENSE_CAP: usize = 4000;

/// A linear map on stacked vectors, applied without materialising it.
pub trait ImplicitOperator: Sync {
    /// Flat dimension.
    fn dim(&self) -> usize;

    fn is_symmetric(&self) -> bool;

    /// Applies the operator to every column of a `dim × k` block.
    fn apply_block(&self, v: &DMatrix<f64>) -> DMatrix<f64>;

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let m = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
        DVector::from_column_slice(self.apply_block(&m).as_slice())
    }
}

/// An explicit matrix viewed as an [`ImplicitOperator`].
#[derive(Debug, Clone)]
pub struct DenseOperator {
    pub matrix: DMatrix<f64>,
    pub symmetric: bool,
}

impl DenseOperator {
    pub fn new(matrix: DMatrix<f64>, symmetric: bool) -> Self {
        assert!(matrix.is_square(), "operator matrix must be square");
        Self { matrix, symmetric }
    }
}

impl ImplicitOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    fn apply_block(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        &self.matrix * v
    }
}

/// `out = X · b` for column-major `b` of shape `d × m`.
pub(crate) fn mul_x(x: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = x.shape();
    assert_eq!(b.nrows(), d);
    let m = b.ncols();
    let mut out = DMatrix::zeros(n, m);
    if n == 0 || m == 0 || d == 0 {
        return out;
    }
    // SAFETY: all pointers address live column-major buffers whose shapes
    // match the strides passed in.
    unsafe {
        matrixmultiply::dgemm(
            n,
            d,
            m,
            1.0,
            x.as_ptr(),
            1,
            n as isize,
            b.as_ptr(),
            1,
            d as isize,
            0.0,
            out.as_mut_ptr(),
            1,
            n as isize,
        );
    }
    out
}

/// `out = Xᵀ · c` for column-major `c` of shape `n × m`.
pub(crate) fn mul_xt(x: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = x.shape();
    assert_eq!(c.nrows(), n);
    let m = c.ncols();
    let mut out = DMatrix::zeros(d, m);
    if n == 0 || m == 0 || d == 0 {
        return out;
    }
    // SAFETY: as in `mul_x`; the transpose is expressed through strides.
    unsafe {
        matrixmultiply::dgemm(
            d,
            n,
            m,
            1.0,
            x.as_ptr(),
            n as isize,
            1,
            c.as_ptr(),
            1,
            n as isize,
            0.0,
            out.as_mut_ptr(),
            1,
            d as isize,
        );
    }
    out
}

/// Reinterprets a column-major buffer with a new shape.
pub(crate) fn reshape(m: &DMatrix<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    assert_eq!(m.len(), rows * cols);
    DMatrix::from_column_slice(rows, cols, m.as_slice())
}

/// `vec(M)` as a stacked vector.
pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// `mat(v)` with `b` rows.
pub fn mat_of(v: &DVector<f64>, b: usize) -> DMatrix<f64> {
    assert_eq!(v.len() % b, 0, "length {} is not a multiple of {b}", v.len());
    DMatrix::from_column_slice(b, v.len() / b, v.as_slice())
}

/// Block-diagonal operator with one `p × p` block per sample.
#[derive(Debug, Clone)]
pub struct BlockDiag {
    n: usize,
    p: usize,
    /// Entry `(μ, ν)` of block `i` lives at `(μ + ν·p)·n + i`, so loops over
    /// samples are contiguous.
    coef: Vec<f64>,
}

impl BlockDiag {
    pub fn from_blocks(blocks: &[DMatrix<f64>]) -> Self {
        let n = blocks.len();
        let p = blocks.first().map_or(0, |b| b.nrows());
        let mut coef = vec![0.0; n * p * p];
        for (i, b) in blocks.iter().enumerate() {
            assert_eq!(b.shape(), (p, p));
            for (e, v) in b.as_slice().iter().enumerate() {
                coef[e * n + i] = *v;
            }
        }
        Self { n, p, coef }
    }

    /// `Ĝ` with blocks `G(y_i)`.
    pub fn ghat(labels: &[f64], model: &LinkModel) -> Result<Self> {
        let blocks = per_label(labels, model.is_discrete(), |i, y| {
            model.conditional_g(y).map_err(|e| match e {
                Error::OutsideSupport { model, y } => Error::InvalidArgument(format!(
                    "label y_{i} = {y} is outside the support of `{model}`"
                )),
                other => other,
            })
        })?;
        Ok(Self::from_blocks(&blocks))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn block(&self, i: usize) -> DMatrix<f64> {
        let pp = self.p * self.p;
        DMatrix::from_iterator(self.p, self.p, (0..pp).map(|e| self.coef[e * self.n + i]))
    }

    /// `d⁻¹ Σ_i B_i`-style reductions use this sum.
    pub fn block_sum(&self) -> DMatrix<f64> {
        let pp = self.p * self.p;
        DMatrix::from_iterator(
            self.p,
            self.p,
            (0..pp).map(|e| self.coef[e * self.n..(e + 1) * self.n].iter().sum::<f64>()),
        )
    }

    /// Maps each block through `f(block, sample)`.
    pub fn map_blocks<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, &DMatrix<f64>) -> Result<DMatrix<f64>>,
    {
        let blocks = (0..self.n)
            .map(|i| f(i, &self.block(i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_blocks(&blocks))
    }

    /// Applies the blocks to an `n × (p·k)` matrix whose column groups
    /// `[c·p, (c+1)·p)` are stacked vectors reshaped to `n × p`.
    pub fn apply_rows(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, p) = (self.n, self.p);
        assert_eq!(m.nrows(), n);
        assert_eq!(m.ncols() % p.max(1), 0);
        let k = m.ncols() / p.max(1);
        let mut out = DMatrix::zeros(n, m.ncols());
        for c in 0..k {
            for nu in 0..p {
                let src = m.column(c * p + nu);
                for mu in 0..p {
                    let coef = &self.coef[(mu + nu * p) * n..(mu + nu * p + 1) * n];
                    let mut dst = out.column_mut(c * p + mu);
                    for i in 0..n {
                        dst[i] += coef[i] * src[i];
                    }
                }
            }
        }
        out
    }

    /// Applies the operator to a stacked vector of flat dimension `n·p`.
    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.n * self.p, v.len())?;
        let out = self.apply_rows(&mat_of(v, self.n));
        Ok(vec_of(&out))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let (n, p) = (self.n, self.p);
        let mut out = DMatrix::zeros(n * p, n * p);
        for mu in 0..p {
            for nu in 0..p {
                for i in 0..n {
                    out[(mu * n + i, nu * n + i)] = self.coef[(mu + nu * p) * n + i];
                }
            }
        }
        out
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Evaluates `f` once per distinct label when labels are discrete.
fn per_label<F>(labels: &[f64], discrete: bool, mut f: F) -> Result<Vec<DMatrix<f64>>>
where
    F: FnMut(usize, f64) -> Result<DMatrix<f64>>,
{
    if !discrete {
        return labels.iter().enumerate().map(|(i, &y)| f(i, y)).collect();
    }
    let mut cache: HashMap<u64, DMatrix<f64>> = HashMap::new();
    let mut out = Vec::with_capacity(labels.len());
    for (i, &y) in labels.iter().enumerate() {
        if let Some(b) = cache.get(&y.to_bits()) {
            out.push(b.clone());
        } else {
            let b = f(i, y)?;
            cache.insert(y.to_bits(), b.clone());
            out.push(b);
        }
    }
    Ok(out)
}

/// Per-sample symmetric eigendecompositions of `G(y_i)`.
#[derive(Debug, Clone)]
pub struct GSpectra {
    pub values: Vec<DVector<f64>>,
    pub vectors: Vec<DMatrix<f64>>,
}

impl GSpectra {
    pub fn new(labels: &[f64], model: &LinkModel) -> Result<Self> {
        let ghat = BlockDiag::ghat(labels, model)?;
        let mut values = Vec::with_capacity(labels.len());
        let mut vectors = Vec::with_capacity(labels.len());
        let mut cache: HashMap<u64, (DVector<f64>, DMatrix<f64>)> = HashMap::new();
        for i in 0..labels.len() {
            let key = labels[i].to_bits();
            let (v, u) = match cache.get(&key) {
                Some(hit) if model.is_discrete() => hit.clone(),
                _ => {
                    let e = SymmetricEigen::new(ghat.block(i));
                    let pair = (e.eigenvalues, e.eigenvectors);
                    if model.is_discrete() {
                        cache.insert(key, pair.clone());
                    }
                    pair
                }
            };
            values.push(v);
            vectors.push(u);
        }
        Ok(Self { values, vectors })
    }

    /// Blocks `U φ(Λ) Uᵀ`; `φ` may reject an eigenvalue (sample, eigenvalue).
    pub fn spectral_map<F>(&self, mut phi: F) -> Result<BlockDiag>
    where
        F: FnMut(usize, f64) -> Result<f64>,
    {
        let blocks = self
            .values
            .iter()
            .zip(&self.vectors)
            .enumerate()
            .map(|(i, (lam, u))| {
                let mut f = lam.clone();
                for v in f.iter_mut() {
                    *v = phi(i, *v)?;
                }
                Ok(u * DMatrix::from_diagonal(&f) * u.transpose())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BlockDiag::from_blocks(&blocks))
    }

    /// Blocks `G(y_i)(G(y_i) + γI)⁻¹`.
    pub fn shifted_kernel(&self, gamma: f64) -> Result<BlockDiag> {
        self.spectral_map(|i, lam| {
            let den = lam + gamma;
            if den.abs() <= 1e-12 * lam.abs().max(gamma.abs()).max(1.0) {
                Err(Error::SingularBlock {
                    sample: i,
                    eigenvalue: lam,
                    shift: gamma,
                })
            } else {
                Ok(lam / den)
            }
        })
    }

    /// Blocks `(I + G(y_i))⁻¹`.
    pub fn resolvent_at_minus_one(&self) -> Result<BlockDiag> {
        self.spectral_map(|i, lam| {
            let den = 1.0 + lam;
            if den.abs() <= 1e-12 * lam.abs().max(1.0) {
                Err(Error::SingularBlock {
                    sample: i,
                    eigenvalue: lam,
                    shift: 1.0,
                })
            } else {
                Ok(1.0 / den)
            }
        })
    }
}

/// The asymmetric operator `L = (XXᵀ − I) ⊗ · ∘ Ĝ` on `R^{np}`.
#[derive(Debug, Clone)]
pub struct LOperator<'a> {
    x: &'a DMatrix<f64>,
    ghat: BlockDiag,
}

impl<'a> LOperator<'a> {
    pub fn new(ds: &'a Dataset, model: &LinkModel) -> Result<Self> {
        Ok(Self {
            x: &ds.x,
            ghat: BlockDiag::ghat(&ds.y, model)?,
        })
    }

    pub fn from_parts(x: &'a DMatrix<f64>, ghat: BlockDiag) -> Self {
        assert_eq!(x.nrows(), ghat.n());
        Self { x, ghat }
    }

    pub fn ghat(&self) -> &BlockDiag {
        &self.ghat
    }

    /// `Ŵ_L = √(dN) Xᵀ mat(Ĝω) / ‖·‖_F`.
    pub fn estimator(&self, omega: &DVector<f64>, n_norm: f64) -> Result<DMatrix<f64>> {
        let u = self.ghat.apply(omega)?;
        let w = mul_xt(self.x, &mat_of(&u, self.x.nrows()));
        normalize_estimator(w, n_norm)
    }
}

impl ImplicitOperator for LOperator<'_> {
    fn dim(&self) -> usize {
        self.ghat.n() * self.ghat.p()
    }

    fn is_symmetric(&self) -> bool {
        false
    }

    fn apply_block(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, p) = (self.ghat.n(), self.ghat.p());
        assert_eq!(v.nrows(), n * p, "L expects flat dimension {}", n * p);
        let k = v.ncols();
        let u = self.ghat.apply_rows(&reshape(v, n, p * k));
        let mut out = mul_x(self.x, &mul_xt(self.x, &u));
        out -= &u;
        reshape(&out, n * p, k)
    }
}

/// The symmetric operator `T_γ = Σ_i x_i x_iᵀ ⊗ G(y_i)(G(y_i) + γI)⁻¹` on `R^{dp}`.
#[derive(Debug, Clone)]
pub struct TOperator<'a> {
    x: &'a DMatrix<f64>,
    kernel: BlockDiag,
    gamma: f64,
}

impl<'a> TOperator<'a> {
    pub fn new(ds: &'a Dataset, model: &LinkModel, gamma: f64) -> Result<Self> {
        let spectra = GSpectra::new(&ds.y, model)?;
        Ok(Self::from_parts(&ds.x, spectra.shifted_kernel(gamma)?, gamma))
    }

    pub fn from_parts(x: &'a DMatrix<f64>, kernel: BlockDiag, gamma: f64) -> Self {
        assert_eq!(x.nrows(), kernel.n());
        Self { x, kernel, gamma }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn kernel(&self) -> &BlockDiag {
        &self.kernel
    }
}

impl ImplicitOperator for TOperator<'_> {
    fn dim(&self) -> usize {
        self.x.ncols() * self.kernel.p()
    }

    fn is_symmetric(&self) -> bool {
        true
    }

    fn apply_block(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let (d, p) = (self.x.ncols(), self.kernel.p());
        assert_eq!(w.nrows(), d * p, "T expects flat dimension {}", d * p);
        let k = w.ncols();
        let z = mul_x(self.x, &reshape(w, d, p * k));
        let z = self.kernel.apply_rows(&z);
        reshape(&mul_xt(self.x, &z), d * p, k)
    }
}

/// `Ĝ v` for labels `y`.
pub fn ghat_apply(labels: &[f64], model: &LinkModel, v: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim(labels.len() * model.p(), v.len())?;
    BlockDiag::ghat(labels, model)?.apply(v)
}

/// `L v`.
pub fn l_apply(ds: &Dataset, model: &LinkModel, v: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim(ds.n() * model.p(), v.len())?;
    Ok(LOperator::new(ds, model)?.apply(v))
}

/// `T_γ w`.
pub fn t_apply(ds: &Dataset, model: &LinkModel, w: &DVector<f64>, gamma: f64) -> Result<DVector<f64>> {
    check_dim(ds.d() * model.p(), w.len())?;
    Ok(TOperator::new(ds, model, gamma)?.apply(w))
}

/// Which operator to materialise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Which {
    L,
    T,
    TGamma(f64),
}

/// Explicit matrix of `L`, `T` or `T_γ` from the entrywise definitions.
pub fn dense_materialize(
    which: Which,
    ds: &Dataset,
    model: &LinkModel,
    cap: usize,
) -> Result<DMatrix<f64>> {
    let (n, d, p) = (ds.n(), ds.d(), model.p());
    match which {
        Which::L => {
            let dim = n * p;
            if dim > cap {
                return Err(Error::CapExceeded { dim, cap });
            }
            let ghat = BlockDiag::ghat(&ds.y, model)?;
            let mut s = &ds.x * ds.x.transpose();
            for i in 0..n {
                s[(i, i)] -= 1.0;
            }
            let mut out = DMatrix::zeros(dim, dim);
            for mu in 0..p {
                for nu in 0..p {
                    for j in 0..n {
                        let g = ghat.coef[(mu + nu * p) * n + j];
                        for i in 0..n {
                            out[(mu * n + i, nu * n + j)] = s[(i, j)] * g;
                        }
                    }
                }
            }
            Ok(out)
        }
        Which::T | Which::TGamma(_) => {
            let gamma = if let Which::TGamma(g) = which { g } else { 1.0 };
            let dim = d * p;
            if dim > cap {
                return Err(Error::CapExceeded { dim, cap });
            }
            let kernel = GSpectra::new(&ds.y, model)?.shifted_kernel(gamma)?;
            let mut out = DMatrix::zeros(dim, dim);
            for mu in 0..p {
                for nu in 0..p {
                    let coef = &kernel.coef[(mu + nu * p) * n..(mu + nu * p + 1) * n];
                    let mut scaled = ds.x.clone();
                    for (i, c) in coef.iter().enumerate() {
                        scaled.row_mut(i).scale_mut(*c);
                    }
                    let block = ds.x.transpose() * scaled;
                    out.view_mut((mu * d, nu * d), (d, d)).copy_from(&block);
                }
            }
            let sym = (&out + out.transpose()) * 0.5;
            Ok(sym)
        }
    }
}

/// The `p` blocks `Xᵀ D_l X`, `D_l = diag(λ_l(y_i)/(λ_l(y_i) + 1))`, of `T`
/// written in the joint eigenbasis.
pub fn jointly_diag_blocks(ds: &Dataset, model: &LinkModel) -> Result<Vec<DMatrix<f64>>> {
    if model.joint_eigenbasis().is_none() {
        return Err(Error::NoJointBasis(model.name().to_string()));
    }
    let p = model.p();
    let mut weights = vec![vec![0.0; ds.n()]; p];
    for (i, &y) in ds.y.iter().enumerate() {
        let lam = model.joint_eigenvalues(y)?;
        for l in 0..p {
            let den = lam[l] + 1.0;
            if den.abs() <= 1e-12 * lam[l].abs().max(1.0) {
                return Err(Error::SingularBlock {
                    sample: i,
                    eigenvalue: lam[l],
                    shift: 1.0,
                });
            }
            weights[l][i] = lam[l] / den;
        }
    }
    Ok(weights
        .iter()
        .map(|w| {
            let mut scaled = ds.x.clone();
            for (i, c) in w.iter().enumerate() {
                scaled.row_mut(i).scale_mut(*c);
            }
            let b = ds.x.transpose() * scaled;
            (&b + b.transpose()) * 0.5
        })
        .collect())
}

fn normalize_estimator(w: DMatrix<f64>, n_norm: f64) -> Result<DMatrix<f64>> {
    let norm = w.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Degenerate(format!(
            "estimator direction has norm {norm}"
        )));
    }
    let d = w.nrows() as f64;
    Ok(w * ((d * n_norm).sqrt() / norm))
}

/// `Ŵ_L = √(dN) Xᵀ mat(Ĝω) / ‖Xᵀ mat(Ĝω)‖_F`.
pub fn estimator_from_l_eigvec(
    ds: &Dataset,
    model: &LinkModel,
    omega: &DVector<f64>,
    n_norm: f64,
) -> Result<DMatrix<f64>> {
    check_dim(ds.n() * model.p(), omega.len())?;
    LOperator::new(ds, model)?.estimator(omega, n_norm)
}

/// `Ŵ_T = √(dN) mat(w) / ‖w‖`.
pub fn estimator_from_t_eigvec(
    w: &DVector<f64>,
    d: usize,
    p: usize,
    n_norm: f64,
) -> Result<DMatrix<f64>> {
    check_dim(d * p, w.len())?;
    normalize_estimator(mat_of(w, d), n_norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, sample_dataset};

    #[test]
    fn gemm_helpers_match_nalgebra() {
        let x = DMatrix::from_fn(7, 5, |i, j| (i as f64 - 2.0 * j as f64).sin());
        let b = DMatrix::from_fn(5, 3, |i, j| (i * 3 + j) as f64 * 0.1);
        let c = DMatrix::from_fn(7, 2, |i, j| (i + j) as f64 - 3.0);
        assert!((mul_x(&x, &b) - &x * &b).norm() < 1e-12);
        assert!((mul_xt(&x, &c) - x.transpose() * &c).norm() < 1e-12);
    }

    #[test]
    fn l_dense_small_hand_formula() {
        let m = build_model("single-index-square", 1).unwrap();
        let ds = sample_dataset(&m, 3, 2, 4).unwrap();
        let l = dense_materialize(Which::L, &ds, &m, DENSE_CAP).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let xx: f64 = (0..2).map(|k| ds.x[(i, k)] * ds.x[(j, k)]).sum();
                let want = (xx - if i == j { 1.0 } else { 0.0 }) * (ds.y[j] - 1.0);
                assert!((l[(i, j)] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn cap_is_enforced() {
        let m = build_model("norm-sq", 2).unwrap();
        let ds = sample_dataset(&m, 30, 20, 1).unwrap();
        assert!(matches!(
            dense_materialize(Which::L, &ds, &m, 10),
            Err(Error::CapExceeded { dim: 60, cap: 10 })
        ));
    }

    #[test]
    fn ratio_t_is_singular() {
        let m = build_model("ratio", 2).unwrap();
        let ds = sample_dataset(&m, 20, 10, 1).unwrap();
        match TOperator::new(&ds, &m, 1.0) {
            Err(Error::SingularBlock { sample, eigenvalue, .. }) => {
                assert_eq!(sample, 0);
                assert!((eigenvalue + 1.0).abs() < 1e-12);
            }
            other => panic!("expected singular block, got {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch() {
        let m = build_model("norm-sq", 2).unwrap();
        let ds = sample_dataset(&m, 30, 20, 1).unwrap();
        let v = DVector::zeros(7);
        assert!(matches!(
            l_apply(&ds, &m, &v),
            Err(Error::DimensionMismatch { expected: 60, got: 7 })
        ));
        assert!(t_apply(&ds, &m, &v, 1.0).is_err());
        assert!(ghat_apply(&ds.y, &m, &v).is_err());
    }
}
