//! Gaussian multi-index models: link functions, conditional moments and data.

mod dataset;
mod law;
mod oracle;

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::RngCore;

pub use dataset::{sample_dataset, Dataset};
pub use law::{Expectation, LabelLaw};
pub use oracle::{
    check_generative_exponent, empirical_g_oracle, BinnedG, GBin, GenerativeExponentCheck,
    OracleOptions,
};

use crate::error::{Error, Result};
use crate::special::{self, Domain};

/// Draws a label from `P(· | z)`. The generator is available for stochastic
/// channels; deterministic links ignore it.
pub trait LabelSampler: Send + Sync {
    fn sample(&self, z: &[f64], rng: &mut dyn RngCore) -> f64;
}

impl<F> LabelSampler for F
where
    F: Fn(&[f64], &mut dyn RngCore) -> f64 + Send + Sync,
{
    fn sample(&self, z: &[f64], rng: &mut dyn RngCore) -> f64 {
        self(z, rng)
    }
}

/// Registry names accepted by [`build_model`].
pub const REGISTRY: [&str; 6] = [
    "product2",
    "sign-product2",
    "norm-sq",
    "ratio",
    "single-index-square",
    "custom",
];

#[derive(Clone)]
enum Kind {
    Product2,
    SignProduct2,
    NormSq,
    Ratio,
    SingleIndexSquare,
    Custom {
        sampler: Arc<dyn LabelSampler>,
        table: Arc<BinnedG>,
    },
}

/// A multi-index link: index dimension, label sampler, conditional second
/// moment `G(y)` and, when it exists, a joint eigenbasis of `G(·)`.
///
/// Models are immutable and cheap to clone.
#[derive(Clone)]
pub struct LinkModel {
    name: String,
    p: usize,
    kind: Kind,
    law: LabelLaw,
}

impl fmt::Debug for LinkModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinkModel")
            .field("name", &self.name)
            .field("p", &self.p)
            .finish_non_exhaustive()
    }
}

/// A constant orthonormal basis diagonalising every `G(y)`.
#[derive(Debug, Clone)]
pub struct JointBasis {
    /// Columns are the shared eigenvectors.
    pub u: DMatrix<f64>,
}

/// Builds a registered model. `custom` is rejected here; use
/// [`LinkModel::custom`] with a sampler instead.
pub fn build_model(name: &str, p: usize) -> Result<LinkModel> {
    if p == 0 {
        return Err(Error::InvalidDimensions("p must be positive".into()));
    }
    let fixed = |expected: usize| -> Result<()> {
        if p != expected {
            Err(Error::IndexDimension {
                model: name.to_string(),
                expected,
                got: p,
            })
        } else {
            Ok(())
        }
    };
    let (kind, law) = match name {
        "product2" => {
            fixed(2)?;
            (
                Kind::Product2,
                LabelLaw::density(|y| special::bessel_k0(y.abs()) / PI, Domain::Real),
            )
        }
        "sign-product2" => {
            fixed(2)?;
            (Kind::SignProduct2, LabelLaw::atoms(vec![(-1.0, 0.5), (1.0, 0.5)]))
        }
        "norm-sq" => (Kind::NormSq, LabelLaw::density(chi2_over_p(p), Domain::Above(0.0))),
        "ratio" => {
            fixed(2)?;
            (
                Kind::Ratio,
                LabelLaw::density(|y| 1.0 / (PI * (1.0 + y * y)), Domain::Real),
            )
        }
        "single-index-square" => {
            fixed(1)?;
            (
                Kind::SingleIndexSquare,
                LabelLaw::density(chi2_over_p(1), Domain::Above(0.0)),
            )
        }
        "custom" => return Err(Error::MissingSampler(name.to_string())),
        other => return Err(Error::UnknownModel(other.to_string())),
    };
    Ok(LinkModel {
        name: name.to_string(),
        p,
        kind,
        law,
    })
}

/// Density of `y` when `p·y ~ χ²_p`.
fn chi2_over_p(p: usize) -> impl Fn(f64) -> f64 + Send + Sync + 'static {
    let k = p as f64 / 2.0;
    let log_norm = (p as f64).ln() - k * 2f64.ln() - statrs::function::gamma::ln_gamma(k);
    move |y: f64| {
        if y <= 0.0 || !y.is_finite() {
            return 0.0;
        }
        let x = 2.0 * k * y;
        (log_norm + (k - 1.0) * x.ln() - x / 2.0).exp()
    }
}

impl LinkModel {
    /// A user-defined link. `G(y)` is served by a binned Monte-Carlo oracle
    /// built once here; expectations over labels use the same samples.
    pub fn custom(
        name: &str,
        p: usize,
        sampler: Arc<dyn LabelSampler>,
        opts: OracleOptions,
    ) -> Result<LinkModel> {
        if p == 0 {
            return Err(Error::InvalidDimensions("p must be positive".into()));
        }
        let table = oracle::build_table(p, sampler.as_ref(), &opts)?;
        let law = table.label_law();
        Ok(LinkModel {
            name: name.to_string(),
            p,
            kind: Kind::Custom {
                sampler,
                table: Arc::new(table),
            },
            law,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Law of the label marginal `Z(y)`, used for every expectation over `y`.
    pub fn label_law(&self) -> &LabelLaw {
        &self.law
    }

    /// True when labels take finitely many values.
    pub fn is_discrete(&self) -> bool {
        match &self.kind {
            Kind::SignProduct2 => true,
            Kind::Custom { table, .. } => table.discrete,
            _ => false,
        }
    }

    /// True when `G(y)` is a closed form rather than a Monte-Carlo estimate.
    pub fn is_analytic(&self) -> bool {
        !matches!(self.kind, Kind::Custom { .. })
    }

    /// The binned oracle backing a custom model.
    pub fn oracle_table(&self) -> Option<&BinnedG> {
        match &self.kind {
            Kind::Custom { table, .. } => Some(table),
            _ => None,
        }
    }

    /// Draws `y ~ P(· | z)`.
    pub fn sample_label(&self, z: &[f64], rng: &mut dyn RngCore) -> f64 {
        debug_assert_eq!(z.len(), self.p);
        match &self.kind {
            Kind::Product2 => z[0] * z[1],
            Kind::SignProduct2 => {
                if z[0] * z[1] < 0.0 {
                    -1.0
                } else {
                    1.0
                }
            }
            Kind::NormSq => z.iter().map(|v| v * v).sum::<f64>() / self.p as f64,
            Kind::Ratio => z[0] / z[1],
            Kind::SingleIndexSquare => z[0] * z[0],
            Kind::Custom { sampler, .. } => sampler.sample(z, rng),
        }
    }

    fn check_support(&self, y: f64) -> Result<()> {
        let ok = y.is_finite()
            && match &self.kind {
                Kind::NormSq | Kind::SingleIndexSquare => y > 0.0,
                Kind::SignProduct2 => y == 1.0 || y == -1.0,
                Kind::Custom { table, .. } => !table.discrete || table.atom_index(y).is_some(),
                _ => true,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::OutsideSupport {
                model: self.name.clone(),
                y,
            })
        }
    }

    /// `G(y) = E[zzᵀ − I | y]`.
    pub fn conditional_g(&self, y: f64) -> Result<DMatrix<f64>> {
        self.check_support(y)?;
        Ok(self.g_unchecked(y))
    }

    /// `G(y)` without the support check; callers guarantee `y` is a label.
    pub(crate) fn g_unchecked(&self, y: f64) -> DMatrix<f64> {
        let p = self.p;
        match &self.kind {
            Kind::Product2 => {
                let d = special::x_k1_over_k0(y) - 1.0;
                DMatrix::from_row_slice(2, 2, &[d, y, y, d])
            }
            Kind::SignProduct2 => {
                let c = 2.0 * y / PI;
                DMatrix::from_row_slice(2, 2, &[0.0, c, c, 0.0])
            }
            Kind::NormSq => DMatrix::from_diagonal_element(p, p, y - 1.0),
            Kind::Ratio => {
                let s = 1.0 / (1.0 + y * y);
                let a = (y * y - 1.0) * s;
                let b = 2.0 * y * s;
                DMatrix::from_row_slice(2, 2, &[a, b, b, -a])
            }
            Kind::SingleIndexSquare => DMatrix::from_element(1, 1, y - 1.0),
            Kind::Custom { table, .. } => table.lookup(y).g.clone(),
        }
    }

    /// Shared eigenbasis of `G(·)`, if the model is jointly diagonalisable.
    pub fn joint_eigenbasis(&self) -> Option<JointBasis> {
        let p = self.p;
        match self.kind {
            Kind::Product2 | Kind::SignProduct2 => Some(JointBasis {
                u: DMatrix::from_row_slice(
                    2,
                    2,
                    &[FRAC_1_SQRT_2, FRAC_1_SQRT_2, FRAC_1_SQRT_2, -FRAC_1_SQRT_2],
                ),
            }),
            Kind::NormSq | Kind::SingleIndexSquare => Some(JointBasis {
                u: DMatrix::identity(p, p),
            }),
            Kind::Ratio | Kind::Custom { .. } => None,
        }
    }

    /// Eigenvalues `λ_l(y)` of `G(y)` in the column order of the joint basis.
    pub fn joint_eigenvalues(&self, y: f64) -> Result<Vec<f64>> {
        self.check_support(y)?;
        self.joint_eigenvalues_unchecked(y)
    }

    pub(crate) fn joint_eigenvalues_unchecked(&self, y: f64) -> Result<Vec<f64>> {
        match self.kind {
            Kind::Product2 => {
                let d = special::x_k1_over_k0(y) - 1.0;
                Ok(vec![d + y, d - y])
            }
            Kind::SignProduct2 => {
                let c = 2.0 * y / PI;
                Ok(vec![c, -c])
            }
            Kind::NormSq | Kind::SingleIndexSquare => Ok(vec![y - 1.0; self.p]),
            _ => Err(Error::NoJointBasis(self.name.clone())),
        }
    }

    /// `sup_y λ_l(y)/(λ_l(y) + 1)` for each joint direction.
    pub fn sup_preprocessed(&self) -> Result<Vec<f64>> {
        match self.kind {
            // λ = y − 1 and λ₁ ~ 2|y| as |y| → ∞: the supremum 1 is approached, not attained.
            Kind::Product2 | Kind::NormSq | Kind::SingleIndexSquare => Ok(vec![1.0; self.p]),
            Kind::SignProduct2 => {
                let c = 2.0 / PI;
                Ok(vec![c / (1.0 + c); 2])
            }
            _ => Err(Error::NoJointBasis(self.name.clone())),
        }
    }

    /// Closed-form critical sample complexity, for links where one is known.
    pub fn closed_form_alpha_c(&self) -> Option<f64> {
        match self.kind {
            Kind::NormSq => Some(self.p as f64 / 2.0),
            Kind::SignProduct2 => Some(PI * PI / 4.0),
            Kind::Ratio => Some(1.0),
            Kind::SingleIndexSquare => Some(0.5),
            _ => None,
        }
    }

    pub(crate) fn is_builtin(&self, name: &str) -> bool {
        self.is_analytic() && self.name == name
    }
}
