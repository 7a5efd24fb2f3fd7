use std::sync::Arc;

use crate::error::{Error, Result};
use crate::special::{integrate, Domain, QuadOptions};

/// Expectation backend for the label marginal `Z(y)`.
#[derive(Clone)]
pub enum LabelLaw {
    /// Finitely many atoms `(y, probability)`. When `mc_samples` is set the
    /// weights are empirical frequencies and the reported error is the
    /// Monte-Carlo standard error.
    Atoms {
        atoms: Vec<(f64, f64)>,
        mc_samples: Option<usize>,
    },
    /// Continuous law with a known density, integrated adaptively.
    Density {
        pdf: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        domain: Domain,
        opts: QuadOptions,
    },
}

/// Value of a vector expectation and its estimated absolute error.
#[derive(Debug, Clone)]
pub struct Expectation {
    pub value: Vec<f64>,
    pub error: f64,
}

impl LabelLaw {
    pub fn atoms(atoms: Vec<(f64, f64)>) -> Self {
        LabelLaw::Atoms {
            atoms,
            mc_samples: None,
        }
    }

    /// Equal-weight empirical law of `samples`.
    pub fn empirical(samples: &[f64]) -> Self {
        let w = 1.0 / samples.len() as f64;
        LabelLaw::Atoms {
            atoms: samples.iter().map(|&y| (y, w)).collect(),
            mc_samples: Some(samples.len()),
        }
    }

    pub fn density<F>(pdf: F, domain: Domain) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        LabelLaw::Density {
            pdf: Arc::new(pdf),
            domain,
            opts: QuadOptions::default(),
        }
    }

    /// Computes `E_y[f(y)]` for a vector-valued `f` writing `dim` components.
    ///
    /// The first error returned by `f` aborts the computation.
    pub fn expect<F>(&self, dim: usize, mut f: F) -> Result<Expectation>
    where
        F: FnMut(f64, &mut [f64]) -> Result<()>,
    {
        match self {
            LabelLaw::Atoms { atoms, mc_samples } => {
                let mut value = vec![0.0; dim];
                let mut second = vec![0.0; dim];
                let mut buf = vec![0.0; dim];
                for &(y, w) in atoms {
                    if w == 0.0 {
                        continue;
                    }
                    buf.fill(0.0);
                    f(y, &mut buf)?;
                    for k in 0..dim {
                        value[k] += w * buf[k];
                        second[k] += w * buf[k] * buf[k];
                    }
                }
                let error = match mc_samples {
                    Some(n) => (0..dim)
                        .map(|k| ((second[k] - value[k] * value[k]).max(0.0) / *n as f64).sqrt())
                        .fold(0.0, f64::max),
                    None => 0.0,
                };
                Ok(Expectation { value, error })
            }
            LabelLaw::Density { pdf, domain, opts } => {
                let mut failure: Option<Error> = None;
                let q = integrate(
                    |y, out| {
                        if failure.is_some() {
                            return;
                        }
                        let w = pdf(y);
                        if w == 0.0 || !w.is_finite() {
                            return;
                        }
                        if let Err(e) = f(y, out) {
                            failure = Some(e);
                            out.fill(0.0);
                            return;
                        }
                        out.iter_mut().for_each(|v| *v *= w);
                    },
                    *domain,
                    dim,
                    *opts,
                );
                if let Some(e) = failure {
                    return Err(e);
                }
                let q = q?;
                Ok(Expectation {
                    value: q.value,
                    error: q.error,
                })
            }
        }
    }

    /// Scalar convenience wrapper.
    pub fn expect_scalar<F>(&self, mut f: F) -> Result<f64>
    where
        F: FnMut(f64) -> Result<f64>,
    {
        Ok(self
            .expect(1, |y, out| {
                out[0] = f(y)?;
                Ok(())
            })?
            .value[0])
    }
}
