use nalgebra::DMatrix;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::{LabelLaw, LabelSampler, LinkModel};
use crate::error::{Error, Result};
use crate::rng;

/// Sampling options for the binned conditional-moment oracle.
#[derive(Debug, Clone, Copy)]
pub struct OracleOptions {
    pub n_samples: usize,
    pub n_bins: usize,
    pub seed: u64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            n_samples: 1_000_000,
            n_bins: 64,
            seed: 0x6d69_6d5f_6f72_636c,
        }
    }
}

/// One label bin of the oracle.
#[derive(Debug, Clone)]
pub struct GBin {
    /// Lower edge (inclusive).
    pub lo: f64,
    /// Upper edge: the next bin's lower edge, or the largest label seen.
    pub hi: f64,
    /// Mean label inside the bin.
    pub center: f64,
    pub count: usize,
    /// Sample mean of `zzᵀ − I`.
    pub g: DMatrix<f64>,
    /// Entrywise standard error of `g`.
    pub se: DMatrix<f64>,
    /// `sqrt(Σ se²)`, the natural scale for Frobenius distances.
    pub frob_se: f64,
    /// Sample mean of `z` and its standard error.
    pub mean_z: Vec<f64>,
    pub se_z: Vec<f64>,
    /// Bin average of the analytic `G(y)` over the same labels, when available.
    pub g_reference: Option<DMatrix<f64>>,
}

/// Binned Monte-Carlo estimates of `E[zzᵀ − I | y]` and `E[z | y]`.
#[derive(Debug, Clone)]
pub struct BinnedG {
    pub p: usize,
    pub n_samples: usize,
    /// True when every distinct label has its own bin (exact conditioning).
    pub discrete: bool,
    pub bins: Vec<GBin>,
}

impl BinnedG {
    /// Bins with fewer than two samples have no usable error estimate.
    pub fn empty_bins(&self) -> Vec<usize> {
        (0..self.bins.len()).filter(|&b| self.bins[b].count < 2).collect()
    }

    pub(crate) fn atom_index(&self, y: f64) -> Option<usize> {
        let tol = 1e-12 * y.abs().max(1.0);
        self.bins.iter().position(|b| (b.center - y).abs() <= tol)
    }

    /// The bin whose range contains `y`; labels beyond the sampled range map
    /// to the outermost bins.
    pub fn lookup(&self, y: f64) -> &GBin {
        if self.discrete {
            if let Some(i) = self.atom_index(y) {
                return &self.bins[i];
            }
        }
        let idx = self.bins.partition_point(|b| b.lo <= y);
        &self.bins[idx.saturating_sub(1)]
    }

    /// Empirical label law with bin frequencies as weights.
    pub(crate) fn label_law(&self) -> LabelLaw {
        LabelLaw::Atoms {
            atoms: self
                .bins
                .iter()
                .map(|b| (b.center, b.count as f64 / self.n_samples as f64))
                .collect(),
            mc_samples: Some(self.n_samples),
        }
    }
}

pub(crate) fn build_table(
    p: usize,
    sampler: &dyn LabelSampler,
    opts: &OracleOptions,
) -> Result<BinnedG> {
    build(p, &|z, r| sampler.sample(z, r), None, opts)
}

/// Binned Monte-Carlo estimate of `G(y)` from `z ~ N(0, I_p)`.
///
/// Continuous labels use equal-probability bins from empirical quantiles;
/// labels with at most `n_bins` distinct values get one bin per value.
pub fn empirical_g_oracle(
    model: &LinkModel,
    n_samples: usize,
    n_bins: usize,
    seed: u64,
) -> Result<BinnedG> {
    let reference = model.is_analytic().then_some(model);
    build(
        model.p(),
        &|z, r| model.sample_label(z, r),
        reference,
        &OracleOptions {
            n_samples,
            n_bins,
            seed,
        },
    )
}

type Labeler<'a> = &'a dyn Fn(&[f64], &mut dyn RngCore) -> f64;

fn build(
    p: usize,
    label: Labeler<'_>,
    reference: Option<&LinkModel>,
    opts: &OracleOptions,
) -> Result<BinnedG> {
    let n = opts.n_samples;
    if n < 2 || opts.n_bins == 0 {
        return Err(Error::InvalidArgument(
            "oracle needs at least 2 samples and 1 bin".into(),
        ));
    }
    let mut rng = rng::stream(opts.seed, 0);
    let mut zs = vec![0.0; n * p];
    let mut ys = Vec::with_capacity(n);
    for s in 0..n {
        let z = &mut zs[s * p..(s + 1) * p];
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let y = label(z, &mut rng);
        if !y.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "label sampler produced non-finite label {y}"
            )));
        }
        ys.push(y);
    }

    let mut sorted = ys.clone();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();

    let discrete = distinct.len() <= opts.n_bins;
    let edges: Vec<f64> = if discrete {
        distinct
    } else {
        let mut e: Vec<f64> = (0..opts.n_bins).map(|b| sorted[b * n / opts.n_bins]).collect();
        e.dedup();
        e
    };
    let nb = edges.len();
    let bin_of = |y: f64| edges.partition_point(|&e| e <= y) - 1;

    let pp = p * p;
    let mut count = vec![0usize; nb];
    let mut ysum = vec![0.0; nb];
    let mut zsum = vec![0.0; nb * p];
    let mut z2sum = vec![0.0; nb * p];
    let mut msum = vec![0.0; nb * pp];
    let mut m2sum = vec![0.0; nb * pp];
    let mut refsum = reference.map(|_| vec![0.0; nb * pp]);
    for s in 0..n {
        let b = bin_of(ys[s]);
        let z = &zs[s * p..(s + 1) * p];
        count[b] += 1;
        ysum[b] += ys[s];
        for mu in 0..p {
            zsum[b * p + mu] += z[mu];
            z2sum[b * p + mu] += z[mu] * z[mu];
            for nu in 0..p {
                let v = z[mu] * z[nu] - if mu == nu { 1.0 } else { 0.0 };
                msum[b * pp + nu * p + mu] += v;
                m2sum[b * pp + nu * p + mu] += v * v;
            }
        }
        if let (Some(model), Some(acc)) = (reference, refsum.as_mut()) {
            let g = model.g_unchecked(ys[s]);
            for (k, v) in g.as_slice().iter().enumerate() {
                acc[b * pp + k] += v;
            }
        }
    }

    let sem = |sum: f64, sum2: f64, c: usize| -> (f64, f64) {
        let cf = c as f64;
        let mean = sum / cf;
        if c < 2 {
            return (mean, f64::INFINITY);
        }
        let var = ((sum2 - cf * mean * mean) / (cf - 1.0)).max(0.0);
        (mean, (var / cf).sqrt())
    };

    let mut bins = Vec::with_capacity(nb);
    for b in 0..nb {
        let c = count[b];
        let mut g = DMatrix::zeros(p, p);
        let mut se = DMatrix::zeros(p, p);
        for k in 0..pp {
            let (m, e) = sem(msum[b * pp + k], m2sum[b * pp + k], c);
            g.as_mut_slice()[k] = m;
            se.as_mut_slice()[k] = e;
        }
        let mut mean_z = vec![0.0; p];
        let mut se_z = vec![0.0; p];
        for mu in 0..p {
            let (m, e) = sem(zsum[b * p + mu], z2sum[b * p + mu], c);
            mean_z[mu] = m;
            se_z[mu] = e;
        }
        let frob_se = se.iter().map(|v| v * v).sum::<f64>().sqrt();
        let g_reference = refsum
            .as_ref()
            .map(|acc| DMatrix::from_column_slice(p, p, &acc[b * pp..(b + 1) * pp]) / c as f64);
        bins.push(GBin {
            lo: edges[b],
            hi: if b + 1 < nb { edges[b + 1] } else { sorted[n - 1] },
            center: ysum[b] / c as f64,
            count: c,
            g,
            se,
            frob_se,
            mean_z,
            se_z,
            g_reference,
        });
    }
    Ok(BinnedG {
        p,
        n_samples: n,
        discrete,
        bins,
    })
}

/// Outcome of the `E[z | y] = 0` test.
#[derive(Debug, Clone, Copy)]
pub struct GenerativeExponentCheck {
    pub passes: bool,
    /// Largest `|mean(z_μ)| / se(z_μ)` over populated bins.
    pub max_deviation: f64,
}

/// Tests `E[z | y] = 0` bin by bin at the 4σ level.
pub fn check_generative_exponent(
    model: &LinkModel,
    n_samples: usize,
    seed: u64,
) -> Result<GenerativeExponentCheck> {
    let table = empirical_g_oracle(model, n_samples, 64, seed)?;
    let mut worst = 0.0f64;
    for bin in table.bins.iter().filter(|b| b.count >= 30) {
        for (m, e) in bin.mean_z.iter().zip(&bin.se_z) {
            if *e > 0.0 {
                worst = worst.max(m.abs() / e);
            }
        }
    }
    Ok(GenerativeExponentCheck {
        passes: worst <= 4.0,
        max_deviation: worst,
    })
}
