//! Custom link models declared in a TOML file.
//!
//! ```toml
//! [[model]]
//! name = "saddle"
//! p = 2
//! sampler = { kind = "quadratic", matrix = [[1.0, 0.0], [0.0, -1.0]], noise = 0.1 }
//! oracle = { samples = 200000, bins = 64, seed = 7 }
//! ```

use std::path::Path;
use std::sync::Arc;

use mim_spectral::model::{OracleOptions, REGISTRY};
use mim_spectral::{build_model, LinkModel};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub model: Vec<ModelSpec>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub p: usize,
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub oracle: OracleSpec,
}

/// Label channels. Every kind is even in `z`, so `E[z | y] = 0`.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SamplerSpec {
    /// `y = zᵀAz + σξ`.
    Quadratic {
        matrix: Vec<Vec<f64>>,
        #[serde(default)]
        noise: f64,
    },
    /// `y = ∏ z_k + σξ`.
    Product {
        #[serde(default)]
        noise: f64,
    },
    /// `y = sign(∏ z_k)`, flipped with probability `flip`.
    SignProduct {
        #[serde(default)]
        flip: f64,
    },
    /// `y = ‖z‖²/p + σξ`.
    NormSq {
        #[serde(default)]
        noise: f64,
    },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    pub samples: usize,
    pub bins: usize,
    pub seed: u64,
}

impl Default for OracleSpec {
    fn default() -> Self {
        let d = OracleOptions::default();
        Self {
            samples: d.n_samples,
            bins: d.n_bins,
            seed: d.seed,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> CliResult<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        Config::parse(&text)
    }

    pub fn parse(text: &str) -> CliResult<Config> {
        let cfg: Config =
            toml::from_str(text).map_err(|e| CliError::Input(format!("bad config: {e}")))?;
        for (i, m) in cfg.model.iter().enumerate() {
            if REGISTRY.contains(&m.name.as_str()) {
                return Err(CliError::Input(format!(
                    "config model `{}` shadows a built-in model",
                    m.name
                )));
            }
            if cfg.model[..i].iter().any(|o| o.name == m.name) {
                return Err(CliError::Input(format!("config model `{}` defined twice", m.name)));
            }
            m.validate()?;
        }
        Ok(cfg)
    }

    pub fn find(&self, name: &str) -> Option<&ModelSpec> {
        self.model.iter().find(|m| m.name == name)
    }
}

impl ModelSpec {
    fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| Err(CliError::Input(format!("model `{}`: {msg}", self.name)));
        if self.p == 0 {
            return bad("p must be positive".into());
        }
        match &self.sampler {
            SamplerSpec::Quadratic { matrix, noise } => {
                if matrix.len() != self.p || matrix.iter().any(|r| r.len() != self.p) {
                    return bad(format!("matrix must be {0}×{0}", self.p));
                }
                if !(*noise >= 0.0) {
                    return bad("noise must be non-negative".into());
                }
            }
            SamplerSpec::Product { noise } | SamplerSpec::NormSq { noise } => {
                if !(*noise >= 0.0) {
                    return bad("noise must be non-negative".into());
                }
            }
            SamplerSpec::SignProduct { flip } => {
                if !(0.0..=0.5).contains(flip) {
                    return bad("flip must lie in [0, 0.5]".into());
                }
            }
        }
        if self.oracle.samples < 2 * self.oracle.bins || self.oracle.bins == 0 {
            return bad("oracle needs at least two samples per bin".into());
        }
        Ok(())
    }

    pub fn build(&self) -> CliResult<LinkModel> {
        let p = self.p;
        let sampler: Arc<dyn mim_spectral::model::LabelSampler> = match self.sampler.clone() {
            SamplerSpec::Quadratic { matrix, noise } => {
                Arc::new(move |z: &[f64], rng: &mut dyn RngCore| {
                    let mut y = 0.0;
                    for (i, row) in matrix.iter().enumerate() {
                        for (j, a) in row.iter().enumerate() {
                            y += z[i] * a * z[j];
                        }
                    }
                    y + noise * gaussian(noise, rng)
                })
            }
            SamplerSpec::Product { noise } => Arc::new(move |z: &[f64], rng: &mut dyn RngCore| {
                z.iter().product::<f64>() + noise * gaussian(noise, rng)
            }),
            SamplerSpec::SignProduct { flip } => {
                Arc::new(move |z: &[f64], rng: &mut dyn RngCore| {
                    let s = z.iter().product::<f64>().signum();
                    if flip > 0.0 && rng.random::<f64>() < flip {
                        -s
                    } else {
                        s
                    }
                })
            }
            SamplerSpec::NormSq { noise } => Arc::new(move |z: &[f64], rng: &mut dyn RngCore| {
                z.iter().map(|v| v * v).sum::<f64>() / p as f64 + noise * gaussian(noise, rng)
            }),
        };
        let opts = OracleOptions {
            n_samples: self.oracle.samples,
            n_bins: self.oracle.bins,
            seed: self.oracle.seed,
        };
        Ok(LinkModel::custom(&self.name, p, sampler, opts)?)
    }
}

// Skips the draw for noiseless channels so they stay deterministic in z.
fn gaussian(noise: f64, rng: &mut dyn RngCore) -> f64 {
    if noise == 0.0 {
        0.0
    } else {
        StandardNormal.sample(rng)
    }
}

/// Default `p` for registry models whose index dimension is fixed.
fn default_p(name: &str) -> Option<usize> {
    match name {
        "product2" | "sign-product2" | "ratio" => Some(2),
        "single-index-square" => Some(1),
        _ => None,
    }
}

/// Resolves `--model`/`--p` against the registry and the optional config.
pub fn resolve_model(name: &str, p: Option<usize>, config: Option<&Config>) -> CliResult<LinkModel> {
    if let Some(spec) = config.and_then(|c| c.find(name)) {
        if let Some(p) = p.filter(|&p| p != spec.p) {
            return Err(CliError::Input(format!(
                "model `{name}` is declared with p = {}, got --p {p}",
                spec.p
            )));
        }
        return spec.build();
    }
    if name == "custom" {
        return Err(CliError::Input(
            "custom models are declared by name in a --config file".into(),
        ));
    }
    if !REGISTRY.contains(&name) {
        return Err(CliError::Input(format!(
            "unknown model `{name}` (built-ins: {})",
            REGISTRY[..REGISTRY.len() - 1].join(", ")
        )));
    }
    let p = p
        .or_else(|| default_p(name))
        .ok_or_else(|| CliError::Input(format!("model `{name}` needs --p")))?;
    Ok(build_model(name, p)?)
}
