//! Command-line experiments for the `mim-spectral` library.
//!
//! Each subcommand writes its artifacts (CSV tables, JSON documents) plus a
//! `<stem>.manifest.json` into `--out`, and prints its JSON summary to stdout.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::commands::{InitKind, Method, Sizes, TraceParams};
use crate::config::{resolve_model, Config};
pub use crate::error::{CliError, CliResult};
use crate::output::{Artifacts, Cell, RunInputs, Table};

#[derive(Debug, Parser)]
#[command(name = "mim-spectral", version, about = "Spectral estimators for Gaussian multi-index models")]
pub struct Cli {
    /// Directory for CSV/JSON artifacts and the run manifest.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// TOML file declaring custom models.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for multi-seed runs.
    #[arg(long, global = true, env = "MIM_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Registry name or a model declared in --config.
    #[arg(long)]
    pub model: String,
    /// Index dimension; fixed-dimension models fill it in.
    #[arg(long)]
    pub p: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Critical sample complexity α_c and the leading direction M₁.
    AlphaC {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Eigenvalues of L or T on a synthetic dataset.
    Spectrum {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum, default_value = "asym")]
        method: Method,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Full dense spectrum instead of the leading eigenvalues.
        #[arg(long)]
        dense: bool,
        /// Number of leading eigenvalues for iterative solves.
        #[arg(long, default_value_t = 8)]
        k: usize,
    },
    /// Empirical vs predicted overlap over a grid of α.
    OverlapSweep {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum, default_value = "asym")]
        method: Method,
        /// Sample count n (asym) …
        #[arg(long, conflicts_with = "d")]
        n: Option<usize>,
        /// … or dimension d (sym).
        #[arg(long)]
        d: Option<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        alphas: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// GAMP trajectory with the state-evolution prediction alongside.
    GampTrace {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum, default_value = "asym")]
        scheme: Method,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Normalisation of the asymmetric scheme.
        #[arg(long)]
        gamma: Option<f64>,
        /// Fixed parameter of the symmetric scheme.
        #[arg(long)]
        a: Option<f64>,
        #[arg(long, default_value_t = 30)]
        iters: usize,
        #[arg(long, value_enum, default_value = "informed")]
        init: InitKind,
        /// Signal weight of the informed start.
        #[arg(long, default_value_t = 0.3)]
        eps: f64,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// State-evolution fixed point and its spectral constants.
    SeFixedPoint {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum, default_value = "asym")]
        scheme: Method,
        #[arg(long)]
        alpha: f64,
    },
}

/// Default dataset sizes, chosen to keep each run within minutes.
pub const DEFAULT_DENSE_FLAT: usize = 1200;
pub const DEFAULT_SIZE: usize = 2000;
pub const DEFAULT_TRACE_D: usize = 1000;

/// Parses, runs and writes artifacts; returns the printed summary.
pub fn run(cli: &Cli, command_line: Vec<String>) -> CliResult<Value> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Input("thread count must be positive".into()));
        }
        // Only the first pool configuration in a process takes effect.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let config = cli.config.as_deref().map(Config::load).transpose()?;
    let started = Instant::now();
    let model_of = |m: &ModelArgs| resolve_model(&m.model, m.p, config.as_ref());
    let spec_of = |m: &ModelArgs| {
        config
            .as_ref()
            .and_then(|c| c.find(&m.model))
            .map(|s| serde_json::to_value(s).unwrap_or(Value::Null))
    };

    let (stem, artifacts, summary) = match &cli.command {
        Command::AlphaC { model: margs } => {
            let model = model_of(margs)?;
            let report = commands::alpha_c(&model)?;
            let mut art = Artifacts::new(RunInputs {
                command: "alpha-c".into(),
                model: model.name().into(),
                p: model.p(),
                n: None,
                d: None,
                alpha: None,
                seeds: vec![],
                parameters: json!({ "custom": spec_of(margs) }),
            });
            let v = art.json("alpha_c.json", &report)?;
            ("alpha_c", art, v)
        }
        Command::Spectrum { model: margs, method, n, d, alpha, seed, dense, k } => {
            let model = model_of(margs)?;
            let default = if *dense { DEFAULT_DENSE_FLAT / model.p() } else { DEFAULT_SIZE };
            let sizes = commands::resolve_sizes(*method, *n, *d, *alpha, default)?;
            let report = commands::spectrum(&model, *method, sizes, *seed, *dense, *k)?;
            let mut art = Artifacts::new(inputs(
                "spectrum",
                &model,
                Some(sizes),
                vec![*seed],
                json!({ "method": method, "dense": dense, "k": k, "custom": spec_of(margs) }),
            ));
            let mut t = Table::new(["index", "re", "im"]);
            for (i, z) in report.eigenvalues.iter().enumerate() {
                t.push(vec![i.into(), z.re.into(), z.im.into()]);
            }
            art.csv("spectrum.csv", &t)?;
            let v = art.json("spectrum.json", &report.summary)?;
            ("spectrum", art, v)
        }
        Command::OverlapSweep { model: margs, method, n, d, alphas, trials, seed } => {
            let model = model_of(margs)?;
            let size = match method {
                Method::Asym => n.or(*d),
                Method::Sym => d.or(*n),
            }
            .unwrap_or(DEFAULT_SIZE);
            let report = commands::overlap_sweep(&model, *method, size, alphas, *trials, *seed)?;
            let seeds = commands::trial_seeds(*seed, *trials);
            let (n_in, d_in) = match method {
                Method::Asym => (Some(size), None),
                Method::Sym => (None, Some(size)),
            };
            let mut art = Artifacts::new(RunInputs {
                command: "overlap-sweep".into(),
                model: model.name().into(),
                p: model.p(),
                n: n_in,
                d: d_in,
                alpha: None,
                seeds,
                parameters: json!({ "method": method, "alphas": alphas, "custom": spec_of(margs) }),
            });
            let mut t = Table::new(["alpha", "m2_theory", "m2_emp_mean", "m2_emp_std", "trials_ok"]);
            for r in &report.rows {
                t.push(vec![
                    r.alpha.into(),
                    r.m2_theory.into(),
                    r.m2_emp_mean.into(),
                    r.m2_emp_std.into(),
                    r.trials_ok.into(),
                ]);
            }
            art.csv("overlap_sweep.csv", &t)?;
            let mut t = Table::new(["alpha", "seed", "m2"]);
            for r in &report.trials {
                t.push(vec![r.alpha.into(), r.seed.into(), r.m2.into()]);
            }
            art.csv("overlap_sweep_trials.csv", &t)?;
            let v = json!({ "rows": report.rows });
            ("overlap_sweep", art, v)
        }
        Command::GampTrace {
            model: margs,
            scheme,
            n,
            d,
            alpha,
            gamma,
            a,
            iters,
            init,
            eps,
            trials,
            seed,
        } => {
            let model = model_of(margs)?;
            // GAMP needs both n and d; default the dimension.
            let d = if n.is_none() && d.is_none() { Some(DEFAULT_TRACE_D) } else { *d };
            let sizes = commands::resolve_sizes(*scheme, *n, d, *alpha, DEFAULT_TRACE_D)?;
            let params = TraceParams {
                scheme: *scheme,
                gamma: *gamma,
                a: *a,
                iters: *iters,
                init: *init,
                eps: *eps,
            };
            let seeds = commands::trial_seeds(*seed, *trials);
            let report = commands::gamp_trace(&model, sizes, params, &seeds)?;
            let mut art = Artifacts::new(inputs(
                "gamp-trace",
                &model,
                Some(sizes),
                seeds,
                json!({ "params": params, "custom": spec_of(margs) }),
            ));
            art.csv("gamp_trace.csv", &trace_table(&report, model.p()))?;
            let v = art.json("gamp_trace.json", &report.summary)?;
            ("gamp_trace", art, v)
        }
        Command::SeFixedPoint { model: margs, scheme, alpha } => {
            let model = model_of(margs)?;
            let report = commands::se_fixed_point(&model, *scheme, *alpha)?;
            let mut art = Artifacts::new(RunInputs {
                command: "se-fixed-point".into(),
                model: model.name().into(),
                p: model.p(),
                n: None,
                d: None,
                alpha: Some(*alpha),
                seeds: vec![],
                parameters: json!({ "scheme": scheme, "custom": spec_of(margs) }),
            });
            let v = art.json("se_fixed_point.json", &report)?;
            ("se_fixed_point", art, v)
        }
    };
    let wall = started.elapsed().as_secs_f64();
    artifacts.write(&cli.out, stem, command_line, wall)?;
    Ok(summary)
}

fn inputs(
    command: &str,
    model: &mim_spectral::LinkModel,
    sizes: Option<Sizes>,
    seeds: Vec<u64>,
    parameters: Value,
) -> RunInputs {
    RunInputs {
        command: command.into(),
        model: model.name().into(),
        p: model.p(),
        n: sizes.map(|s| s.n),
        d: sizes.map(|s| s.d),
        alpha: sizes.map(|s| s.alpha),
        seeds,
        parameters,
    }
}

/// One row per (seed, t): GAMP overlaps, scheme diagnostics and the SE
/// comparison.
pub fn trace_table(report: &commands::TraceReport, p: usize) -> Table {
    let mut header = vec!["seed".to_string()];
    header.extend(mim_spectral::gamp::trajectory_columns(p));
    header.extend(["residual", "m_se", "se_deviation"].map(String::from));
    let mut t = Table::new(header);
    for trace in &report.traces {
        let dev = trace.se_deviation();
        for ((r, se), dev) in trace.records.iter().zip(&trace.se).zip(dev) {
            let mut row = vec![Cell::from(trace.seed), Cell::from(r.t)];
            for mat in [&r.m, &r.q] {
                for i in 0..p {
                    for j in 0..p {
                        row.push(mat[(i, j)].into());
                    }
                }
            }
            row.push(r.overlap.into());
            row.push(r.gamma_t.into());
            row.push(r.a_t.into());
            row.push(r.residual.into());
            row.push(se.as_ref().map(|s| mim_spectral::sevo::overlap_m2(&s.m, &s.q).sqrt()).into());
            row.push(dev.into());
            t.push(row);
        }
    }
    t
}
