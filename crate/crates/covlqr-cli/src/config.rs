//! Configuration file handling and flag overrides.
//!
//! The JSON file mirrors the benchmark configuration; every key is
//! optional and command-line flags win over file keys. `COVLQR_SEED` is
//! the master-seed fallback when neither the flag nor the file sets one.

use std::path::{Path, PathBuf};

use clap::Args;
use nalgebra::DMatrix;
use serde::Deserialize;

use covlqr::bench::{lambda_schedule, BenchConfig};
use covlqr::conic::{backend_by_name, ConicBackend};
use covlqr::control::{PenaltyPair, SystemModel};
use covlqr::data::{read_matrix_csv, DataMode};

use crate::AppError;

/// Flags shared by all subcommands; every file key has a flag override.
#[derive(Args, Debug, Clone)]
pub struct OverrideArgs {
    /// Master seed (fallback: COVLQR_SEED, then 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Trials per Monte Carlo cell.
    #[arg(long, global = true)]
    pub trials: Option<usize>,

    /// Noise levels, comma separated (first entry used by single-cell
    /// commands).
    #[arg(long, global = true, value_delimiter = ',')]
    pub sigma: Option<Vec<f64>>,

    /// Regularization weights, comma separated (first entry used by
    /// single-cell commands).
    #[arg(long, global = true, value_delimiter = ',')]
    pub lambda: Option<Vec<f64>>,

    /// Data generation mode: iid_pairs or trajectory.
    #[arg(long, global = true)]
    pub mode: Option<String>,

    /// Output directory for artifacts.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Data length t.
    #[arg(long, global = true)]
    pub t: Option<usize>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    model: Option<ModelSpec>,
    penalties: Option<PenaltySpec>,
    t: Option<usize>,
    sigma: Option<Vec<f64>>,
    lambda: Option<LambdaSpec>,
    figure_lambda: Option<Vec<f64>>,
    trials: Option<usize>,
    seed: Option<u64>,
    mode: Option<String>,
    out: Option<PathBuf>,
    solver: Option<SolverSpec>,
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct ModelSpec {
    preset: Option<String>,
    a_csv: Option<PathBuf>,
    b_csv: Option<PathBuf>,
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct PenaltySpec {
    q_scale: Option<f64>,
    r_scale: Option<f64>,
    q_csv: Option<PathBuf>,
    r_csv: Option<PathBuf>,
}

#[derive(Deserialize, Debug)]
#[serde(untagged)]
enum LambdaSpec {
    List(Vec<f64>),
    Schedule { schedule: String, c: f64 },
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct SolverSpec {
    backend: Option<String>,
}

/// Fully resolved configuration.
pub struct ResolvedConfig {
    pub bench: BenchConfig,
    pub backend: Box<dyn ConicBackend + Send + Sync>,
    /// Optional explicit λ grid for the sweep figure.
    pub figure_lambdas: Option<Vec<f64>>,
}

pub fn load_config(
    path: Option<&Path>,
    overrides: &OverrideArgs,
) -> Result<ResolvedConfig, AppError> {
    let file: FileConfig = match path {
        Some(p) => {
            let body = std::fs::read_to_string(p)
                .map_err(|e| AppError::Config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&body)
                .map_err(|e| AppError::Config(format!("{}: {e}", p.display())))?
        }
        None => FileConfig::default(),
    };

    let mut config = BenchConfig::benchmark_default();

    if let Some(model) = &file.model {
        config.model = resolve_model(model)?;
    }
    let (n, m) = (config.model.state_dim(), config.model.input_dim());
    if let Some(pen) = &file.penalties {
        config.penalties = resolve_penalties(pen, n, m)?;
    }
    if let Some(t) = file.t {
        config.t = t;
    }
    if let Some(sigma) = file.sigma {
        config.sigmas = sigma;
    }
    if let Some(lambda) = &file.lambda {
        config.lambdas = match lambda {
            LambdaSpec::List(values) => values.clone(),
            LambdaSpec::Schedule { schedule, c } => {
                if schedule != "inv_sqrt_t" {
                    return Err(AppError::Config(format!(
                        "unknown lambda schedule `{schedule}` (available: inv_sqrt_t)"
                    )));
                }
                vec![lambda_schedule(file.t.unwrap_or(config.t), *c)
                    .map_err(|e| AppError::Config(e.to_string()))?]
            }
        };
    }
    if let Some(trials) = file.trials {
        config.trials = trials;
    }
    if let Some(seed) = file.seed {
        config.master_seed = seed;
    } else if let Ok(env_seed) = std::env::var("COVLQR_SEED") {
        config.master_seed = env_seed
            .parse()
            .map_err(|_| AppError::Config(format!("COVLQR_SEED=`{env_seed}` is not a u64")))?;
    }
    if let Some(mode) = &file.mode {
        config.mode = parse_mode(mode)?;
    }
    if let Some(out) = file.out {
        config.out_dir = out;
    }

    // Flags override file keys.
    if let Some(seed) = overrides.seed {
        config.master_seed = seed;
    }
    if let Some(trials) = overrides.trials {
        config.trials = trials;
    }
    if let Some(sigma) = &overrides.sigma {
        config.sigmas = sigma.clone();
    }
    if let Some(lambda) = &overrides.lambda {
        config.lambdas = lambda.clone();
    }
    if let Some(mode) = &overrides.mode {
        config.mode = parse_mode(mode)?;
    }
    if let Some(out) = &overrides.out {
        config.out_dir = out.clone();
    }
    if let Some(t) = overrides.t {
        config.t = t;
    }

    config
        .validate()
        .map_err(|e| AppError::Config(e.to_string()))?;

    let backend_name = file
        .solver
        .and_then(|s| s.backend)
        .unwrap_or_else(|| "interior_point".to_string());
    let backend = backend_by_name(&backend_name).map_err(|e| AppError::Config(e.to_string()))?;

    Ok(ResolvedConfig {
        bench: config,
        backend,
        figure_lambdas: file.figure_lambda,
    })
}

fn resolve_model(spec: &ModelSpec) -> Result<SystemModel, AppError> {
    match (&spec.preset, &spec.a_csv, &spec.b_csv) {
        (Some(name), None, None) if name == "benchmark" => Ok(SystemModel::benchmark()),
        (Some(name), None, None) => Err(AppError::Config(format!(
            "unknown model preset `{name}` (available: benchmark)"
        ))),
        (None, Some(a_path), Some(b_path)) => {
            let (_, a) = read_matrix_csv(a_path).map_err(|e| AppError::Config(e.to_string()))?;
            let (_, b) = read_matrix_csv(b_path).map_err(|e| AppError::Config(e.to_string()))?;
            SystemModel::new(a, b).map_err(|e| AppError::Config(e.to_string()))
        }
        _ => Err(AppError::Config(
            "model must specify either a preset or both a_csv and b_csv".into(),
        )),
    }
}

fn resolve_penalties(spec: &PenaltySpec, n: usize, m: usize) -> Result<PenaltyPair, AppError> {
    let q = match (&spec.q_csv, spec.q_scale) {
        (Some(path), None) => {
            read_matrix_csv(path)
                .map_err(|e| AppError::Config(e.to_string()))?
                .1
        }
        (None, Some(scale)) => DMatrix::identity(n, n) * scale,
        (None, None) => DMatrix::identity(n, n),
        _ => {
            return Err(AppError::Config(
                "penalties: specify q_csv or q_scale, not both".into(),
            ))
        }
    };
    let r = match (&spec.r_csv, spec.r_scale) {
        (Some(path), None) => {
            read_matrix_csv(path)
                .map_err(|e| AppError::Config(e.to_string()))?
                .1
        }
        (None, Some(scale)) => DMatrix::identity(m, m) * scale,
        (None, None) => DMatrix::identity(m, m) * 1e-3,
        _ => {
            return Err(AppError::Config(
                "penalties: specify r_csv or r_scale, not both".into(),
            ))
        }
    };
    PenaltyPair::new(q, r).map_err(|e| AppError::Config(e.to_string()))
}

fn parse_mode(mode: &str) -> Result<DataMode, AppError> {
    match mode {
        "iid_pairs" => Ok(DataMode::IidPairs),
        "trajectory" => Ok(DataMode::Trajectory),
        other => Err(AppError::Config(format!(
            "unknown data mode `{other}` (available: iid_pairs, trajectory)"
        ))),
    }
}
