//! `covlqr`: data-driven LQR benchmark harness.
//!
//! Subcommands cover the full pipeline: `simulate` draws experiment data,
//! `solve` runs the regularized synthesis on a stored batch, `bench`
//! sweeps one `(σ, λ)` cell, `table1` and `figure1` reproduce the grid
//! comparison and the λ sweep, and `export-sdpa` writes the assembled
//! conic program for cross-validation with external solvers.
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver-stack failure.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use covlqr::bench::{self, BenchContext};
use covlqr::conic::{self, SolveStatus};
use covlqr::data;
use covlqr::direct;
use covlqr::sysid;

use config::{load_config, OverrideArgs};

#[derive(Parser)]
#[command(
    name = "covlqr",
    about = "Regularized covariance-parameterized data-driven LQR benchmark",
    version
)]
struct Cli {
    /// JSON configuration file; flags override file keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: OverrideArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct DataDirArg {
    /// Directory holding x0.csv, u0.csv, x1.csv (and optionally w0.csv).
    #[arg(long)]
    data: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a data batch and write it as CSV matrices.
    Simulate,
    /// Solve the regularized program on a stored batch and print the gain.
    Solve(DataDirArg),
    /// Run one (sigma, lambda) Monte Carlo cell and write records.csv.
    Bench,
    /// Run the full sigma x lambda grid and write table1.csv.
    Table1,
    /// Sweep lambda at one noise level; write figure1.csv and figure1.svg.
    Figure1,
    /// Export the assembled conic program in SDPA sparse format.
    #[command(name = "export-sdpa")]
    ExportSdpa(DataDirArg),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(AppError::Solver(msg)) => {
            eprintln!("solver failure: {msg}");
            ExitCode::from(3)
        }
    }
}

enum AppError {
    Config(String),
    Solver(String),
}

impl From<covlqr::Error> for AppError {
    fn from(err: covlqr::Error) -> Self {
        match err {
            covlqr::Error::NoConvergence { .. }
            | covlqr::Error::NotStable { .. }
            | covlqr::Error::IllConditioned { .. }
            | covlqr::Error::SingularPhi
            | covlqr::Error::EigenFailure { .. } => AppError::Solver(err.to_string()),
            other => AppError::Config(other.to_string()),
        }
    }
}

fn run(cli: &Cli) -> Result<(), AppError> {
    let config = load_config(cli.config.as_deref(), &cli.overrides)?;

    match &cli.command {
        Command::Simulate => {
            let sigma = config.bench.sigmas[0];
            let seed = config.bench.master_seed;
            let batch = data::generate_batch(
                &config.bench.model,
                config.bench.t,
                sigma,
                config.bench.mode,
                seed,
            )?;
            data::export_batch(&config.bench.out_dir, &batch)?;
            let (pe_ok, sigma_min) = data::pe_check(&batch);
            println!(
                "wrote batch (t={}, sigma={}, mode={}, seed={}) to {}",
                config.bench.t,
                sigma,
                config.bench.mode,
                seed,
                config.bench.out_dir.display()
            );
            println!(
                "persistency of excitation: {} (min singular value {:.4e}); snr {:.2} dB (amplitude), {:.2} dB (power)",
                if pe_ok { "ok" } else { "VIOLATED" },
                sigma_min,
                data::snr_estimate(&batch),
                data::snr_power_db(&batch),
            );
            Ok(())
        }
        Command::Solve(dir) => {
            let batch = data::import_batch(&dir.data)?;
            let cov = data::sample_covariances(&batch);
            let lambda = config.bench.lambdas[0];
            let solution = direct::solve_regularized_with(
                &cov,
                &config.bench.penalties,
                lambda,
                config.backend.as_ref(),
            )?;
            println!("status: {}", solution.status);
            if solution.status != SolveStatus::Optimal {
                return Err(AppError::Solver(format!(
                    "synthesis returned {}",
                    solution.status
                )));
            }
            let gain = solution.gain.expect("optimal solution carries a gain");
            let sigma_cert = solution
                .sigma
                .expect("optimal solution carries a certificate");
            println!("lambda: {lambda}");
            println!("objective: {:.9}", solution.objective.unwrap());
            println!("gain K ({}x{}):", gain.matrix.nrows(), gain.matrix.ncols());
            print_matrix(&gain.matrix);
            let est = sysid::least_squares(&cov)?;
            println!("least-squares residual on this batch: {:.4e}", est.residual);
            std::fs::create_dir_all(&config.bench.out_dir)
                .map_err(|e| AppError::Config(format!("cannot create output directory: {e}")))?;
            data::write_matrix_csv(&config.bench.out_dir.join("k.csv"), "K", &gain.matrix)?;
            data::write_matrix_csv(
                &config.bench.out_dir.join("sigma.csv"),
                "Sigma",
                &sigma_cert,
            )?;
            println!(
                "wrote k.csv and sigma.csv to {}",
                config.bench.out_dir.display()
            );
            Ok(())
        }
        Command::Bench => {
            let ctx = BenchContext::new(config.bench.clone())?;
            let lambda = ctx.config.lambdas[0];
            let records = bench::run_cell(&ctx, 0, lambda)?;
            let cell = bench::summarize(&records)?;
            let csv = bench::records_csv(&records);
            let path = bench::write_artifact(&ctx.config.out_dir, "records.csv", &csv)?;
            println!(
                "sigma={} lambda={} trials={}: S={:.1}%  M={}  snr=[{:.2},{:.2}]dB",
                cell.sigma,
                cell.lambda,
                cell.trials,
                cell.s_percent,
                cell.m_median
                    .map(|m| format!("{m:.4}"))
                    .unwrap_or_else(|| "-".into()),
                cell.snr_db_lo,
                cell.snr_db_hi,
            );
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Table1 => {
            let ctx = BenchContext::new(config.bench.clone())?;
            let out = bench::table1(&ctx)?;
            print!("{}", out.console);
            let path = bench::write_artifact(&ctx.config.out_dir, "table1.csv", &out.csv)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Figure1 => {
            let mut bench_config = config.bench.clone();
            // The sweep runs one noise level; default to the benchmark's
            // hard-noise setting when a full grid is configured.
            if bench_config.sigmas.len() > 1 {
                bench_config.sigmas = vec![0.7];
            }
            let ctx = BenchContext::new(bench_config)?;
            let grid = config
                .figure_lambdas
                .clone()
                .unwrap_or_else(bench::figure_lambda_grid);
            let sweep = bench::figure1(&ctx, 0, &grid)?;
            for &(lambda, s, m) in &sweep.rows {
                println!(
                    "lambda={lambda:<10} S={s:5.1}%  M={}",
                    m.map(|m| format!("{m:.4}")).unwrap_or_else(|| "-".into())
                );
            }
            let csv_path = bench::write_artifact(&ctx.config.out_dir, "figure1.csv", &sweep.csv)?;
            let svg_path = bench::write_artifact(&ctx.config.out_dir, "figure1.svg", &sweep.svg)?;
            println!("wrote {} and {}", csv_path.display(), svg_path.display());
            Ok(())
        }
        Command::ExportSdpa(dir) => {
            let batch = data::import_batch(&dir.data)?;
            let cov = data::sample_covariances(&batch);
            let lambda = config.bench.lambdas[0];
            let prog = conic::assemble(&cov, &config.bench.penalties, lambda)?;
            std::fs::create_dir_all(&config.bench.out_dir)
                .map_err(|e| AppError::Config(format!("cannot create output directory: {e}")))?;
            let path = config.bench.out_dir.join("program.dat-s");
            conic::export_sdpa(&prog, &path)?;
            println!(
                "wrote {} ({} variables, {} equalities, PSD dims {:?})",
                path.display(),
                prog.num_vars,
                prog.eq_matrix.rows,
                prog.psd_blocks.iter().map(|b| b.dim).collect::<Vec<_>>()
            );
            Ok(())
        }
    }
}

fn print_matrix(mat: &nalgebra::DMatrix<f64>) {
    for i in 0..mat.nrows() {
        let row: Vec<String> = (0..mat.ncols())
            .map(|j| format!("{:>12.6}", mat[(i, j)]))
            .collect();
        println!("  [{}]", row.join(", "));
    }
}
