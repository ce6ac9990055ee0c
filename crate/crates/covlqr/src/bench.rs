//! Seeded Monte Carlo benchmark harness.
//!
//! For every `(σ, λ)` cell the harness draws independent data batches,
//! solves the regularized synthesis, classifies each returned gain against
//! the true system, and aggregates the stabilizing percentage `S` and the
//! median optimality gap `M = median((C(K) − C*)/C*)`. Batches are paired
//! across λ: the trial seed depends on the master seed, the noise-level
//! index, and the trial index only, so regularization sweeps compare on
//! identical data.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::conic::SolveStatus;
use crate::control::{lqr_cost, solve_dare, spectral_radius, PenaltyPair, SystemModel};
use crate::data::{
    derive_seed, generate_batch, pe_check, sample_covariances, snr_estimate, snr_power_db, DataMode,
};
use crate::direct::solve_regularized;
use crate::{Error, Result};

/// Mixing constant separating noise-level seed streams.
const SIGMA_STREAM_SALT: u64 = 0xD1B5_4A32_D192_ED03;

/// Benchmark configuration; defaults reproduce the reference study.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub model: SystemModel,
    pub penalties: PenaltyPair,
    pub t: usize,
    pub sigmas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub trials: usize,
    pub master_seed: u64,
    pub mode: DataMode,
    pub out_dir: PathBuf,
}

impl BenchConfig {
    /// The benchmark preset: marginally unstable Laplacian system,
    /// `Q = I₃`, `R = 10⁻³I₃`, `t = 20`, the four noise levels, and the
    /// five-column λ grid.
    pub fn benchmark_default() -> Self {
        Self {
            model: SystemModel::benchmark(),
            penalties: PenaltyPair::benchmark(),
            t: 20,
            sigmas: vec![0.1, 0.3, 0.7, 1.0],
            lambdas: vec![0.0, 0.01, 0.1, 1.0, 10.0],
            trials: 100,
            master_seed: 0,
            mode: DataMode::IidPairs,
            out_dir: PathBuf::from("out"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.t < self.model.input_dim() + self.model.state_dim() {
            return Err(Error::Config(format!(
                "t = {} is below m + n = {}; excitation is impossible",
                self.t,
                self.model.input_dim() + self.model.state_dim()
            )));
        }
        if self.sigmas.is_empty() || self.sigmas.iter().any(|&s| s.is_nan() || s < 0.0) {
            return Err(Error::Config("noise levels must be nonnegative".into()));
        }
        if self.lambdas.is_empty() || self.lambdas.iter().any(|&l| l.is_nan() || l < 0.0) {
            return Err(Error::Config(
                "regularization weights must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Config plus the once-per-config true optimum `C*`.
#[derive(Debug, Clone)]
pub struct BenchContext {
    pub config: BenchConfig,
    /// True optimal cost, the denominator of the optimality gap.
    pub c_star: f64,
}

impl BenchContext {
    pub fn new(config: BenchConfig) -> Result<Self> {
        config.validate()?;
        let dare = solve_dare(&config.model, &config.penalties)?;
        Ok(Self {
            config,
            c_star: dare.optimal_cost,
        })
    }
}

/// One Monte Carlo trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial_index: usize,
    pub seed: u64,
    pub sigma: f64,
    pub lambda: f64,
    pub status: SolveStatus,
    pub stabilizing: bool,
    /// Relative optimality gap, present iff the trial is stabilizing.
    pub gap: Option<f64>,
    /// Amplitude-scale SNR proxy, `20·log10(σ̲(D0)/‖W0‖)`.
    pub snr_db: f64,
    /// Power-scale SNR proxy, `10·log10(σ̲(D0)/‖W0‖)`.
    pub snr_power_db: f64,
    /// Spectral radius of the true closed loop, when a gain was returned.
    pub closed_loop_radius: Option<f64>,
    pub solve_time: f64,
}

/// Aggregate of one `(σ, λ)` cell.
#[derive(Debug, Clone)]
pub struct CellSummary {
    pub sigma: f64,
    pub lambda: f64,
    pub trials: usize,
    /// Percentage of trials that returned a stabilizing controller.
    pub s_percent: f64,
    /// Median gap over stabilizing trials; absent when none stabilize.
    pub m_median: Option<f64>,
    pub snr_db_lo: f64,
    pub snr_db_hi: f64,
    pub mean_solve_time: f64,
}

/// Seed for a given noise-level stream and trial index.
pub fn trial_seed(master_seed: u64, sigma_index: usize, trial_index: usize) -> u64 {
    let stream = master_seed ^ (sigma_index as u64 + 1).wrapping_mul(SIGMA_STREAM_SALT);
    derive_seed(stream, trial_index as u64)
}

/// Run one trial: draw a batch, solve, classify against the true system.
///
/// Solver failures of any kind are folded into the record as
/// non-stabilizing; only configuration errors abort.
pub fn run_trial(
    ctx: &BenchContext,
    sigma_index: usize,
    lambda: f64,
    trial_index: usize,
) -> Result<TrialRecord> {
    let config = &ctx.config;
    let sigma = *config
        .sigmas
        .get(sigma_index)
        .ok_or_else(|| Error::Config(format!("noise index {sigma_index} out of range")))?;
    let seed = trial_seed(config.master_seed, sigma_index, trial_index);
    let batch = generate_batch(&config.model, config.t, sigma, config.mode, seed)?;
    let snr_db = snr_estimate(&batch);
    let snr_pow = snr_power_db(&batch);

    let mut record = TrialRecord {
        trial_index,
        seed,
        sigma,
        lambda,
        status: SolveStatus::NumericalFailure,
        stabilizing: false,
        gap: None,
        snr_db,
        snr_power_db: snr_pow,
        closed_loop_radius: None,
        solve_time: 0.0,
    };

    let (pe_ok, _) = pe_check(&batch);
    if !pe_ok {
        record.status = SolveStatus::Infeasible;
        return Ok(record);
    }

    let cov = sample_covariances(&batch);
    let solution = solve_regularized(&cov, &config.penalties, lambda)?;
    record.status = solution.status;
    record.solve_time = solution.solve_time;
    let Some(gain) = solution.gain else {
        return Ok(record);
    };

    let closed = config.model.closed_loop(&gain)?;
    let rho = spectral_radius(&closed)?;
    record.closed_loop_radius = Some(rho);
    if rho >= 1.0 {
        return Ok(record);
    }
    match lqr_cost(&config.model, &config.penalties, &gain) {
        Ok(cost) => {
            record.stabilizing = true;
            record.gap = Some((cost - ctx.c_star) / ctx.c_star);
        }
        Err(_) => {
            // ρ < 1 but the Lyapunov solve is numerically unusable; count
            // the trial as non-stabilizing rather than guessing a cost.
            record.stabilizing = false;
        }
    }
    Ok(record)
}

/// All trials of one `(σ, λ)` cell, in trial order.
pub fn run_cell(ctx: &BenchContext, sigma_index: usize, lambda: f64) -> Result<Vec<TrialRecord>> {
    (0..ctx.config.trials)
        .into_par_iter()
        .map(|trial_index| run_trial(ctx, sigma_index, lambda, trial_index))
        .collect()
}

/// Median with linear interpolation between the two middle order
/// statistics.
fn median(sorted: &[f64]) -> f64 {
    let k = sorted.len();
    if k % 2 == 1 {
        sorted[k / 2]
    } else {
        (sorted[k / 2 - 1] + sorted[k / 2]) / 2.0
    }
}

/// Aggregate the records of one cell.
pub fn summarize(records: &[TrialRecord]) -> Result<CellSummary> {
    let first = records
        .first()
        .ok_or_else(|| Error::Config("cannot summarize an empty record list".into()))?;
    debug_assert!(records
        .iter()
        .all(|r| r.sigma == first.sigma && r.lambda == first.lambda));

    let mut gaps: Vec<f64> = records.iter().filter_map(|r| r.gap).collect();
    gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let stabilizing = records.iter().filter(|r| r.stabilizing).count();

    let finite_snrs: Vec<f64> = records
        .iter()
        .map(|r| r.snr_db)
        .filter(|v| v.is_finite())
        .collect();
    let (lo, hi) = if finite_snrs.is_empty() {
        (f64::INFINITY, f64::INFINITY)
    } else {
        (
            finite_snrs.iter().copied().fold(f64::INFINITY, f64::min),
            finite_snrs
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max),
        )
    };

    Ok(CellSummary {
        sigma: first.sigma,
        lambda: first.lambda,
        trials: records.len(),
        s_percent: 100.0 * stabilizing as f64 / records.len() as f64,
        m_median: if gaps.is_empty() {
            None
        } else {
            Some(median(&gaps))
        },
        snr_db_lo: lo,
        snr_db_hi: hi,
        mean_solve_time: records.iter().map(|r| r.solve_time).sum::<f64>() / records.len() as f64,
    })
}

/// `λ(t) = c/√t`, the decay schedule for the regularization weight.
pub fn lambda_schedule(t: usize, c: f64) -> Result<f64> {
    if t == 0 {
        return Err(Error::Config("schedule needs t ≥ 1".into()));
    }
    if c.is_nan() || c <= 0.0 {
        return Err(Error::Config(format!(
            "schedule constant must be positive, got {c}"
        )));
    }
    Ok(c / (t as f64).sqrt())
}

fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v}")
    }
}

/// Result of a full grid run.
#[derive(Debug, Clone)]
pub struct GridOutput {
    pub cells: Vec<CellSummary>,
    pub csv: String,
    /// Console rendering with the per-row best cell bolded.
    pub console: String,
}

/// Run the full `(σ, λ)` grid and render the comparison table.
///
/// The CSV is the canonical artifact; the console table bolds the best
/// cell per noise level (max `S`, ties broken by min `M`).
pub fn table1(ctx: &BenchContext) -> Result<GridOutput> {
    let config = &ctx.config;
    let mut cells = Vec::new();
    for sigma_index in 0..config.sigmas.len() {
        for &lambda in &config.lambdas {
            let records = run_cell(ctx, sigma_index, lambda)?;
            cells.push(summarize(&records)?);
        }
    }

    let mut csv = String::from(
        "sigma,lambda,trials,S_percent,M_median,snr_db_lo,snr_db_hi,mean_solve_time_s\n",
    );
    for cell in &cells {
        let m = cell.m_median.map(fmt_float).unwrap_or_else(|| "nan".into());
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            fmt_float(cell.sigma),
            fmt_float(cell.lambda),
            cell.trials,
            fmt_float(cell.s_percent),
            m,
            fmt_float(cell.snr_db_lo),
            fmt_float(cell.snr_db_hi),
            fmt_float(cell.mean_solve_time)
        )
        .expect("writing to string");
    }

    let console = render_console_table(config, &cells);
    Ok(GridOutput {
        cells,
        csv,
        console,
    })
}

fn render_console_table(config: &BenchConfig, cells: &[CellSummary]) -> String {
    let cols = config.lambdas.len();
    let mut out = String::new();
    write!(out, "{:>24}", "sigma \\ lambda").unwrap();
    for &lambda in &config.lambdas {
        write!(out, "{:>18}", format!("λ={lambda}")).unwrap();
    }
    out.push('\n');
    for (row, chunk) in cells.chunks(cols).enumerate() {
        let best = best_cell_index(chunk);
        let snr = format!(
            "σ={} [{:.1},{:.1}]dB",
            chunk[0].sigma, chunk[0].snr_db_lo, chunk[0].snr_db_hi
        );
        write!(out, "{snr:>24}").unwrap();
        for (idx, cell) in chunk.iter().enumerate() {
            let m = cell
                .m_median
                .map(|m| format!("{m:.4}"))
                .unwrap_or_else(|| "-".into());
            let body = format!("{:>18}", format!("S={:3.0}% M={m}", cell.s_percent));
            if idx == best {
                write!(out, "\x1b[1m{body}\x1b[0m").unwrap();
            } else {
                out.push_str(&body);
            }
        }
        out.push('\n');
        let _ = row;
    }
    out
}

/// Best cell: max `S`, ties broken by min `M`.
fn best_cell_index(cells: &[CellSummary]) -> usize {
    let mut best = 0;
    for (idx, cell) in cells.iter().enumerate() {
        let b = &cells[best];
        let better_s = cell.s_percent > b.s_percent + 1e-12;
        let tie_s = (cell.s_percent - b.s_percent).abs() <= 1e-12;
        let better_m = match (cell.m_median, b.m_median) {
            (Some(m), Some(bm)) => m < bm,
            (Some(_), None) => true,
            _ => false,
        };
        if better_s || (tie_s && better_m) {
            best = idx;
        }
    }
    best
}

/// Per-λ sweep at a single noise level, for the performance-vs-λ figure.
#[derive(Debug, Clone)]
pub struct SweepOutput {
    /// `(λ, S, M)` rows, λ = 0 first.
    pub rows: Vec<(f64, f64, Option<f64>)>,
    pub csv: String,
    pub svg: String,
}

/// Default log-spaced λ grid of the figure, 13 points over [1e-3, 10].
pub fn figure_lambda_grid() -> Vec<f64> {
    (0..13)
        .map(|k| 10f64.powf(-3.0 + 4.0 * k as f64 / 12.0))
        .collect()
}

/// Sweep λ at a fixed noise level and render CSV + SVG.
///
/// The first CSV row is the λ = 0 certainty-equivalence baseline, drawn in
/// the figure as annotated horizontal guides.
pub fn figure1(ctx: &BenchContext, sigma_index: usize, lambda_grid: &[f64]) -> Result<SweepOutput> {
    let mut rows = Vec::with_capacity(lambda_grid.len() + 1);
    let records = run_cell(ctx, sigma_index, 0.0)?;
    let base = summarize(&records)?;
    rows.push((0.0, base.s_percent, base.m_median));
    for &lambda in lambda_grid {
        let records = run_cell(ctx, sigma_index, lambda)?;
        let cell = summarize(&records)?;
        rows.push((lambda, cell.s_percent, cell.m_median));
    }

    let mut csv = String::from("lambda,S,M\n");
    for &(lambda, s, m) in &rows {
        writeln!(
            csv,
            "{},{},{}",
            fmt_float(lambda),
            fmt_float(s),
            m.map(fmt_float).unwrap_or_else(|| "nan".into())
        )
        .expect("writing to string");
    }

    let svg = render_sweep_svg(&rows);
    Ok(SweepOutput { rows, csv, svg })
}

/// Dual-axis SVG: stabilizing percentage (left) and median gap (right)
/// against λ on a log axis.
fn render_sweep_svg(rows: &[(f64, f64, Option<f64>)]) -> String {
    let width = 820.0;
    let height = 500.0;
    let (l, r, top, bot) = (70.0, 70.0, 40.0, 60.0);
    let plot_w = width - l - r;
    let plot_h = height - top - bot;

    let swept: Vec<&(f64, f64, Option<f64>)> = rows.iter().filter(|r| r.0 > 0.0).collect();
    let lx_min = swept
        .iter()
        .map(|r| r.0)
        .fold(f64::INFINITY, f64::min)
        .log10();
    let lx_max = swept
        .iter()
        .map(|r| r.0)
        .fold(f64::NEG_INFINITY, f64::max)
        .log10();
    let m_max = rows
        .iter()
        .filter_map(|r| r.2)
        .fold(0.0f64, f64::max)
        .max(1e-6)
        * 1.15;

    let x_of = |lambda: f64| l + (lambda.log10() - lx_min) / (lx_max - lx_min) * plot_w;
    let y_of_s = |s: f64| top + (100.0 - s) / 100.0 * plot_h;
    let y_of_m = |m: f64| top + (m_max - m) / m_max * plot_h;

    let mut svg = String::new();
    writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"12\">"
    )
    .unwrap();
    writeln!(
        svg,
        "<rect x=\"0\" y=\"0\" width=\"{width}\" height=\"{height}\" fill=\"white\"/>"
    )
    .unwrap();
    writeln!(
        svg,
        "<rect x=\"{l}\" y=\"{top}\" width=\"{plot_w}\" height=\"{plot_h}\" fill=\"none\" stroke=\"#444\"/>"
    )
    .unwrap();

    // Log-decade x ticks.
    let mut decade = lx_min.floor() as i32;
    while (decade as f64) <= lx_max + 1e-9 {
        let lam = 10f64.powi(decade);
        if lam >= 10f64.powf(lx_min) * 0.999 {
            let x = x_of(lam);
            writeln!(
                svg,
                "<line x1=\"{x:.1}\" y1=\"{}\" x2=\"{x:.1}\" y2=\"{}\" stroke=\"#ccc\"/>",
                top,
                top + plot_h
            )
            .unwrap();
            writeln!(
                svg,
                "<text x=\"{x:.1}\" y=\"{}\" text-anchor=\"middle\">1e{decade}</text>",
                top + plot_h + 18.0
            )
            .unwrap();
        }
        decade += 1;
    }
    // Left axis (S) ticks.
    for k in 0..=4 {
        let s = 25.0 * k as f64;
        let y = y_of_s(s);
        writeln!(
            svg,
            "<text x=\"{}\" y=\"{y:.1}\" text-anchor=\"end\" fill=\"#c22\">{s:.0}%</text>",
            l - 8.0
        )
        .unwrap();
    }
    // Right axis (M) ticks.
    for k in 0..=4 {
        let m = m_max * k as f64 / 4.0;
        let y = y_of_m(m);
        writeln!(
            svg,
            "<text x=\"{}\" y=\"{y:.1}\" text-anchor=\"start\" fill=\"#22c\">{m:.3}</text>",
            l + plot_w + 8.0
        )
        .unwrap();
    }

    // λ = 0 baseline guides.
    let (_, s0, m0) = rows[0];
    let y = y_of_s(s0);
    writeln!(
        svg,
        "<line x1=\"{l}\" y1=\"{y:.1}\" x2=\"{}\" y2=\"{y:.1}\" stroke=\"#c22\" stroke-dasharray=\"6,4\"/>",
        l + plot_w
    )
    .unwrap();
    if let Some(m0) = m0 {
        let y = y_of_m(m0);
        writeln!(
            svg,
            "<line x1=\"{l}\" y1=\"{y:.1}\" x2=\"{}\" y2=\"{y:.1}\" stroke=\"#22c\" stroke-dasharray=\"6,4\"/>",
            l + plot_w
        )
        .unwrap();
    }
    writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" fill=\"#555\">dashed: λ=0 certainty-equivalence baseline</text>",
        l + 6.0,
        top - 10.0
    )
    .unwrap();

    // Curves.
    let polyline = |points: &[(f64, f64)], color: &str| {
        let body = points
            .iter()
            .map(|&(x, y)| format!("{x:.1},{y:.1}"))
            .collect::<Vec<_>>()
            .join(" ");
        format!(
            "<polyline points=\"{body}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n"
        )
    };
    let s_points: Vec<(f64, f64)> = swept.iter().map(|r| (x_of(r.0), y_of_s(r.1))).collect();
    svg.push_str(&polyline(&s_points, "#c22"));
    let m_points: Vec<(f64, f64)> = swept
        .iter()
        .filter_map(|r| r.2.map(|m| (x_of(r.0), y_of_m(m))))
        .collect();
    svg.push_str(&polyline(&m_points, "#22c"));
    for &(x, y) in &s_points {
        writeln!(
            svg,
            "<circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"3\" fill=\"#c22\"/>"
        )
        .unwrap();
    }
    for &(x, y) in &m_points {
        writeln!(
            svg,
            "<circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"3\" fill=\"#22c\"/>"
        )
        .unwrap();
    }

    // Labels.
    writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">λ (log scale)</text>",
        l + plot_w / 2.0,
        height - 16.0
    )
    .unwrap();
    writeln!(
        svg,
        "<text x=\"18\" y=\"{}\" fill=\"#c22\" transform=\"rotate(-90 18 {})\" text-anchor=\"middle\">stabilizing S</text>",
        top + plot_h / 2.0,
        top + plot_h / 2.0
    )
    .unwrap();
    writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" fill=\"#22c\" transform=\"rotate(90 {} {})\" text-anchor=\"middle\">median gap M</text>",
        width - 18.0,
        top + plot_h / 2.0,
        width - 18.0,
        top + plot_h / 2.0
    )
    .unwrap();
    svg.push_str("</svg>\n");
    svg
}

/// Write a string artifact under the configured output directory.
pub fn write_artifact(dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(path)
}

/// Per-trial CSV dump of a cell (diagnostic artifact).
pub fn records_csv(records: &[TrialRecord]) -> String {
    let mut csv = String::from(
        "trial,seed,sigma,lambda,status,stabilizing,gap,snr_db,snr_power_db,closed_loop_radius,solve_time_s\n",
    );
    for r in records {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.trial_index,
            r.seed,
            fmt_float(r.sigma),
            fmt_float(r.lambda),
            r.status,
            r.stabilizing,
            r.gap.map(fmt_float).unwrap_or_else(|| "nan".into()),
            fmt_float(r.snr_db),
            fmt_float(r.snr_power_db),
            r.closed_loop_radius
                .map(fmt_float)
                .unwrap_or_else(|| "nan".into()),
            fmt_float(r.solve_time)
        )
        .expect("writing to string");
    }
    csv
}
