//! Experiment data: generation, the data matrices `(X0, U0, W0, X1)`,
//! sample covariances, persistency of excitation, and CSV interchange.
//!
//! Columns are `(x, u, w, x⁺)` tuples. In [`DataMode::IidPairs`] every
//! column draws a fresh state, matching "each column obtained from an
//! independent experiment"; [`DataMode::Trajectory`] rolls a single
//! closed-run time series instead. Generation is deterministic given the
//! 64-bit seed.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::control::SystemModel;
use crate::{Error, Result};

/// Relative threshold on the smallest singular value of `D0` used by
/// [`pe_check`].
const PE_RELATIVE_TOL: f64 = 1e-8;

/// Weyl-sequence increment used to derive per-trial seeds.
pub const SEED_GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Derive a per-trial seed from a master seed.
///
/// `seed = master ^ (trial_index · golden)`, wrapping. Independent of any
/// execution order, so parallel and serial sweeps draw identical streams.
pub fn derive_seed(master_seed: u64, trial_index: u64) -> u64 {
    master_seed ^ trial_index.wrapping_mul(SEED_GOLDEN)
}

/// How the state columns of a batch are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataMode {
    /// Every column draws `x ~ N(0, Iₙ)` independently.
    IidPairs,
    /// A single rollout `x⁺ = Ax + Bu + w` from `x₀ ~ N(0, Iₙ)`.
    Trajectory,
}

impl fmt::Display for DataMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataMode::IidPairs => write!(f, "iid_pairs"),
            DataMode::Trajectory => write!(f, "trajectory"),
        }
    }
}

/// Raw data matrices of one experiment batch of length `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBatch {
    pub x0: DMatrix<f64>,
    pub u0: DMatrix<f64>,
    pub w0: DMatrix<f64>,
    pub x1: DMatrix<f64>,
    pub t: usize,
    pub mode: DataMode,
}

impl DataBatch {
    /// Assemble a batch from externally supplied matrices.
    pub fn from_parts(
        x0: DMatrix<f64>,
        u0: DMatrix<f64>,
        w0: DMatrix<f64>,
        x1: DMatrix<f64>,
        mode: DataMode,
    ) -> Result<Self> {
        let t = x0.ncols();
        if t == 0 {
            return Err(Error::dims("batch must contain at least one column"));
        }
        if u0.ncols() != t || w0.ncols() != t || x1.ncols() != t {
            return Err(Error::dims(format!(
                "all data matrices must share t={t} columns, got u:{} w:{} x1:{}",
                u0.ncols(),
                w0.ncols(),
                x1.ncols()
            )));
        }
        if x1.nrows() != x0.nrows() || w0.nrows() != x0.nrows() {
            return Err(Error::dims(format!(
                "state rows disagree: x0:{} w0:{} x1:{}",
                x0.nrows(),
                w0.nrows(),
                x1.nrows()
            )));
        }
        Ok(Self {
            x0,
            u0,
            w0,
            x1,
            t,
            mode,
        })
    }

    /// State dimension `n`.
    pub fn state_dim(&self) -> usize {
        self.x0.nrows()
    }

    /// Input dimension `m`.
    pub fn input_dim(&self) -> usize {
        self.u0.nrows()
    }

    /// Stacked input-state matrix `D0 = [U0; X0]`, inputs on top.
    pub fn d0(&self) -> DMatrix<f64> {
        let m = self.input_dim();
        let n = self.state_dim();
        let mut d0 = DMatrix::zeros(m + n, self.t);
        d0.view_mut((0, 0), (m, self.t)).copy_from(&self.u0);
        d0.view_mut((m, 0), (n, self.t)).copy_from(&self.x0);
        d0
    }
}

/// Sample covariances of a batch: `Φ = D0D0ᵀ/t` plus the compressed data
/// matrices `X̄0, Ū0, W̄0, X̄1 = (·)D0ᵀ/t`.
#[derive(Debug, Clone)]
pub struct SampleCov {
    pub phi: DMatrix<f64>,
    pub x0_bar: DMatrix<f64>,
    pub u0_bar: DMatrix<f64>,
    pub w0_bar: DMatrix<f64>,
    pub x1_bar: DMatrix<f64>,
    pub t: usize,
    /// `Tr(X1X1ᵀ)/t`; carried so the least-squares residual can be
    /// evaluated from compressed data alone.
    pub x1_gram: f64,
}

impl SampleCov {
    pub fn state_dim(&self) -> usize {
        self.x0_bar.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.u0_bar.nrows()
    }
}

/// Draw a batch of experiment data from the model.
///
/// Inputs are `u ~ N(0, Iₘ)` and noise `w ~ N(0, σ²Iₙ)` in both modes.
pub fn generate_batch(
    model: &SystemModel,
    t: usize,
    sigma: f64,
    mode: DataMode,
    seed: u64,
) -> Result<DataBatch> {
    if t == 0 {
        return Err(Error::dims("batch length t must be at least 1"));
    }
    if sigma.is_nan() || sigma < 0.0 {
        return Err(Error::Config(format!(
            "noise level must be nonnegative, got {sigma}"
        )));
    }
    let n = model.state_dim();
    let m = model.input_dim();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let mut x0 = DMatrix::zeros(n, t);
    let mut u0 = DMatrix::zeros(m, t);
    let mut w0 = DMatrix::zeros(n, t);
    let mut x1 = DMatrix::zeros(n, t);

    let mut state = DMatrix::zeros(n, 1);
    if mode == DataMode::Trajectory {
        for i in 0..n {
            state[(i, 0)] = rng.sample(StandardNormal);
        }
    }
    for col in 0..t {
        match mode {
            DataMode::IidPairs => {
                for i in 0..n {
                    x0[(i, col)] = rng.sample::<f64, _>(StandardNormal);
                }
            }
            DataMode::Trajectory => {
                for i in 0..n {
                    x0[(i, col)] = state[(i, 0)];
                }
            }
        }
        for i in 0..m {
            u0[(i, col)] = rng.sample::<f64, _>(StandardNormal);
        }
        for i in 0..n {
            w0[(i, col)] = sigma * rng.sample::<f64, _>(StandardNormal);
        }
        let x = x0.column(col);
        let u = u0.column(col);
        let succ = model.a() * x + model.b() * u + w0.column(col);
        x1.set_column(col, &succ);
        if mode == DataMode::Trajectory {
            state.set_column(0, &x1.column(col));
        }
    }

    DataBatch::from_parts(x0, u0, w0, x1, mode)
}

/// Compress a batch into its sample covariances.
pub fn sample_covariances(batch: &DataBatch) -> SampleCov {
    let t = batch.t as f64;
    let d0 = batch.d0();
    let phi = &d0 * d0.transpose() / t;
    let phi = (&phi + phi.transpose()) * 0.5;
    SampleCov {
        x0_bar: &batch.x0 * d0.transpose() / t,
        u0_bar: &batch.u0 * d0.transpose() / t,
        w0_bar: &batch.w0 * d0.transpose() / t,
        x1_bar: &batch.x1 * d0.transpose() / t,
        phi,
        t: batch.t,
        x1_gram: (&batch.x1 * batch.x1.transpose()).trace() / t,
    }
}

/// Persistency-of-excitation check on `D0 = [U0; X0]`.
///
/// Returns whether the `(m+n)`-th singular value clears the relative
/// threshold, together with the smallest singular value itself.
pub fn pe_check(batch: &DataBatch) -> (bool, f64) {
    let d0 = batch.d0();
    let rows = d0.nrows();
    let mut svals: Vec<f64> = d0.singular_values().iter().copied().collect();
    svals.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let sigma_max = svals.first().copied().unwrap_or(0.0);
    let sigma_min = if svals.len() < rows {
        0.0
    } else {
        svals[rows - 1]
    };
    (sigma_min > PE_RELATIVE_TOL * sigma_max.max(1.0), sigma_min)
}

/// Signal-to-noise proxy `σ̲(D0)/‖W0‖₂` in amplitude decibels, `20·log10`.
///
/// Returns `f64::INFINITY` for noiseless batches.
pub fn snr_estimate(batch: &DataBatch) -> f64 {
    20.0 * snr_ratio(batch).log10()
}

/// The same proxy on a power-decibel scale, `10·log10`.
///
/// This is the convention under which the benchmark rows land in the
/// customary per-noise-level dB bands; reported alongside the amplitude
/// figure wherever trials are logged.
pub fn snr_power_db(batch: &DataBatch) -> f64 {
    10.0 * snr_ratio(batch).log10()
}

fn snr_ratio(batch: &DataBatch) -> f64 {
    let (_, sigma_min) = pe_check(batch);
    let noise_norm = spectral_norm(&batch.w0);
    if noise_norm == 0.0 {
        return f64::INFINITY;
    }
    sigma_min / noise_norm
}

fn spectral_norm(mat: &DMatrix<f64>) -> f64 {
    if mat.amax() == 0.0 {
        return 0.0;
    }
    mat.singular_values().iter().copied().fold(0.0, f64::max)
}

// --- CSV interchange -------------------------------------------------------
//
// One file per matrix. The first line is `name,rows,cols`; the remaining
// lines hold the entries in column-major order, one per line. Values use
// Rust's shortest round-trip float formatting, so export → import is exact.

/// Write one matrix in the batch CSV layout.
pub fn write_matrix_csv(path: &Path, name: &str, mat: &DMatrix<f64>) -> Result<()> {
    let mut out =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut body = format!("{},{},{}\n", name, mat.nrows(), mat.ncols());
    for value in mat.iter() {
        body.push_str(&format!("{value}\n"));
    }
    out.write_all(body.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read one matrix in the batch CSV layout, returning `(name, matrix)`.
pub fn read_matrix_csv(path: &Path) -> Result<(String, DMatrix<f64>)> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(display.clone(), e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        path: display.clone(),
        line: 1,
        message: "missing header row".into(),
    })?;
    let header = header.map_err(|e| Error::io(display.clone(), e))?;
    let fields: Vec<&str> = header.trim().split(',').collect();
    if fields.len() != 3 {
        return Err(Error::Parse {
            path: display,
            line: 1,
            message: format!("expected `name,rows,cols`, got `{header}`"),
        });
    }
    let name = fields[0].to_string();
    let rows: usize = fields[1].parse().map_err(|_| Error::Parse {
        path: display.clone(),
        line: 1,
        message: format!("bad row count `{}`", fields[1]),
    })?;
    let cols: usize = fields[2].parse().map_err(|_| Error::Parse {
        path: display.clone(),
        line: 1,
        message: format!("bad column count `{}`", fields[2]),
    })?;

    let mut values = Vec::with_capacity(rows * cols);
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(display.clone(), e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let value: f64 = trimmed.parse().map_err(|_| Error::Parse {
            path: display.clone(),
            line: idx + 1,
            message: format!("bad numeric entry `{trimmed}`"),
        })?;
        values.push(value);
    }
    if values.len() != rows * cols {
        return Err(Error::Parse {
            path: display,
            line: values.len() + 2,
            message: format!("expected {} entries, found {}", rows * cols, values.len()),
        });
    }
    Ok((name, DMatrix::from_column_slice(rows, cols, &values)))
}

/// Export a batch as `x0.csv`, `u0.csv`, `w0.csv`, `x1.csv` under `dir`.
pub fn export_batch(dir: &Path, batch: &DataBatch) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    write_matrix_csv(&dir.join("x0.csv"), "X0", &batch.x0)?;
    write_matrix_csv(&dir.join("u0.csv"), "U0", &batch.u0)?;
    write_matrix_csv(&dir.join("w0.csv"), "W0", &batch.w0)?;
    write_matrix_csv(&dir.join("x1.csv"), "X1", &batch.x1)?;
    Ok(())
}

/// Import a batch previously written by [`export_batch`].
///
/// `w0.csv` may be absent (external data has no noise record); the noise
/// block is then zero and noise-dependent diagnostics degenerate
/// accordingly.
pub fn import_batch(dir: &Path) -> Result<DataBatch> {
    let (_, x0) = read_matrix_csv(&dir.join("x0.csv"))?;
    let (_, u0) = read_matrix_csv(&dir.join("u0.csv"))?;
    let (_, x1) = read_matrix_csv(&dir.join("x1.csv"))?;
    let w0_path = dir.join("w0.csv");
    let w0 = if w0_path.exists() {
        read_matrix_csv(&w0_path)?.1
    } else {
        DMatrix::zeros(x0.nrows(), x0.ncols())
    };
    DataBatch::from_parts(x0, u0, w0, x1, DataMode::IidPairs)
}
