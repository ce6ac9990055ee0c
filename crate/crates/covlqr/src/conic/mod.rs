//! Conic-programming layer: standard-form programs over the zero cone and
//! PSD cones, symmetric vectorization, assembly of the regularized LQR
//! program, a pluggable solver backend, and SDPA file interchange.
//!
//! Symmetric matrix variables and PSD blocks are scalarized with `svec`:
//! upper-triangle entries packed column by column, off-diagonals scaled by
//! √2 so that `⟨A, B⟩_F = svec(A)·svec(B)`.

mod ipm;
mod sdpa;

pub use ipm::IpmOptions;
pub use sdpa::{export_sdpa, import_sdpa};

use nalgebra::{DMatrix, DVector};

use crate::control::{check_symmetric, PenaltyPair};
use crate::data::SampleCov;
use crate::{Error, Result};

/// `d(d+1)/2`, the svec length of a `d×d` symmetric matrix.
pub fn svec_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Position of entry `(i, j)`, `i ≤ j`, in the svec ordering.
pub fn svec_index(i: usize, j: usize) -> usize {
    debug_assert!(i <= j);
    j * (j + 1) / 2 + i
}

/// Inverse of [`svec_len`]; errors when `len` is not triangular.
pub fn svec_dim(len: usize) -> Result<usize> {
    let mut d = 0;
    while svec_len(d) < len {
        d += 1;
    }
    if svec_len(d) != len {
        return Err(Error::BadSvecLength { len });
    }
    Ok(d)
}

/// Isometric vectorization of a symmetric matrix.
pub fn svec(mat: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_symmetric(mat, 1e-12)?;
    Ok(svec_unchecked(mat))
}

pub(crate) fn svec_unchecked(mat: &DMatrix<f64>) -> DVector<f64> {
    let d = mat.nrows();
    let mut out = DVector::zeros(svec_len(d));
    let mut idx = 0;
    for j in 0..d {
        for i in 0..=j {
            out[idx] = if i == j {
                mat[(i, j)]
            } else {
                (mat[(i, j)] + mat[(j, i)]) * 0.5 * std::f64::consts::SQRT_2
            };
            idx += 1;
        }
    }
    out
}

/// Inverse of [`svec`].
pub fn smat(v: &[f64]) -> Result<DMatrix<f64>> {
    let d = svec_dim(v.len())?;
    let mut out = DMatrix::zeros(d, d);
    let mut idx = 0;
    for j in 0..d {
        for i in 0..=j {
            if i == j {
                out[(i, j)] = v[idx];
            } else {
                let scaled = v[idx] / std::f64::consts::SQRT_2;
                out[(i, j)] = scaled;
                out[(j, i)] = scaled;
            }
            idx += 1;
        }
    }
    Ok(out)
}

/// Shape of one named span of scalarized decision variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    /// `d×d` symmetric, stored as svec.
    Symmetric(usize),
    /// General `rows×cols`, stored column-major.
    Rectangular(usize, usize),
}

impl VarKind {
    pub fn len(&self) -> usize {
        match *self {
            VarKind::Symmetric(d) => svec_len(d),
            VarKind::Rectangular(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One named span in the scalarized decision vector.
#[derive(Debug, Clone)]
pub struct VarSpan {
    pub name: String,
    pub kind: VarKind,
    pub offset: usize,
}

/// Named spans covering the decision vector.
#[derive(Debug, Clone, Default)]
pub struct VarLayout {
    pub spans: Vec<VarSpan>,
}

impl VarLayout {
    pub fn push(&mut self, name: impl Into<String>, kind: VarKind) -> usize {
        let offset = self.total_len();
        self.spans.push(VarSpan {
            name: name.into(),
            kind,
            offset,
        });
        offset
    }

    pub fn total_len(&self) -> usize {
        self.spans
            .last()
            .map(|s| s.offset + s.kind.len())
            .unwrap_or(0)
    }

    pub fn span(&self, name: &str) -> Option<&VarSpan> {
        self.spans.iter().find(|s| s.name == name)
    }

    /// Unpack a named variable from a scalarized solution vector.
    pub fn extract(&self, name: &str, x: &[f64]) -> Option<DMatrix<f64>> {
        let span = self.span(name)?;
        let slice = x.get(span.offset..span.offset + span.kind.len())?;
        match span.kind {
            VarKind::Symmetric(_) => smat(slice).ok(),
            VarKind::Rectangular(r, c) => Some(DMatrix::from_column_slice(r, c, slice)),
        }
    }
}

/// Sparse triplet matrix used for constraint storage.
#[derive(Debug, Clone)]
pub struct SparseTriplets {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseTriplets {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.rows && col < self.cols);
        if value != 0.0 {
            self.entries.push((row, col, value));
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rows, self.cols);
        for &(r, c, v) in &self.entries {
            out[(r, c)] += v;
        }
        out
    }
}

/// One PSD block: `smat(affine·x + constant) ⪰ 0`.
#[derive(Debug, Clone)]
pub struct PsdBlock {
    pub dim: usize,
    /// `svec_len(dim) × num_vars` affine map.
    pub affine: SparseTriplets,
    /// Constant svec part.
    pub constant: Vec<f64>,
}

impl PsdBlock {
    /// Evaluate the block at a scalarized point.
    pub fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut v = DVector::from_column_slice(&self.constant);
        for &(r, c, coeff) in &self.affine.entries {
            v[r] += coeff * x[c];
        }
        smat(v.as_slice()).expect("block svec length is triangular by construction")
    }
}

/// A conic program: minimize a linear objective subject to zero-cone
/// equalities and PSD blocks, all affine in the scalarized variables.
#[derive(Debug, Clone)]
pub struct ConicProgram {
    pub num_vars: usize,
    /// Sparse objective, sorted by variable index.
    pub objective: Vec<(usize, f64)>,
    pub eq_matrix: SparseTriplets,
    pub eq_rhs: Vec<f64>,
    pub psd_blocks: Vec<PsdBlock>,
    pub layout: VarLayout,
}

impl ConicProgram {
    pub fn objective_dense(&self) -> DVector<f64> {
        let mut c = DVector::zeros(self.num_vars);
        for &(idx, v) in &self.objective {
            c[idx] += v;
        }
        c
    }

    pub fn objective_value(&self, x: &DVector<f64>) -> f64 {
        self.objective.iter().map(|&(idx, v)| v * x[idx]).sum()
    }

    /// Equality residual `‖A_eq·x − rhs‖`.
    pub fn equality_residual(&self, x: &DVector<f64>) -> f64 {
        let mut res = DVector::from_column_slice(&self.eq_rhs);
        res.neg_mut();
        for &(r, c, v) in &self.eq_matrix.entries {
            res[r] += v * x[c];
        }
        res.norm()
    }

    /// Smallest eigenvalue over all PSD blocks at a scalarized point.
    pub fn min_block_eigenvalue(&self, x: &DVector<f64>) -> Result<f64> {
        let mut min_eig = f64::INFINITY;
        for block in &self.psd_blocks {
            let m = block.eval(x);
            min_eig = min_eig.min(crate::control::min_symmetric_eigenvalue(&m)?);
        }
        Ok(min_eig)
    }
}

/// Solver outcome classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::NumericalFailure => "numerical_failure",
        };
        write!(f, "{s}")
    }
}

/// Backend report: status, primal point, objective, and residuals.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    /// Scalarized primal solution (empty unless status is optimal).
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub duality_gap: f64,
}

impl SolveReport {
    /// Unpack a named variable using the program layout.
    pub fn variable(&self, prog: &ConicProgram, name: &str) -> Option<DMatrix<f64>> {
        if self.status != SolveStatus::Optimal {
            return None;
        }
        prog.layout.extract(name, &self.x)
    }
}

/// A conic solver backend: program in, report out.
pub trait ConicBackend {
    fn solve(&self, prog: &ConicProgram) -> SolveReport;
    fn name(&self) -> &'static str;
}

/// In-process homogeneous self-dual interior-point backend.
#[derive(Debug, Clone, Default)]
pub struct InteriorPointBackend {
    pub options: IpmOptions,
}

impl ConicBackend for InteriorPointBackend {
    fn solve(&self, prog: &ConicProgram) -> SolveReport {
        ipm::solve_hsde(prog, &self.options)
    }

    fn name(&self) -> &'static str {
        "interior_point"
    }
}

/// Look up a backend by its configuration name.
pub fn backend_by_name(name: &str) -> Result<Box<dyn ConicBackend + Send + Sync>> {
    match name {
        "interior_point" => Ok(Box::new(InteriorPointBackend::default())),
        other => Err(Error::Config(format!(
            "unknown solver backend `{other}` (available: interior_point)"
        ))),
    }
}

/// Solve with the default interior-point backend.
pub fn solve(prog: &ConicProgram) -> SolveReport {
    InteriorPointBackend::default().solve(prog)
}

/// Assemble the regularized direct-LQR program in conic standard form.
///
/// Decision variables are `Σ (sym n)`, `S ((m+n)×n)`, `L (sym m)`,
/// `M (sym m+n)`. The objective is `Tr(QΣ) + Tr(RL) + λTr(MΦ)`; the zero
/// cone carries the n² equalities `X̄0·S = Σ`, and three PSD blocks encode
/// the Schur-complement inequalities
/// `[[Σ−I, X̄1S], [SᵀX̄1ᵀ, Σ]]`, `[[L, Ū0S], [SᵀŪ0ᵀ, Σ]]`,
/// `[[M, S], [Sᵀ, Σ]]`.
pub fn assemble(cov: &SampleCov, penalties: &PenaltyPair, lambda: f64) -> Result<ConicProgram> {
    if lambda < 0.0 {
        return Err(Error::NegativeLambda { lambda });
    }
    let n = cov.state_dim();
    let m = cov.input_dim();
    if penalties.q().nrows() != n || penalties.r().nrows() != m {
        return Err(Error::dims(format!(
            "penalties sized {}x{}/{}x{} do not match data dims n={n}, m={m}",
            penalties.q().nrows(),
            penalties.q().ncols(),
            penalties.r().nrows(),
            penalties.r().ncols()
        )));
    }

    let mut layout = VarLayout::default();
    let sigma_off = layout.push("Sigma", VarKind::Symmetric(n));
    let s_off = layout.push("S", VarKind::Rectangular(m + n, n));
    let l_off = layout.push("L", VarKind::Symmetric(m));
    let m_off = layout.push("M", VarKind::Symmetric(m + n));
    let num_vars = layout.total_len();

    let s_var = |row: usize, col: usize| s_off + col * (m + n) + row;
    let sigma_var = |i: usize, j: usize| sigma_off + svec_index(i.min(j), i.max(j));
    // Matrix-entry coefficient of a symmetric variable's svec coordinate.
    let sym_entry_coeff = |i: usize, j: usize| {
        if i == j {
            1.0
        } else {
            1.0 / std::f64::consts::SQRT_2
        }
    };

    // Objective: svec(Q) on Σ, svec(R) on L, λ·svec(Φ) on M.
    let mut objective = Vec::new();
    let q_svec = svec(penalties.q())?;
    for (k, &v) in q_svec.iter().enumerate() {
        if v != 0.0 {
            objective.push((sigma_off + k, v));
        }
    }
    let r_svec = svec(penalties.r())?;
    for (k, &v) in r_svec.iter().enumerate() {
        if v != 0.0 {
            objective.push((l_off + k, v));
        }
    }
    if lambda > 0.0 {
        let phi_svec = svec(&cov.phi)?;
        for (k, &v) in phi_svec.iter().enumerate() {
            if lambda * v != 0.0 {
                objective.push((m_off + k, lambda * v));
            }
        }
    }
    objective.sort_by_key(|&(idx, _)| idx);

    // Zero cone: X̄0·S − Σ = 0, one row per (r, c) entry of the n×n product.
    let mut eq = SparseTriplets::new(n * n, num_vars);
    let eq_rhs = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let row = r * n + c;
            for k in 0..(m + n) {
                eq.push(row, s_var(k, c), cov.x0_bar[(r, k)]);
            }
            eq.push(row, sigma_var(r, c), -sym_entry_coeff(r, c));
        }
    }

    // Shared builder for the three 2x2 block LMIs. `top` is the symmetric
    // top-left span, `coupling` maps S to the top-right corner.
    let block_lmi = |top_dim: usize,
                     top_var: &dyn Fn(usize, usize) -> usize,
                     coupling: Option<&DMatrix<f64>>,
                     subtract_identity: bool|
     -> PsdBlock {
        let dim = top_dim + n;
        let mut affine = SparseTriplets::new(svec_len(dim), num_vars);
        let mut constant = vec![0.0; svec_len(dim)];
        for j in 0..dim {
            for i in 0..=j {
                let row = svec_index(i, j);
                let scale = if i == j {
                    1.0
                } else {
                    std::f64::consts::SQRT_2
                };
                if j < top_dim {
                    // Top-left block: the symmetric variable itself.
                    affine.push(row, top_var(i, j), 1.0);
                    if subtract_identity && i == j {
                        constant[row] = -1.0;
                    }
                } else if i < top_dim {
                    // Top-right block: C·S or S itself.
                    let col = j - top_dim;
                    match coupling {
                        Some(cmat) => {
                            for k in 0..(m + n) {
                                affine.push(row, s_var(k, col), scale * cmat[(i, k)]);
                            }
                        }
                        None => affine.push(row, s_var(i, col), scale),
                    }
                } else {
                    // Bottom-right block: Σ.
                    affine.push(row, sigma_var(i - top_dim, j - top_dim), 1.0);
                }
            }
        }
        PsdBlock {
            dim,
            affine,
            constant,
        }
    };

    let stability = block_lmi(n, &|i, j| sigma_var(i, j), Some(&cov.x1_bar), true);
    let cost = block_lmi(
        m,
        &|i, j| l_off + svec_index(i.min(j), i.max(j)),
        Some(&cov.u0_bar),
        false,
    );
    let regularizer = block_lmi(
        m + n,
        &|i, j| m_off + svec_index(i.min(j), i.max(j)),
        None,
        false,
    );

    Ok(ConicProgram {
        num_vars,
        objective,
        eq_matrix: eq,
        eq_rhs,
        psd_blocks: vec![stability, cost, regularizer],
        layout,
    })
}

#[cfg(test)]
mod tests;
