//! Model-based LQR machinery.
//!
//! Everything here works on a known pair `(A, B)`: spectral radius and
//! Schur stability, the discrete Lyapunov equation solved by Kronecker
//! vectorization, the discrete algebraic Riccati equation solved by value
//! iteration, the steady-state LQR cost `Tr((Q + KᵀRK)Σ)`, and the
//! covariance-corrected penalty diagnostic.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Convergence tolerance on successive Riccati iterates (Frobenius norm).
const DARE_TOL: f64 = 1e-12;
/// Iteration cap for the Riccati value iteration. Divergence well before
/// this cap flags a non-stabilizable pair.
const DARE_MAX_ITER: usize = 1_000_000;
/// Norm blow-up threshold treated as divergence of the value iteration.
const DARE_DIVERGENCE_NORM: f64 = 1e12;

/// A discrete-time linear system `x⁺ = Ax + Bu + w`, true or estimated.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl SystemModel {
    /// Build a model from a square state map and a conforming input map.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::dims(format!(
                "state map must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() {
            return Err(Error::dims(format!(
                "input map has {} rows, state dimension is {}",
                b.nrows(),
                a.nrows()
            )));
        }
        if a.nrows() == 0 || b.ncols() == 0 {
            return Err(Error::dims("state and input dimensions must be positive"));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::dims("system matrices contain non-finite entries"));
        }
        Ok(Self { a, b })
    }

    /// The marginally unstable Laplacian benchmark: tridiagonal `A` with
    /// 1.01 on the diagonal, 0.01 off-diagonal, and `B = I₃`.
    pub fn benchmark() -> Self {
        let a =
            DMatrix::from_row_slice(3, 3, &[1.01, 0.01, 0.0, 0.01, 1.01, 0.01, 0.0, 0.01, 1.01]);
        Self::new(a, DMatrix::identity(3, 3)).expect("benchmark model is well formed")
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// State dimension `n`.
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension `m`.
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Closed-loop matrix `A + BK`.
    pub fn closed_loop(&self, gain: &Gain) -> Result<DMatrix<f64>> {
        if gain.matrix.nrows() != self.input_dim() || gain.matrix.ncols() != self.state_dim() {
            return Err(Error::dims(format!(
                "gain is {}x{}, expected {}x{}",
                gain.matrix.nrows(),
                gain.matrix.ncols(),
                self.input_dim(),
                self.state_dim()
            )));
        }
        Ok(&self.a + &self.b * &gain.matrix)
    }
}

/// Positive definite penalty pair `(Q, R)` of the quadratic cost.
#[derive(Debug, Clone)]
pub struct PenaltyPair {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl PenaltyPair {
    /// Validates symmetry and positive definiteness of both penalties.
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        for mat in [&q, &r] {
            check_symmetric(mat, 1e-12)?;
            let min_eig = min_symmetric_eigenvalue(mat)?;
            if min_eig <= 1e-12 {
                return Err(Error::NotPositiveDefinite { min_eig });
            }
        }
        Ok(Self { q, r })
    }

    /// `Q = I₃`, `R = 10⁻³·I₃`, the benchmark setting.
    pub fn benchmark() -> Self {
        Self::new(DMatrix::identity(3, 3), DMatrix::identity(3, 3) * 1e-3)
            .expect("benchmark penalties are positive definite")
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
}

/// State-feedback gain, `u = Kx`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gain {
    pub matrix: DMatrix<f64>,
}

impl Gain {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::dims("gain contains non-finite entries"));
        }
        Ok(Self { matrix })
    }
}

/// Steady-state covariance `Σ = W + FΣFᵀ` of a stable closed loop.
#[derive(Debug, Clone)]
pub struct SteadyCovariance {
    pub matrix: DMatrix<f64>,
}

/// Output of [`solve_dare`]: Riccati fixed point, optimal gain, optimal cost.
#[derive(Debug, Clone)]
pub struct DareSolution {
    /// Stabilizing fixed point `P` of the Riccati map.
    pub p: DMatrix<f64>,
    /// `K* = −(R + BᵀPB)⁻¹BᵀPA`.
    pub gain: Gain,
    /// Optimal average cost `C* = Tr(P)` under unit noise covariance.
    pub optimal_cost: f64,
    /// Iterations used by the value iteration.
    pub iterations: usize,
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(mat: &DMatrix<f64>) -> Result<f64> {
    if !mat.is_square() {
        return Err(Error::dims(format!(
            "spectral radius needs a square matrix, got {}x{}",
            mat.nrows(),
            mat.ncols()
        )));
    }
    if mat.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigenFailure {
            rows: mat.nrows(),
            cols: mat.ncols(),
        });
    }
    if mat.nrows() == 0 {
        return Ok(0.0);
    }
    let schur = nalgebra::linalg::Schur::try_new(mat.clone(), f64::EPSILON, 100_000).ok_or(
        Error::EigenFailure {
            rows: mat.nrows(),
            cols: mat.ncols(),
        },
    )?;
    let eigs = schur.complex_eigenvalues();
    Ok(eigs.iter().map(|e| e.norm()).fold(0.0, f64::max))
}

/// Whether `A + BK` is Schur stable (strict `ρ < 1`, no margin).
pub fn is_stabilizing(model: &SystemModel, gain: &Gain) -> Result<bool> {
    let closed = model.closed_loop(gain)?;
    Ok(spectral_radius(&closed)? < 1.0)
}

/// Solve the discrete Lyapunov equation `Σ = W + FΣFᵀ`.
///
/// Uses the Kronecker vectorization `(I − F⊗F) vec(Σ) = vec(W)`, exact to
/// machine precision at desk scale; sized for n ≤ 50.
pub fn solve_dlyap(f: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<SteadyCovariance> {
    let n = f.nrows();
    if !f.is_square() || w.nrows() != n || w.ncols() != n {
        return Err(Error::dims(format!(
            "Lyapunov operands must be square of equal size, got {}x{} and {}x{}",
            f.nrows(),
            f.ncols(),
            w.nrows(),
            w.ncols()
        )));
    }
    if n > 50 {
        return Err(Error::dims(format!(
            "Kronecker Lyapunov solve is limited to n ≤ 50, got n = {n}"
        )));
    }
    let rho = spectral_radius(f)?;
    if rho >= 1.0 {
        return Err(Error::NotStable { rho });
    }

    let kron = f.kronecker(f);
    let lhs = DMatrix::identity(n * n, n * n) - kron;
    let rhs = DVector::from_column_slice(w.as_slice());
    let lu = lhs.full_piv_lu();
    let vec_sigma = lu.solve(&rhs).ok_or_else(|| Error::IllConditioned {
        context: format!("I - F⊗F is singular (spectral radius {rho})"),
    })?;
    let sigma = DMatrix::from_column_slice(n, n, vec_sigma.as_slice());
    let sigma = (&sigma + sigma.transpose()) * 0.5;

    let residual = (&sigma - w - f * &sigma * f.transpose()).norm();
    if residual > 1e-10 * (1.0 + sigma.norm()) {
        return Err(Error::IllConditioned {
            context: format!("Lyapunov residual {residual:.3e} exceeds tolerance"),
        });
    }
    Ok(SteadyCovariance { matrix: sigma })
}

/// Steady-state LQR cost `C(K) = Tr((Q + KᵀRK)Σ)` with `Σ = dlyap(A+BK, Iₙ)`.
pub fn lqr_cost(model: &SystemModel, penalties: &PenaltyPair, gain: &Gain) -> Result<f64> {
    let closed = model.closed_loop(gain)?;
    let n = model.state_dim();
    let sigma = solve_dlyap(&closed, &DMatrix::identity(n, n))?;
    let k = &gain.matrix;
    let weight = penalties.q() + k.transpose() * penalties.r() * k;
    Ok((weight * sigma.matrix).trace())
}

/// Solve the discrete algebraic Riccati equation by value iteration.
///
/// Iterates `P ← Q + AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA` from `P = Q` until the
/// successive-iterate change drops below `1e-12`. Divergence (norm blow-up
/// or hitting the iteration cap) reports [`Error::NoConvergence`], which is
/// how a non-stabilizable estimated pair surfaces to callers.
pub fn solve_dare(model: &SystemModel, penalties: &PenaltyPair) -> Result<DareSolution> {
    let a = model.a();
    let b = model.b();
    let q = penalties.q();
    let r = penalties.r();
    if q.nrows() != model.state_dim() || r.nrows() != model.input_dim() {
        return Err(Error::dims(format!(
            "penalties are {}x{} and {}x{}, expected {} and {}",
            q.nrows(),
            q.ncols(),
            r.nrows(),
            r.ncols(),
            model.state_dim(),
            model.input_dim()
        )));
    }

    let mut p = q.clone();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let pa = &p * a;
        let pb = &p * b;
        let gram = r + b.transpose() * &pb;
        let chol = gram
            .clone()
            .cholesky()
            .ok_or_else(|| Error::IllConditioned {
                context: "R + BᵀPB lost positive definiteness".into(),
            })?;
        // K = -(R + BᵀPB)⁻¹ BᵀPA, but iterate on P directly.
        let btpa = b.transpose() * &pa;
        let correction = btpa.transpose() * chol.solve(&btpa);
        let mut p_next = q + a.transpose() * &pa - correction;
        p_next = (&p_next + p_next.transpose()) * 0.5;

        let delta = (&p_next - &p).norm();
        p = p_next;
        if delta <= DARE_TOL * (1.0 + p.norm()) {
            break;
        }
        if !p.iter().all(|v| v.is_finite()) || p.norm() > DARE_DIVERGENCE_NORM {
            return Err(Error::NoConvergence { iterations });
        }
        if iterations >= DARE_MAX_ITER {
            return Err(Error::NoConvergence { iterations });
        }
    }

    let pb = &p * b;
    let gram = r + b.transpose() * &pb;
    let chol = gram.cholesky().ok_or_else(|| Error::IllConditioned {
        context: "R + BᵀPB lost positive definiteness".into(),
    })?;
    let k = -chol.solve(&(b.transpose() * &p * a));
    let gain = Gain::new(k)?;

    let rho = spectral_radius(&model.closed_loop(&gain)?)?;
    if rho >= 1.0 {
        return Err(Error::NoConvergence { iterations });
    }
    let residual = riccati_residual(model, penalties, &p)?;
    if residual > 1e-10 * (1.0 + p.norm()) {
        return Err(Error::IllConditioned {
            context: format!("Riccati residual {residual:.3e} exceeds tolerance"),
        });
    }

    let optimal_cost = p.trace();
    Ok(DareSolution {
        p,
        gain,
        optimal_cost,
        iterations,
    })
}

/// Frobenius norm of `P − (Q + AᵀPA − AᵀPB(R+BᵀPB)⁻¹BᵀPA)`.
pub fn riccati_residual(
    model: &SystemModel,
    penalties: &PenaltyPair,
    p: &DMatrix<f64>,
) -> Result<f64> {
    let a = model.a();
    let b = model.b();
    let gram = penalties.r() + b.transpose() * p * b;
    let chol = gram.cholesky().ok_or_else(|| Error::IllConditioned {
        context: "R + BᵀPB lost positive definiteness".into(),
    })?;
    let btpa = b.transpose() * p * a;
    let mapped = penalties.q() + a.transpose() * p * a - btpa.transpose() * chol.solve(&btpa);
    Ok((p - mapped).norm())
}

/// Covariance-corrected cost diagnostic
/// `Tr((blkdiag(R, Q) + λΦ⁻¹)·[K; I]Σ[K; I]ᵀ)`.
///
/// The stacking puts `K` on top of `Iₙ`, matching the covariance
/// parameterization. Negative `λ` is allowed here: this is a pure
/// evaluation, the exploration-promoting reading of the penalty correction.
pub fn regularized_cost(
    gain: &Gain,
    sigma: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    penalties: &PenaltyPair,
    lambda: f64,
) -> Result<f64> {
    let m = gain.matrix.nrows();
    let n = gain.matrix.ncols();
    if phi.nrows() != m + n || phi.ncols() != m + n {
        return Err(Error::dims(format!(
            "Φ is {}x{}, expected {}x{}",
            phi.nrows(),
            phi.ncols(),
            m + n,
            m + n
        )));
    }
    if sigma.nrows() != n || sigma.ncols() != n {
        return Err(Error::dims(format!(
            "Σ is {}x{}, expected {n}x{n}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }

    let stacked = stack_gain_identity(&gain.matrix);
    let outer = &stacked * sigma * stacked.transpose();

    let mut weight = DMatrix::zeros(m + n, m + n);
    weight.view_mut((0, 0), (m, m)).copy_from(penalties.r());
    weight.view_mut((m, m), (n, n)).copy_from(penalties.q());
    if lambda != 0.0 {
        let chol = phi.clone().cholesky().ok_or(Error::SingularPhi)?;
        let phi_inv = chol.solve(&DMatrix::identity(m + n, m + n));
        weight += phi_inv * lambda;
    }
    Ok((weight * outer).trace())
}

/// `[K; Iₙ]`, the (m+n)×n stack used throughout the parameterization.
pub fn stack_gain_identity(k: &DMatrix<f64>) -> DMatrix<f64> {
    let m = k.nrows();
    let n = k.ncols();
    let mut stacked = DMatrix::zeros(m + n, n);
    stacked.view_mut((0, 0), (m, n)).copy_from(k);
    stacked
        .view_mut((m, 0), (n, n))
        .copy_from(&DMatrix::identity(n, n));
    stacked
}

pub(crate) fn check_symmetric(mat: &DMatrix<f64>, tol: f64) -> Result<()> {
    if !mat.is_square() {
        return Err(Error::dims(format!(
            "expected a square matrix, got {}x{}",
            mat.nrows(),
            mat.ncols()
        )));
    }
    let mut max_dev: f64 = 0.0;
    for i in 0..mat.nrows() {
        for j in (i + 1)..mat.ncols() {
            max_dev = max_dev.max((mat[(i, j)] - mat[(j, i)]).abs());
        }
    }
    let scale = mat.amax().max(1.0);
    if max_dev > tol * scale {
        return Err(Error::NotSymmetric { max_dev });
    }
    Ok(())
}

pub(crate) fn min_symmetric_eigenvalue(mat: &DMatrix<f64>) -> Result<f64> {
    let eig = nalgebra::linalg::SymmetricEigen::try_new(mat.clone(), f64::EPSILON, 100_000).ok_or(
        Error::EigenFailure {
            rows: mat.nrows(),
            cols: mat.ncols(),
        },
    )?;
    Ok(eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min))
}
