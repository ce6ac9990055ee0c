//! Homogeneous self-dual interior-point solver for zero + PSD cone
//! programs.
//!
//! The program `min cᵀx s.t. Ax = b, Gx + s = h, s ∈ K` is embedded in the
//! self-dual system over `(x, y, z, τ, s, κ)` and followed to µ → 0 with
//! Nesterov-Todd scaling and a Mehrotra predictor-corrector. The embedding
//! separates optimality (τ → positive) from primal/dual infeasibility
//! certificates (κ → positive), so pathological instances degrade to a
//! status instead of a panic.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use super::{smat, svec_unchecked, ConicProgram, SolveReport, SolveStatus};

fn trace_enabled() -> bool {
    static ENABLED: OnceLock<bool> = OnceLock::new();
    *ENABLED.get_or_init(|| std::env::var("COVLQR_IPM_TRACE").ok().as_deref() == Some("1"))
}

/// Interior-point termination thresholds.
#[derive(Debug, Clone, Copy)]
pub struct IpmOptions {
    /// Primal/dual feasibility tolerance (relative).
    pub tol_feas: f64,
    /// Relative duality-gap tolerance.
    pub tol_gap: f64,
    /// Certificate quality required to declare infeasible/unbounded.
    pub tol_infeas: f64,
    pub max_iter: usize,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
}

impl Default for IpmOptions {
    fn default() -> Self {
        Self {
            tol_feas: 1e-8,
            tol_gap: 1e-8,
            tol_infeas: 1e-9,
            max_iter: 200,
            step_fraction: 0.99,
        }
    }
}

/// One Newton direction `(Δx, Δy, Δz, Δs, Δτ, Δκ)`.
type Direction = (
    DVector<f64>,
    DVector<f64>,
    DVector<f64>,
    DVector<f64>,
    f64,
    f64,
);

/// Per-block Nesterov-Todd scaling data.
struct BlockScaling {
    offset: usize,
    len: usize,
    /// `R = T^{1/2}` with `TZT = S`; `W svec(U) = svec(RUR)`.
    r: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    t: DMatrix<f64>,
    /// Scaled point `λ = RZR = R⁻¹SR⁻¹`.
    lambda: DMatrix<f64>,
    lambda_vecs: DMatrix<f64>,
    lambda_vals: DVector<f64>,
}

struct Blocks {
    dims: Vec<usize>,
    offsets: Vec<usize>,
}

impl Blocks {
    fn lens(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.dims
            .iter()
            .zip(&self.offsets)
            .map(|(&d, &o)| (d, o, super::svec_len(d)))
    }
}

fn sym_eigen(mat: &DMatrix<f64>) -> Option<(DMatrix<f64>, DVector<f64>)> {
    let eig = nalgebra::linalg::SymmetricEigen::try_new(mat.clone(), f64::EPSILON, 100_000)?;
    Some((eig.eigenvectors, eig.eigenvalues))
}

/// `U diag(f(λ)) Uᵀ` from an eigendecomposition.
fn eig_apply(vecs: &DMatrix<f64>, vals: &DVector<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let scaled = DMatrix::from_fn(vecs.nrows(), vecs.ncols(), |i, j| vecs[(i, j)] * f(vals[j]));
    &scaled * vecs.transpose()
}

fn symmetrize(mat: &DMatrix<f64>) -> DMatrix<f64> {
    (mat + mat.transpose()) * 0.5
}

/// Matrix of the svec-space congruence `U ↦ F·U·F` for symmetric `F`.
fn congruence_matrix(f: &DMatrix<f64>, len: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(len, len);
    let mut basis = vec![0.0f64; len];
    for k in 0..len {
        basis[k] = 1.0;
        let m = smat(&basis).expect("triangular length");
        let mapped = symmetrize(&(f * m * f));
        out.set_column(k, &svec_unchecked(&mapped));
        basis[k] = 0.0;
    }
    out
}

/// Largest α ∈ (0, ∞] with `S + α·ΔS ⪰ 0`, computed from the scaled
/// eigenvalues of `S^{-1/2} ΔS S^{-1/2}`.
fn psd_step_to_boundary(s: &DMatrix<f64>, ds: &DMatrix<f64>) -> Option<f64> {
    let (vecs, vals) = sym_eigen(s)?;
    if vals.iter().any(|&v| v <= 0.0) {
        return Some(0.0);
    }
    let s_inv_sqrt = eig_apply(&vecs, &vals, |v| 1.0 / v.sqrt());
    let m = symmetrize(&(&s_inv_sqrt * ds * &s_inv_sqrt));
    let (_, mvals) = sym_eigen(&m)?;
    let min_eig = mvals.iter().copied().fold(f64::INFINITY, f64::min);
    if min_eig >= 0.0 {
        Some(f64::INFINITY)
    } else {
        Some(-1.0 / min_eig)
    }
}

struct Dense {
    c: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    g: DMatrix<f64>,
    h: DVector<f64>,
    blocks: Blocks,
    num_vars: usize,
    eq_rows: usize,
    cone_rows: usize,
    /// Barrier degree Σ dᵢ.
    degree: f64,
}

fn densify(prog: &ConicProgram) -> Dense {
    let num_vars = prog.num_vars;
    let eq_rows = prog.eq_matrix.rows;
    let mut a = DMatrix::zeros(eq_rows, num_vars);
    for &(r, c, v) in &prog.eq_matrix.entries {
        a[(r, c)] += v;
    }
    let b = DVector::from_column_slice(&prog.eq_rhs);

    let mut dims = Vec::new();
    let mut offsets = Vec::new();
    let mut cone_rows = 0;
    for block in &prog.psd_blocks {
        dims.push(block.dim);
        offsets.push(cone_rows);
        cone_rows += super::svec_len(block.dim);
    }
    // Block value is affine·x + constant ⪰ 0; in `Gx + s = h` form that is
    // G = −affine, h = constant, s the block value.
    let mut g = DMatrix::zeros(cone_rows, num_vars);
    let mut h = DVector::zeros(cone_rows);
    for (block, &offset) in prog.psd_blocks.iter().zip(&offsets) {
        for &(r, c, v) in &block.affine.entries {
            g[(offset + r, c)] -= v;
        }
        for (r, &v) in block.constant.iter().enumerate() {
            h[offset + r] = v;
        }
    }
    let degree = dims.iter().map(|&d| d as f64).sum();
    Dense {
        c: prog.objective_dense(),
        a,
        b,
        g,
        h,
        blocks: Blocks { dims, offsets },
        num_vars,
        eq_rows,
        cone_rows,
        degree,
    }
}

fn failure_report(iterations: usize, status: SolveStatus) -> SolveReport {
    SolveReport {
        status,
        x: Vec::new(),
        objective: f64::NAN,
        iterations,
        primal_residual: f64::NAN,
        dual_residual: f64::NAN,
        duality_gap: f64::NAN,
    }
}

pub(crate) fn solve_hsde(prog: &ConicProgram, opts: &IpmOptions) -> SolveReport {
    let d = densify(prog);
    if d.cone_rows == 0 {
        return solve_equality_only(prog, &d);
    }

    let nu = d.degree;
    let n = d.num_vars;
    let p = d.eq_rows;
    let q = d.cone_rows;

    let mut x = DVector::<f64>::zeros(n);
    let mut y = DVector::<f64>::zeros(p);
    let mut s = DVector::<f64>::zeros(q);
    let mut z = DVector::<f64>::zeros(q);
    for (dim, offset, _) in d.blocks.lens() {
        let eye = svec_unchecked(&DMatrix::identity(dim, dim));
        s.rows_mut(offset, eye.len()).copy_from(&eye);
        z.rows_mut(offset, eye.len()).copy_from(&eye);
    }
    let mut tau = 1.0f64;
    let mut kappa = 1.0f64;

    let norm_b = 1.0 + d.b.norm();
    let norm_h = 1.0 + d.h.norm();
    let norm_c = 1.0 + d.c.norm();

    let mut stalls = 0usize;

    for iter in 0..opts.max_iter {
        // Residuals of the self-dual embedding.
        let res_x = d.a.transpose() * &y + d.g.transpose() * &z + &d.c * tau;
        let res_y = &d.a * &x - &d.b * tau;
        let res_z = &d.g * &x + &s - &d.h * tau;
        let res_tau = d.c.dot(&x) + d.b.dot(&y) + d.h.dot(&z) + kappa;
        let mu = (s.dot(&z) + tau * kappa) / (nu + 1.0);

        // Convergence on the de-homogenized iterate.
        let pres = (res_y.norm() / norm_b).max(res_z.norm() / norm_h) / tau;
        let dres = res_x.norm() / norm_c / tau;
        let pcost = d.c.dot(&x) / tau;
        let dcost = -(d.b.dot(&y) + d.h.dot(&z)) / tau;
        let abs_gap = s.dot(&z) / (tau * tau);
        let rel_gap = abs_gap / pcost.abs().max(1.0);
        let pd_gap = (pcost - dcost).abs() / pcost.abs().max(1.0);
        if trace_enabled() {
            eprintln!(
                "ipm iter {iter}: mu={mu:.3e} pres={pres:.3e} dres={dres:.3e} gap={rel_gap:.3e} tau={tau:.3e} kappa={kappa:.3e}"
            );
        }
        if pres <= opts.tol_feas
            && dres <= opts.tol_feas
            && (rel_gap <= opts.tol_gap || pd_gap <= opts.tol_gap)
        {
            let xs: Vec<f64> = x.iter().map(|v| v / tau).collect();
            return SolveReport {
                status: SolveStatus::Optimal,
                objective: pcost,
                x: xs,
                iterations: iter,
                primal_residual: pres,
                dual_residual: dres,
                duality_gap: rel_gap,
            };
        }

        // Infeasibility certificates.
        let by_hz = d.b.dot(&y) + d.h.dot(&z);
        if by_hz < 0.0 {
            let scale = -1.0 / by_hz;
            let cert = (d.a.transpose() * &y + d.g.transpose() * &z).norm() * scale;
            if cert <= opts.tol_infeas * norm_c {
                return failure_report(iter, SolveStatus::Infeasible);
            }
        }
        let cx = d.c.dot(&x);
        if cx < 0.0 {
            let scale = -1.0 / cx;
            let pcert = ((&d.a * &x).norm() / norm_b).max((&d.g * &x + &s).norm() / norm_h) * scale;
            if pcert <= opts.tol_infeas {
                return failure_report(iter, SolveStatus::Unbounded);
            }
        }

        // Nesterov-Todd scalings.
        let mut scalings = Vec::with_capacity(d.blocks.dims.len());
        let mut scaling_failed = false;
        for (_dim, offset, len) in d.blocks.lens() {
            let s_mat = smat(s.rows(offset, len).as_slice()).expect("triangular");
            let z_mat = smat(z.rows(offset, len).as_slice()).expect("triangular");
            let Some((sv, se)) = sym_eigen(&s_mat) else {
                scaling_failed = true;
                break;
            };
            let Some((_, ze)) = sym_eigen(&z_mat) else {
                scaling_failed = true;
                break;
            };
            if se.iter().any(|&v| v <= 0.0) || ze.iter().any(|&v| v <= 0.0) {
                scaling_failed = true;
                break;
            }
            let s_half = eig_apply(&sv, &se, f64::sqrt);
            let inner = symmetrize(&(&s_half * &z_mat * &s_half));
            let Some((iv, ie)) = sym_eigen(&inner) else {
                scaling_failed = true;
                break;
            };
            if ie.iter().any(|&v| v <= 0.0) {
                scaling_failed = true;
                break;
            }
            let inner_inv_half = eig_apply(&iv, &ie, |v| 1.0 / v.sqrt());
            let t = symmetrize(&(&s_half * &inner_inv_half * &s_half));
            let Some((tv, te)) = sym_eigen(&t) else {
                scaling_failed = true;
                break;
            };
            if te.iter().any(|&v| v <= 0.0) {
                scaling_failed = true;
                break;
            }
            let r = eig_apply(&tv, &te, f64::sqrt);
            let r_inv = eig_apply(&tv, &te, |v| 1.0 / v.sqrt());
            let lambda = symmetrize(&(&r * &z_mat * &r));
            let Some((lv, le)) = sym_eigen(&lambda) else {
                scaling_failed = true;
                break;
            };
            scalings.push(BlockScaling {
                offset,
                len,
                r,
                r_inv,
                t,
                lambda,
                lambda_vecs: lv,
                lambda_vals: le,
            });
        }
        if scaling_failed {
            return failure_report(iter, SolveStatus::NumericalFailure);
        }

        // W² as an explicit matrix per block (svec coordinates).
        let w2_mats: Vec<DMatrix<f64>> = scalings
            .iter()
            .map(|sc| congruence_matrix(&sc.t, sc.len))
            .collect();
        let w2_apply = |v: &DVector<f64>| {
            let mut out = DVector::zeros(q);
            for (sc, w2) in scalings.iter().zip(&w2_mats) {
                let seg = v.rows(sc.offset, sc.len).into_owned();
                out.rows_mut(sc.offset, sc.len).copy_from(&(w2 * seg));
            }
            out
        };

        // Full symmetric indefinite KKT system
        //   [0  Aᵀ  Gᵀ] [Δx]   [rx]
        //   [A  0   0 ] [Δy] = [ry]
        //   [G  0  −W²] [Δz]   [rz]
        // factored once per iteration; the reduced normal-equations form
        // squares the W conditioning and loses the primal residual near the
        // optimum, so the full system plus iterative refinement is used.
        let kdim = n + p + q;
        let mut kkt = DMatrix::zeros(kdim, kdim);
        kkt.view_mut((0, n), (n, p)).copy_from(&d.a.transpose());
        kkt.view_mut((0, n + p), (n, q)).copy_from(&d.g.transpose());
        kkt.view_mut((n, 0), (p, n)).copy_from(&d.a);
        kkt.view_mut((n + p, 0), (q, n)).copy_from(&d.g);
        for (sc, w2) in scalings.iter().zip(&w2_mats) {
            kkt.view_mut((n + p + sc.offset, n + p + sc.offset), (sc.len, sc.len))
                .copy_from(&(-w2));
        }
        let lu = kkt.clone().lu();

        let solve_kkt = |rx: &DVector<f64>,
                         ry: &DVector<f64>,
                         rz: &DVector<f64>|
         -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
            let mut rhs = DVector::zeros(kdim);
            rhs.rows_mut(0, n).copy_from(rx);
            rhs.rows_mut(n, p).copy_from(ry);
            rhs.rows_mut(n + p, q).copy_from(rz);
            let mut sol = lu.solve(&rhs)?;
            // Two refinement sweeps recover the accuracy the ill-conditioned
            // endgame factorization loses.
            for _ in 0..2 {
                let resid = &rhs - &kkt * &sol;
                if let Some(corr) = lu.solve(&resid) {
                    sol += corr;
                } else {
                    break;
                }
            }
            if sol.iter().any(|v| !v.is_finite()) {
                return None;
            }
            Some((
                sol.rows(0, n).into_owned(),
                sol.rows(n, p).into_owned(),
                sol.rows(n + p, q).into_owned(),
            ))
        };

        // Constant-direction solve: RHS (−c, b, h); shared by both passes.
        let Some((x1, y1, z1)) = solve_kkt(&(-&d.c), &d.b, &d.h) else {
            return failure_report(iter, SolveStatus::NumericalFailure);
        };
        let denom = d.c.dot(&x1) + d.b.dot(&y1) + d.h.dot(&z1) - kappa / tau;
        if denom.abs() < 1e-14 {
            return failure_report(iter, SolveStatus::NumericalFailure);
        }

        // One Newton direction for a given residual weight, complementarity
        // target W·d, and κτ target dκ.
        let direction = |alpha_r: f64, wd: &DVector<f64>, dkappa_rhs: f64| -> Option<Direction> {
            let rx = -&res_x * alpha_r;
            let ry = -&res_y * alpha_r;
            let rz = -&res_z * alpha_r - wd;
            let (x2, y2, z2) = solve_kkt(&rx, &ry, &rz)?;
            let numer = -alpha_r * res_tau
                - (d.c.dot(&x2) + d.b.dot(&y2) + d.h.dot(&z2))
                - dkappa_rhs / tau;
            let dtau = numer / denom;
            let dx = &x2 + &x1 * dtau;
            let dy = &y2 + &y1 * dtau;
            let dz = &z2 + &z1 * dtau;
            let ds = wd - w2_apply(&dz);
            let dkappa = (dkappa_rhs - kappa * dtau) / tau;
            Some((dx, dy, dz, ds, dtau, dkappa))
        };

        // Predictor (affine) direction: W·d = −s exactly.
        let wd_aff = -&s;
        let Some((_dx_a, _dy_a, dz_a, ds_a, dtau_a, dkappa_a)) =
            direction(1.0, &wd_aff, -tau * kappa)
        else {
            return failure_report(iter, SolveStatus::NumericalFailure);
        };

        let step_len = |ds: &DVector<f64>, dz: &DVector<f64>, dtau: f64, dkappa: f64| -> f64 {
            let mut alpha = f64::INFINITY;
            for sc in &scalings {
                let s_mat = smat(s.rows(sc.offset, sc.len).as_slice()).expect("triangular");
                let ds_mat = smat(ds.rows(sc.offset, sc.len).as_slice()).expect("triangular");
                let z_mat = smat(z.rows(sc.offset, sc.len).as_slice()).expect("triangular");
                let dz_mat = smat(dz.rows(sc.offset, sc.len).as_slice()).expect("triangular");
                alpha = alpha
                    .min(psd_step_to_boundary(&s_mat, &ds_mat).unwrap_or(0.0))
                    .min(psd_step_to_boundary(&z_mat, &dz_mat).unwrap_or(0.0));
            }
            if dtau < 0.0 {
                alpha = alpha.min(-tau / dtau);
            }
            if dkappa < 0.0 {
                alpha = alpha.min(-kappa / dkappa);
            }
            alpha
        };

        let alpha_aff = step_len(&ds_a, &dz_a, dtau_a, dkappa_a).min(1.0);
        let mu_aff = ((&s + &ds_a * alpha_aff).dot(&(&z + &dz_a * alpha_aff))
            + (tau + alpha_aff * dtau_a) * (kappa + alpha_aff * dkappa_a))
            / (nu + 1.0);
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // Corrector: W·d = W·L_λ⁻¹[σµI − λ² − sym(Uₐ·Vₐ)] with
        // Uₐ = R⁻¹ΔSₐR⁻¹, Vₐ = RΔZₐR.
        let mut wd = DVector::zeros(q);
        for sc in &scalings {
            let ds_mat = smat(ds_a.rows(sc.offset, sc.len).as_slice()).expect("triangular");
            let dz_mat = smat(dz_a.rows(sc.offset, sc.len).as_slice()).expect("triangular");
            let u_a = symmetrize(&(&sc.r_inv * &ds_mat * &sc.r_inv));
            let v_a = symmetrize(&(&sc.r * &dz_mat * &sc.r));
            let corr = symmetrize(&(&u_a * &v_a));
            let dim = sc.lambda.nrows();
            let mut target =
                DMatrix::identity(dim, dim) * (sigma * mu) - &sc.lambda * &sc.lambda - corr;
            target = symmetrize(&target);
            // Solve (λX + Xλ)/2 = target in λ's eigenbasis.
            let tilde = sc.lambda_vecs.transpose() * &target * &sc.lambda_vecs;
            let mut xt = DMatrix::zeros(dim, dim);
            for i in 0..dim {
                for j in 0..dim {
                    let denom_ij = sc.lambda_vals[i] + sc.lambda_vals[j];
                    xt[(i, j)] = 2.0 * tilde[(i, j)] / denom_ij;
                }
            }
            let d_mat = symmetrize(&(&sc.lambda_vecs * xt * sc.lambda_vecs.transpose()));
            let wd_mat = symmetrize(&(&sc.r * &d_mat * &sc.r));
            wd.rows_mut(sc.offset, sc.len)
                .copy_from(&svec_unchecked(&wd_mat));
        }
        let dkappa_rhs = sigma * mu - tau * kappa - dtau_a * dkappa_a;

        let Some((dx, dy, dz, ds, dtau, dkappa)) = direction(1.0 - sigma, &wd, dkappa_rhs) else {
            return failure_report(iter, SolveStatus::NumericalFailure);
        };

        let alpha = (opts.step_fraction * step_len(&ds, &dz, dtau, dkappa)).min(1.0);
        if trace_enabled() {
            eprintln!("          sigma={sigma:.3e} alpha_aff={alpha_aff:.3e} alpha={alpha:.3e}");
        }
        if alpha <= 1e-8 {
            stalls += 1;
            if stalls >= 3 {
                return failure_report(iter, SolveStatus::NumericalFailure);
            }
        } else {
            stalls = 0;
        }

        x += &dx * alpha;
        y += &dy * alpha;
        z += &dz * alpha;
        s += &ds * alpha;
        tau += alpha * dtau;
        kappa += alpha * dkappa;
        if tau <= 0.0 || kappa < 0.0 || !tau.is_finite() {
            return failure_report(iter, SolveStatus::NumericalFailure);
        }
    }

    failure_report(opts.max_iter, SolveStatus::NumericalFailure)
}

/// Degenerate case with no cone rows: plain least-squares on the equality
/// system.
fn solve_equality_only(prog: &ConicProgram, d: &Dense) -> SolveReport {
    if d.eq_rows == 0 {
        let x = vec![0.0; d.num_vars];
        let objective = 0.0;
        return SolveReport {
            status: if d.c.norm() == 0.0 {
                SolveStatus::Optimal
            } else {
                SolveStatus::Unbounded
            },
            x,
            objective,
            iterations: 0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            duality_gap: 0.0,
        };
    }
    let svd = d.a.clone().svd(true, true);
    match svd.solve(&d.b, 1e-12) {
        Ok(x) => {
            let residual = (&d.a * &x - &d.b).norm() / (1.0 + d.b.norm());
            if residual > 1e-8 {
                return failure_report(0, SolveStatus::Infeasible);
            }
            let objective = prog.objective_value(&x);
            SolveReport {
                status: SolveStatus::Optimal,
                x: x.iter().copied().collect(),
                objective,
                iterations: 0,
                primal_residual: residual,
                dual_residual: 0.0,
                duality_gap: 0.0,
            }
        }
        Err(_) => failure_report(0, SolveStatus::NumericalFailure),
    }
}
