//! Direct data-driven LQR through the covariance parameterization
//! `ΦV = [K; Iₙ]`.
//!
//! The policy parameter `V` has dimension independent of the data length,
//! the regularizer `Ω(V) = Tr(VΣVᵀΦ)` penalizes the noise-induced mismatch
//! in the data-based Lyapunov relation, and the synthesis problem becomes
//! a small SDP handled by the [`crate::conic`] layer. The
//! certainty-equivalence Riccati route is kept side by side: at λ = 0 the
//! two solutions coincide.

use std::time::Instant;

use nalgebra::DMatrix;

use crate::conic::{self, ConicBackend, InteriorPointBackend, SolveStatus};
use crate::control::{
    solve_dare, solve_dlyap, stack_gain_identity, Gain, PenaltyPair, SystemModel,
};
use crate::data::{DataBatch, SampleCov};
use crate::sysid::{least_squares, phi_cholesky};
use crate::{Error, Result};

/// Policy parameter `V` with `ΦV = [K; Iₙ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParam {
    pub v: DMatrix<f64>,
}

/// Outcome of a synthesis call (SDP or certainty-equivalence).
#[derive(Debug, Clone)]
pub struct LqrSolution {
    pub status: SolveStatus,
    /// Recovered gain; present only when the solve succeeded.
    pub gain: Option<Gain>,
    /// Certificate `Σ` reported by the solver (SDP variable, or the
    /// estimated-loop Lyapunov solution on the Riccati route).
    pub sigma: Option<DMatrix<f64>>,
    /// Objective value at the returned variables.
    pub objective: Option<f64>,
    pub solve_time: f64,
    pub iterations: usize,
}

impl LqrSolution {
    fn failed(status: SolveStatus, solve_time: f64, iterations: usize) -> Self {
        Self {
            status,
            gain: None,
            sigma: None,
            objective: None,
            solve_time,
            iterations,
        }
    }
}

/// Unique solution of `ΦV = [K; Iₙ]`.
pub fn parameterize(cov: &SampleCov, gain: &Gain) -> Result<PolicyParam> {
    let n = cov.state_dim();
    let m = cov.input_dim();
    if gain.matrix.nrows() != m || gain.matrix.ncols() != n {
        return Err(Error::dims(format!(
            "gain is {}x{}, data has m={m}, n={n}",
            gain.matrix.nrows(),
            gain.matrix.ncols()
        )));
    }
    let chol = phi_cholesky(cov)?;
    let stacked = stack_gain_identity(&gain.matrix);
    Ok(PolicyParam {
        v: chol.solve(&stacked),
    })
}

/// Gain recovery `K = Ū0·V`.
pub fn recover_gain(cov: &SampleCov, param: &PolicyParam) -> Gain {
    Gain {
        matrix: &cov.u0_bar * &param.v,
    }
}

/// Robustness regularizer `Ω(V) = Tr(VΣVᵀΦ)`.
pub fn regularizer_omega(param: &PolicyParam, sigma: &DMatrix<f64>, phi: &DMatrix<f64>) -> f64 {
    (&param.v * sigma * param.v.transpose() * phi).trace()
}

/// The same regularizer written against the gain,
/// `Tr(Φ⁻¹[K; I]Σ[K; I]ᵀ)`.
pub fn regularizer_indirect(gain: &Gain, sigma: &DMatrix<f64>, phi: &DMatrix<f64>) -> Result<f64> {
    let chol = phi.clone().cholesky().ok_or(Error::SingularPhi)?;
    let stacked = stack_gain_identity(&gain.matrix);
    let outer = &stacked * sigma * stacked.transpose();
    Ok(chol.solve(&outer).trace())
}

/// Bridge to the data-length-sized parameterization `[K; I] = D0·G`.
///
/// Returns the nullspace-free representative `G = D0ᵀV/t` together with the
/// gap in the trace relation `Tr(GΣGᵀ) = Tr(VΣVᵀΦ)/t`.
pub fn g_param_bridge(
    batch: &DataBatch,
    param: &PolicyParam,
    sigma: Option<&DMatrix<f64>>,
) -> (DMatrix<f64>, f64) {
    let t = batch.t as f64;
    let d0 = batch.d0();
    let g = d0.transpose() * &param.v / t;
    let n = batch.state_dim();
    let eye = DMatrix::identity(n, n);
    let sig = sigma.unwrap_or(&eye);
    let lhs = (&g * sig * g.transpose()).trace();
    let phi = &d0 * d0.transpose() / t;
    let rhs = (&param.v * sig * param.v.transpose() * &phi).trace() / t;
    // D0·G and Φ·V agree by construction; a drift here means the batch and
    // parameter dimensions were mixed up by the caller.
    debug_assert!({
        let drift = (&d0 * &g - phi * &param.v).norm();
        drift <= 1e-9 * (1.0 + param.v.norm())
    });
    (g, (lhs - rhs).abs())
}

/// Mismatch between the data-based and noise-corrected Lyapunov relations,
/// `Σ_diff = W̄0VΣVᵀX̄1ᵀ + X̄1VΣVᵀW̄0ᵀ − W̄0VΣVᵀW̄0ᵀ`.
pub fn sigma_diff(cov: &SampleCov, param: &PolicyParam, sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let vsv = &param.v * sigma * param.v.transpose();
    let wv = &cov.w0_bar * &vsv;
    let xv = &cov.x1_bar * &vsv;
    &wv * cov.x1_bar.transpose() + &xv * cov.w0_bar.transpose() - &wv * cov.w0_bar.transpose()
}

/// The same mismatch expanded through the true dynamics,
/// `W̄0VΣVᵀW̄0ᵀ + W̄0VΣVᵀΦ[B A]ᵀ + [B A]ΦVΣVᵀW̄0ᵀ`.
pub fn sigma_diff_expanded(
    model: &SystemModel,
    cov: &SampleCov,
    param: &PolicyParam,
    sigma: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = model.state_dim();
    let m = model.input_dim();
    let mut ba = DMatrix::zeros(n, m + n);
    ba.view_mut((0, 0), (n, m)).copy_from(model.b());
    ba.view_mut((0, m), (n, n)).copy_from(model.a());

    let vsv = &param.v * sigma * param.v.transpose();
    let wv = &cov.w0_bar * &vsv;
    let quad = &wv * cov.w0_bar.transpose();
    let cross = &wv * &cov.phi * ba.transpose();
    &quad + &cross + cross.transpose()
}

/// Solve the regularized covariance-parameterized LQR as an SDP.
///
/// Negative `λ` is rejected: with `M` only bounded below, a negative weight
/// on `Tr(MΦ)` makes the program unbounded. Solver failures are returned as
/// statuses, never panics, so Monte Carlo sweeps can count them as
/// non-stabilizing trials.
pub fn solve_regularized(
    cov: &SampleCov,
    penalties: &PenaltyPair,
    lambda: f64,
) -> Result<LqrSolution> {
    solve_regularized_with(cov, penalties, lambda, &InteriorPointBackend::default())
}

/// [`solve_regularized`] against a caller-chosen conic backend.
pub fn solve_regularized_with(
    cov: &SampleCov,
    penalties: &PenaltyPair,
    lambda: f64,
    backend: &dyn ConicBackend,
) -> Result<LqrSolution> {
    if lambda < 0.0 {
        return Err(Error::NegativeLambda { lambda });
    }
    let start = Instant::now();
    let prog = conic::assemble(cov, penalties, lambda)?;
    let report = backend.solve(&prog);
    let solve_time = start.elapsed().as_secs_f64();
    if report.status != SolveStatus::Optimal {
        return Ok(LqrSolution::failed(
            report.status,
            solve_time,
            report.iterations,
        ));
    }

    let sigma = report
        .variable(&prog, "Sigma")
        .expect("layout carries Sigma");
    let s_var = report.variable(&prog, "S").expect("layout carries S");

    // K = Ū0·S·Σ⁻¹ through a symmetric solve; Σ ⪰ I at optimum keeps this
    // well conditioned.
    let Some(chol) = sigma.clone().cholesky() else {
        return Ok(LqrSolution::failed(
            SolveStatus::NumericalFailure,
            solve_time,
            report.iterations,
        ));
    };
    let us = &cov.u0_bar * &s_var;
    let gain = Gain {
        matrix: chol.solve(&us.transpose()).transpose(),
    };
    Ok(LqrSolution {
        status: SolveStatus::Optimal,
        gain: Some(gain),
        sigma: Some(sigma),
        objective: Some(report.objective),
        solve_time,
        iterations: report.iterations,
    })
}

/// Indirect certainty-equivalence design: least squares, then Riccati on
/// the estimate.
pub fn ce_gain(cov: &SampleCov, penalties: &PenaltyPair) -> Result<LqrSolution> {
    let start = Instant::now();
    let est = least_squares(cov)?;
    let model = est.model()?;
    match solve_dare(&model, penalties) {
        Ok(dare) => {
            let closed = model.closed_loop(&dare.gain)?;
            let n = model.state_dim();
            let sigma = solve_dlyap(&closed, &DMatrix::identity(n, n))?;
            Ok(LqrSolution {
                status: SolveStatus::Optimal,
                gain: Some(dare.gain),
                sigma: Some(sigma.matrix),
                objective: Some(dare.optimal_cost),
                solve_time: start.elapsed().as_secs_f64(),
                iterations: dare.iterations,
            })
        }
        Err(Error::NoConvergence { iterations }) => Ok(LqrSolution::failed(
            SolveStatus::NumericalFailure,
            start.elapsed().as_secs_f64(),
            iterations,
        )),
        Err(other) => Err(other),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::is_stabilizing;
    use crate::data::{generate_batch, sample_covariances, DataMode};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn benchmark() -> (SystemModel, PenaltyPair) {
        (SystemModel::benchmark(), PenaltyPair::benchmark())
    }

    fn random_matrix(rng: &mut StdRng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    fn random_spd(rng: &mut StdRng, d: usize, shift: f64) -> DMatrix<f64> {
        let g = random_matrix(rng, d, d);
        &g * g.transpose() + DMatrix::identity(d, d) * shift
    }

    /// Independent route to the regularized optimum: fold `λΦ⁻¹` into the
    /// penalty blocks and run a cross-weighted Riccati value iteration on
    /// the least-squares estimate.
    fn cross_weighted_riccati_oracle(
        cov: &SampleCov,
        penalties: &PenaltyPair,
        lambda: f64,
    ) -> Option<DMatrix<f64>> {
        let m = cov.input_dim();
        let n = cov.state_dim();
        let est = least_squares(cov).ok()?;
        let a = est.a_hat;
        let b = est.b_hat;

        let phi_inv = cov
            .phi
            .clone()
            .cholesky()?
            .solve(&DMatrix::identity(m + n, m + n));
        let mut weight = DMatrix::zeros(m + n, m + n);
        weight.view_mut((0, 0), (m, m)).copy_from(penalties.r());
        weight.view_mut((m, m), (n, n)).copy_from(penalties.q());
        weight += phi_inv * lambda;
        let huu = weight.view((0, 0), (m, m)).into_owned();
        let hux = weight.view((0, m), (m, n)).into_owned();
        let hxx = weight.view((m, m), (n, n)).into_owned();

        let mut p = hxx.clone();
        for _ in 0..500_000 {
            let gram = &huu + b.transpose() * &p * &b;
            let chol = gram.cholesky()?;
            let lin = b.transpose() * &p * &a + &hux;
            let p_next = &hxx + a.transpose() * &p * &a - lin.transpose() * chol.solve(&lin);
            let p_next = (&p_next + p_next.transpose()) * 0.5;
            let delta = (&p_next - &p).norm();
            p = p_next;
            if delta <= 1e-13 * (1.0 + p.norm()) {
                let gram = &huu + b.transpose() * &p * &b;
                let lin = b.transpose() * &p * &a + &hux;
                return Some(-gram.cholesky()?.solve(&lin));
            }
            if p.norm() > 1e12 {
                return None;
            }
        }
        None
    }

    #[test]
    fn parameterize_identity_covariance_is_plain_stack() {
        let (model, _) = benchmark();
        let batch = generate_batch(&model, 20, 0.3, DataMode::IidPairs, 4).unwrap();
        let mut cov = sample_covariances(&batch);
        cov.phi = DMatrix::identity(6, 6);
        let k = Gain::new(DMatrix::from_fn(3, 3, |i, j| (i + 2 * j) as f64 * 0.1)).unwrap();
        let param = parameterize(&cov, &k).unwrap();
        assert!((&param.v - stack_gain_identity(&k.matrix)).amax() < 1e-12);

        cov.phi = DMatrix::identity(6, 6) * 2.0;
        let param2 = parameterize(&cov, &k).unwrap();
        assert!((&param2.v - stack_gain_identity(&k.matrix) / 2.0).amax() < 1e-12);
    }

    #[test]
    fn zero_parameter_recovers_zero_gain() {
        let (model, _) = benchmark();
        let batch = generate_batch(&model, 20, 0.4, DataMode::IidPairs, 8).unwrap();
        let cov = sample_covariances(&batch);
        let zero = PolicyParam {
            v: DMatrix::zeros(6, 3),
        };
        assert_eq!(recover_gain(&cov, &zero).matrix.amax(), 0.0);
    }

    #[test]
    fn parameterize_recover_round_trip() {
        let (model, _) = benchmark();
        let mut rng = StdRng::seed_from_u64(2);
        for seed in 0..100 {
            let batch = generate_batch(&model, 20, 0.7, DataMode::IidPairs, seed).unwrap();
            let cov = sample_covariances(&batch);
            let k = Gain::new(random_matrix(&mut rng, 3, 3)).unwrap();
            let param = parameterize(&cov, &k).unwrap();
            let back = recover_gain(&cov, &param);
            assert!((&back.matrix - &k.matrix).norm() <= 1e-8 * (1.0 + k.matrix.norm()));

            // Bottom block of ΦV must be the identity.
            let stacked = &cov.phi * &param.v;
            let bottom = stacked.view((3, 0), (3, 3)) - DMatrix::identity(3, 3);
            assert!(bottom.norm() <= 1e-8);
        }
    }

    #[test]
    fn regularizer_routes_agree() {
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..100 {
            let phi = random_spd(&mut rng, 5, 0.3);
            let sigma = random_spd(&mut rng, 3, 0.1);
            let k = Gain::new(random_matrix(&mut rng, 2, 3)).unwrap();
            let stacked = stack_gain_identity(&k.matrix);
            let v = phi.clone().cholesky().unwrap().solve(&stacked);
            let param = PolicyParam { v };
            let omega = regularizer_omega(&param, &sigma, &phi);
            let indirect = regularizer_indirect(&k, &sigma, &phi).unwrap();
            assert!(
                (omega - indirect).abs() <= 1e-10 * (1.0 + indirect.abs()),
                "omega {omega} vs indirect {indirect}"
            );
        }
    }

    #[test]
    fn regularizer_closed_forms() {
        let param = PolicyParam {
            v: DMatrix::zeros(5, 3),
        };
        assert_eq!(
            regularizer_omega(&param, &DMatrix::identity(3, 3), &DMatrix::identity(5, 5)),
            0.0
        );

        let mut rng = StdRng::seed_from_u64(3);
        let v = random_matrix(&mut rng, 5, 3);
        let param = PolicyParam { v: v.clone() };
        let omega = regularizer_omega(&param, &DMatrix::identity(3, 3), &DMatrix::identity(5, 5));
        assert!((omega - v.norm_squared()).abs() < 1e-12 * (1.0 + v.norm_squared()));

        // Scalar case: Φ = diag(2, 2), K = 1, Σ = 1 gives (1 + 1)/2.
        let k = Gain::new(DMatrix::from_element(1, 1, 1.0)).unwrap();
        let val = regularizer_indirect(
            &k,
            &DMatrix::identity(1, 1),
            &(DMatrix::identity(2, 2) * 2.0),
        )
        .unwrap();
        assert!((val - 1.0).abs() < 1e-14);

        // Φ = Σ = I: ‖K‖² + n.
        let k = Gain::new(DMatrix::from_row_slice(1, 2, &[3.0, 4.0])).unwrap();
        let val =
            regularizer_indirect(&k, &DMatrix::identity(2, 2), &DMatrix::identity(3, 3)).unwrap();
        assert!((val - (25.0 + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn regularized_cost_decomposes_into_cost_plus_regularizer() {
        let mut rng = StdRng::seed_from_u64(21);
        for _ in 0..50 {
            let q = random_spd(&mut rng, 3, 0.5);
            let r = random_spd(&mut rng, 2, 0.5);
            let penalties = PenaltyPair::new(q.clone(), r.clone()).unwrap();
            let k = Gain::new(random_matrix(&mut rng, 2, 3)).unwrap();
            let sigma = random_spd(&mut rng, 3, 0.2);
            let phi = random_spd(&mut rng, 5, 0.3);
            let lambda: f64 = rng.random_range(-2.0..2.0);

            let combined =
                crate::control::regularized_cost(&k, &sigma, &phi, &penalties, lambda).unwrap();
            let plain = ((q + k.matrix.transpose() * &r * &k.matrix) * &sigma).trace();
            let reg = regularizer_indirect(&k, &sigma, &phi).unwrap();
            let expected = plain + lambda * reg;
            assert!(
                (combined - expected).abs() <= 1e-12 * (1.0 + expected.abs()),
                "{combined} vs {expected}"
            );
        }
    }

    #[test]
    fn g_bridge_satisfies_trace_relation_and_reconstruction() {
        let (model, _) = benchmark();
        let mut rng = StdRng::seed_from_u64(5);
        for seed in 0..50 {
            let batch = generate_batch(&model, 20, 0.5, DataMode::IidPairs, seed).unwrap();
            let cov = sample_covariances(&batch);

            let v = random_matrix(&mut rng, 6, 3);
            let param = PolicyParam { v };
            let sigma = random_spd(&mut rng, 3, 0.2);
            let (_, gap) = g_param_bridge(&batch, &param, Some(&sigma));
            assert!(gap <= 1e-10, "trace relation gap {gap}");

            // With V from the parameterization, D0·G reconstructs [K; I].
            let k = Gain::new(random_matrix(&mut rng, 3, 3)).unwrap();
            let param = parameterize(&cov, &k).unwrap();
            let (g, _) = g_param_bridge(&batch, &param, None);
            let recon = batch.d0() * &g;
            let target = stack_gain_identity(&k.matrix);
            assert!((recon - target).amax() <= 1e-8);
        }

        let batch = generate_batch(&model, 20, 0.5, DataMode::IidPairs, 7).unwrap();
        let zero = PolicyParam {
            v: DMatrix::zeros(6, 3),
        };
        let (g, gap) = g_param_bridge(&batch, &zero, None);
        assert_eq!(g.amax(), 0.0);
        assert_eq!(gap, 0.0);
    }

    #[test]
    fn sigma_diff_identities() {
        let (model, _) = benchmark();
        let mut rng = StdRng::seed_from_u64(6);
        for seed in 0..100 {
            let batch = generate_batch(&model, 20, 0.8, DataMode::IidPairs, seed).unwrap();
            let cov = sample_covariances(&batch);
            let param = PolicyParam {
                v: random_matrix(&mut rng, 6, 3),
            };
            let sigma = random_spd(&mut rng, 3, 0.2);
            let direct = sigma_diff(&cov, &param, &sigma);
            let expanded = sigma_diff_expanded(&model, &cov, &param, &sigma);
            assert!(
                (&direct - &expanded).norm() <= 1e-10 * (1.0 + direct.norm()),
                "seed {seed}"
            );
        }

        let batch = generate_batch(&model, 20, 0.0, DataMode::IidPairs, 1).unwrap();
        let cov = sample_covariances(&batch);
        let param = PolicyParam {
            v: random_matrix(&mut rng, 6, 3),
        };
        let diff = sigma_diff(&cov, &param, &DMatrix::identity(3, 3));
        assert_eq!(diff.amax(), 0.0);
        let expanded = sigma_diff_expanded(&model, &cov, &param, &DMatrix::identity(3, 3));
        assert_eq!(expanded.amax(), 0.0);
    }

    #[test]
    fn sigma_diff_shrinks_at_root_t_rate() {
        let (model, _) = benchmark();
        // Fixed V = [0; I]: the induced loop is the open-loop A, keeping the
        // cross terms dominant.
        let param = PolicyParam {
            v: stack_gain_identity(&DMatrix::zeros(3, 3)),
        };
        let sigma = DMatrix::identity(3, 3);
        let ts = [20usize, 80, 320];
        let mut means = Vec::new();
        for (ti, &t) in ts.iter().enumerate() {
            let mut acc = 0.0;
            for seed in 0..200u64 {
                let batch = generate_batch(
                    &model,
                    t,
                    0.7,
                    DataMode::IidPairs,
                    seed + 40_000 * ti as u64,
                )
                .unwrap();
                let cov = sample_covariances(&batch);
                acc += sigma_diff(&cov, &param, &sigma).norm();
            }
            means.push(acc / 200.0);
        }
        let xs: Vec<f64> = ts.iter().map(|&t| (t as f64).ln()).collect();
        let ys: Vec<f64> = means.iter().map(|v| v.ln()).collect();
        let xm = xs.iter().sum::<f64>() / 3.0;
        let ym = ys.iter().sum::<f64>() / 3.0;
        let slope = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - xm) * (y - ym))
            .sum::<f64>()
            / xs.iter().map(|x| (x - xm) * (x - xm)).sum::<f64>();
        assert!(
            (-0.7..=-0.3).contains(&slope),
            "slope {slope} outside -0.5 ± 0.2"
        );
    }

    #[test]
    fn sigma_diff_cross_terms_dominate_with_t() {
        let (model, _) = benchmark();
        let param = PolicyParam {
            v: stack_gain_identity(&DMatrix::zeros(3, 3)),
        };
        let sigma = DMatrix::identity(3, 3);
        let mut ratios = Vec::new();
        for &t in &[20usize, 320] {
            let mut acc = 0.0;
            for seed in 0..50u64 {
                let batch = generate_batch(&model, t, 0.7, DataMode::IidPairs, seed).unwrap();
                let cov = sample_covariances(&batch);
                let n = 3;
                let m = 3;
                let mut ba = DMatrix::zeros(n, m + n);
                ba.view_mut((0, 0), (n, m)).copy_from(model.b());
                ba.view_mut((0, m), (n, n)).copy_from(model.a());
                let vsv = &param.v * &sigma * param.v.transpose();
                let wv = &cov.w0_bar * &vsv;
                let quad = &wv * cov.w0_bar.transpose();
                let cross = &wv * &cov.phi * ba.transpose();
                let cross_sum = &cross + cross.transpose();
                acc += cross_sum.norm() / quad.norm();
            }
            ratios.push(acc / 50.0);
        }
        let growth = ratios[1] / ratios[0];
        // √(320/20) = 4.
        assert!(
            (2.0..=8.0).contains(&growth),
            "cross/quad growth {growth}, ratios {ratios:?}"
        );
    }

    #[test]
    fn noiseless_solve_recovers_true_optimal_gain() {
        let (model, penalties) = benchmark();
        let dare = solve_dare(&model, &penalties).unwrap();
        let batch = generate_batch(&model, 20, 0.0, DataMode::IidPairs, 11).unwrap();
        let cov = sample_covariances(&batch);

        let sol = solve_regularized(&cov, &penalties, 0.0).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let k = sol.gain.unwrap();
        let dev = (&k.matrix - &dare.gain.matrix).norm() / dare.gain.matrix.norm().max(1.0);
        assert!(dev <= 1e-3, "noiseless deviation {dev}");

        let ce = ce_gain(&cov, &penalties).unwrap();
        let kce = ce.gain.unwrap();
        let dev = (&kce.matrix - &dare.gain.matrix).norm() / dare.gain.matrix.norm().max(1.0);
        assert!(dev <= 1e-6, "certainty equivalence deviation {dev}");
    }

    #[test]
    fn sdp_at_lambda_zero_matches_certainty_equivalence() {
        let (model, penalties) = benchmark();
        for seed in 0..50 {
            let sigma_noise = if seed % 2 == 0 { 0.1 } else { 0.7 };
            let batch = generate_batch(&model, 20, sigma_noise, DataMode::IidPairs, seed).unwrap();
            let cov = sample_covariances(&batch);
            let sdp = solve_regularized(&cov, &penalties, 0.0).unwrap();
            let ce = ce_gain(&cov, &penalties).unwrap();
            if sdp.status != SolveStatus::Optimal || ce.status != SolveStatus::Optimal {
                continue;
            }
            let k_sdp = sdp.gain.unwrap();
            let k_ce = ce.gain.unwrap();
            let dev = (&k_sdp.matrix - &k_ce.matrix).norm() / k_ce.matrix.norm().max(1.0);
            assert!(dev <= 1e-3, "seed {seed}: equivalence gap {dev}");
        }
    }

    #[test]
    fn sdp_matches_cross_weighted_riccati_for_positive_lambda() {
        let (model, penalties) = benchmark();
        for (seed, lambda) in [(1u64, 0.01), (2, 0.1), (3, 1.0), (4, 0.1), (5, 1.0)] {
            let batch = generate_batch(&model, 20, 0.7, DataMode::IidPairs, seed).unwrap();
            let cov = sample_covariances(&batch);
            let sdp = solve_regularized(&cov, &penalties, lambda).unwrap();
            assert_eq!(sdp.status, SolveStatus::Optimal, "seed {seed}");
            let oracle =
                cross_weighted_riccati_oracle(&cov, &penalties, lambda).expect("oracle converged");
            let k = sdp.gain.unwrap();
            let dev = (&k.matrix - &oracle).norm() / oracle.norm().max(1.0);
            assert!(
                dev <= 1e-3,
                "seed {seed}, lambda {lambda}: dual-route gap {dev}"
            );
        }
    }

    #[test]
    fn negative_lambda_is_rejected() {
        let (model, penalties) = benchmark();
        let batch = generate_batch(&model, 20, 0.1, DataMode::IidPairs, 13).unwrap();
        let cov = sample_covariances(&batch);
        assert!(matches!(
            solve_regularized(&cov, &penalties, -0.5),
            Err(Error::NegativeLambda { .. })
        ));
    }

    #[test]
    fn optimal_certificates_satisfy_constraints() {
        let (model, penalties) = benchmark();
        for seed in 20..30 {
            let batch = generate_batch(&model, 20, 0.7, DataMode::IidPairs, seed).unwrap();
            let cov = sample_covariances(&batch);
            let lambda = 0.1;
            let prog = conic::assemble(&cov, &penalties, lambda).unwrap();
            let report = conic::solve(&prog);
            assert_eq!(report.status, SolveStatus::Optimal);
            let x = nalgebra::DVector::from_column_slice(&report.x);
            let min_eig = prog.min_block_eigenvalue(&x).unwrap();
            assert!(min_eig >= -1e-7, "LMI violation {min_eig}");

            let sigma = prog.layout.extract("Sigma", &report.x).unwrap();
            let eq_res = prog.equality_residual(&x);
            assert!(
                eq_res <= 1e-6 * (1.0 + sigma.norm()),
                "equality residual {eq_res}"
            );

            // Σ ⪰ I and the relaxed Lyapunov inequality at V = SΣ⁻¹.
            let min_sig = crate::control::min_symmetric_eigenvalue(&sigma).unwrap();
            assert!(min_sig >= 1.0 - 1e-7, "Σ eigenvalue {min_sig}");
            let s_var = prog.layout.extract("S", &report.x).unwrap();
            let v = sigma
                .clone()
                .cholesky()
                .unwrap()
                .solve(&s_var.transpose())
                .transpose();
            let xv = &cov.x1_bar * &v;
            let lyap = &xv * &sigma * xv.transpose() - &sigma + DMatrix::identity(3, 3);
            let max_lyap = crate::control::min_symmetric_eigenvalue(&(-lyap)).unwrap();
            assert!(
                max_lyap >= -1e-6,
                "Lyapunov relaxation violated by {max_lyap}"
            );

            // Recovered V also satisfies X̄0·V = I.
            let feas = &cov.x0_bar * &v - DMatrix::identity(3, 3);
            assert!(feas.norm() <= 1e-6, "X̄0V residual {}", feas.norm());
        }
    }

    #[test]
    fn objective_is_monotone_in_lambda() {
        let (model, penalties) = benchmark();
        let lambdas: Vec<f64> = (0..10).map(|k| 0.02 * k as f64).collect();
        for seed in 0..20 {
            let batch = generate_batch(&model, 20, 0.7, DataMode::IidPairs, seed).unwrap();
            let cov = sample_covariances(&batch);
            let mut last = f64::NEG_INFINITY;
            for &lambda in &lambdas {
                let sol = solve_regularized(&cov, &penalties, lambda).unwrap();
                assert_eq!(sol.status, SolveStatus::Optimal);
                let obj = sol.objective.unwrap();
                assert!(
                    obj >= last - 1e-6 * (1.0 + obj.abs()),
                    "seed {seed}: objective dropped from {last} to {obj} at λ={lambda}"
                );
                last = obj;
            }
        }
    }

    #[test]
    fn gain_is_continuous_as_lambda_vanishes() {
        let (model, penalties) = benchmark();
        for seed in 0..5 {
            let batch = generate_batch(&model, 20, 0.7, DataMode::IidPairs, seed).unwrap();
            let cov = sample_covariances(&batch);
            let k0 = solve_regularized(&cov, &penalties, 0.0)
                .unwrap()
                .gain
                .unwrap();
            let dev_at = |lambda: f64| {
                let k = solve_regularized(&cov, &penalties, lambda)
                    .unwrap()
                    .gain
                    .unwrap();
                (&k.matrix - &k0.matrix).norm()
            };
            let d_small = dev_at(1e-6);
            let d_mid = dev_at(1e-4);
            let d_large = dev_at(1e-2);
            assert!(d_small <= 1e-3, "λ=1e-6 deviation {d_small}");
            assert!(
                d_small <= d_large + 1e-6,
                "no shrinkage: {d_small} vs {d_large}"
            );
            assert!(d_mid <= d_large + 1e-6);
        }
    }

    #[test]
    fn regularization_rescues_unstable_trials() {
        // At σ = 1 the plain certainty-equivalence design fails on a visible
        // fraction of batches; λ = 1 keeps most of them stabilizing.
        let (model, penalties) = benchmark();
        let mut ce_stable = 0;
        let mut reg_stable = 0;
        let trials = 60u64;
        for seed in 0..trials {
            let batch = generate_batch(&model, 20, 1.0, DataMode::IidPairs, seed).unwrap();
            let cov = sample_covariances(&batch);
            if let Ok(sol) = ce_gain(&cov, &penalties) {
                if let Some(k) = sol.gain {
                    if is_stabilizing(&model, &k).unwrap() {
                        ce_stable += 1;
                    }
                }
            }
            let sol = solve_regularized(&cov, &penalties, 1.0).unwrap();
            if let Some(k) = sol.gain {
                if is_stabilizing(&model, &k).unwrap() {
                    reg_stable += 1;
                }
            }
        }
        assert!(
            reg_stable > ce_stable,
            "regularization did not help: {reg_stable} vs {ce_stable}"
        );
    }
}
