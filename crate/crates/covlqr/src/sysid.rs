//! Ordinary least-squares identification and its error statistics.
//!
//! The estimator is evaluated in covariance form, `[B̂, Â] = X̄1Φ⁻¹`, which
//! coincides exactly with the raw-data pseudoinverse form
//! `X1D0† = (X1D0ᵀ/t)(D0D0ᵀ/t)⁻¹`.

use nalgebra::DMatrix;

use crate::control::SystemModel;
use crate::data::{generate_batch, sample_covariances, DataMode, SampleCov};
use crate::{Error, Result};

/// Least-squares estimate of the system pair.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub a_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    /// Frobenius norm of the raw-data residual `X1 − [B̂, Â]D0`.
    pub residual: f64,
}

impl Estimate {
    /// Package the estimate as a [`SystemModel`].
    pub fn model(&self) -> Result<SystemModel> {
        SystemModel::new(self.a_hat.clone(), self.b_hat.clone())
    }

    /// The stacked estimate `[B̂, Â]`, inputs first.
    pub fn stacked(&self) -> DMatrix<f64> {
        let n = self.a_hat.nrows();
        let m = self.b_hat.ncols();
        let mut e = DMatrix::zeros(n, m + n);
        e.view_mut((0, 0), (n, m)).copy_from(&self.b_hat);
        e.view_mut((0, m), (n, n)).copy_from(&self.a_hat);
        e
    }
}

/// Factor Φ, failing loudly when excitation is insufficient.
pub(crate) fn phi_cholesky(
    cov: &SampleCov,
) -> Result<nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>> {
    cov.phi.clone().cholesky().ok_or(Error::SingularPhi)
}

/// Least-squares estimator `[B̂, Â] = X̄1Φ⁻¹`.
pub fn least_squares(cov: &SampleCov) -> Result<Estimate> {
    let chol = phi_cholesky(cov)?;
    let stacked = chol.solve(&cov.x1_bar.transpose()).transpose();
    let m = cov.input_dim();
    let n = cov.state_dim();
    let b_hat = stacked.view((0, 0), (n, m)).into_owned();
    let a_hat = stacked.view((0, m), (n, n)).into_owned();

    // ‖X1 − ÊD0‖²_F = t·(Tr(X1X1ᵀ)/t − ⟨Ê, X̄1⟩): the normal equations
    // collapse the cross and quadratic terms.
    let fit = stacked.dot(&cov.x1_bar);
    let residual_sq = (cov.t as f64) * (cov.x1_gram - fit);
    let residual = residual_sq.max(0.0).sqrt();

    Ok(Estimate {
        a_hat,
        b_hat,
        residual,
    })
}

/// Row-wise parameter-error covariance `Φ⁻¹/t` of the estimator.
pub fn estimator_covariance(cov: &SampleCov) -> Result<DMatrix<f64>> {
    let d = cov.phi.nrows();
    let chol = phi_cholesky(cov)?;
    let inv = chol.solve(&DMatrix::identity(d, d));
    Ok((&inv + inv.transpose()) * (0.5 / cov.t as f64))
}

/// Empirical check of the compressed-noise moments.
#[derive(Debug, Clone, Copy)]
pub struct Lemma1Report {
    /// Entrywise max of the empirical mean of `W̄0`.
    pub mean_abs_max: f64,
    /// Frobenius distance between the empirical covariance of the
    /// row-stacked `vec(W̄0)` and `σ²(Iₙ ⊗ Φ_t)/t`.
    pub cov_fro_dist: f64,
    /// The same distance relative to the predicted covariance norm.
    pub cov_fro_rel: f64,
}

/// Monte Carlo verification that `E[W̄0] = 0` and
/// `Var[vec(W̄0)] = σ²(Iₙ ⊗ Φ_t)/t` with `Φ_t = blkdiag(Iₘ, Iₙ)`.
///
/// Independent-pairs sampling only: there `Φ_t` is the identity by
/// construction. The vectorization stacks `W̄0` row by row so that the
/// Kronecker factor ordering matches the moment statement.
pub fn lemma1_moments(
    model: &SystemModel,
    t: usize,
    sigma: f64,
    n_seeds: u64,
) -> Result<Lemma1Report> {
    let n = model.state_dim();
    let m = model.input_dim();
    let dim = n * (m + n);

    let mut mean = vec![0.0f64; dim];
    let mut second = DMatrix::<f64>::zeros(dim, dim);
    let mut sample = vec![0.0f64; dim];
    for seed in 0..n_seeds {
        let batch = generate_batch(model, t, sigma, DataMode::IidPairs, seed)?;
        let w_bar = sample_covariances(&batch).w0_bar;
        for r in 0..n {
            for c in 0..(m + n) {
                sample[r * (m + n) + c] = w_bar[(r, c)];
            }
        }
        for i in 0..dim {
            mean[i] += sample[i];
            for j in i..dim {
                second[(i, j)] += sample[i] * sample[j];
            }
        }
    }
    let count = n_seeds as f64;
    for v in mean.iter_mut() {
        *v /= count;
    }
    let mut cov = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in i..dim {
            let c = second[(i, j)] / count - mean[i] * mean[j];
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }

    // Φ_t = blkdiag(I_m, I_n) = I_{m+n} under independent-pairs sampling.
    let predicted = DMatrix::identity(dim, dim) * (sigma * sigma / t as f64);
    let dist = (&cov - &predicted).norm();
    let pred_norm = predicted.norm();
    Ok(Lemma1Report {
        mean_abs_max: mean.iter().fold(0.0f64, |acc, v| acc.max(v.abs())),
        cov_fro_dist: dist,
        cov_fro_rel: if pred_norm > 0.0 {
            dist / pred_norm
        } else {
            dist
        },
    })
}
