//! Estimates of the aggregate-posterior decomposition
//! `KL(q(z) ‖ p(z)) = TC(q) + Σ_j KL(q(z_j) ‖ p(z_j))` for factorized priors.
//!
//! `q(z)` is summarized by a Gaussian fit to samples. Per-dimension KLs use
//! the fitted marginals. TC is the analytic TC of the fit for up to
//! [`GAUSSIAN_FIT_MAX_DIM`] latents and a discriminator estimate beyond.
//! `kl_z` is computed separately from the fitted joint entropy and the
//! sample average of `log p(z)`, so the reported gap measures how far the
//! estimators disagree. All three are estimates, not ground truth.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::column_moments;
use crate::autodiff::Tensor;
use crate::data::{sample_uniform, FactorDataset};
use crate::dist::{normal_logpdf, oracle::simpson, StudentT};
use crate::error::{Error, Result};
use crate::model::{corrected_prior_report, encode, reparam_sample, standard_noise, Model, PriorSpec, TcEstimator};

/// Largest latent dimension for which TC comes from the Gaussian fit.
pub const GAUSSIAN_FIT_MAX_DIM: usize = 4;

/// One factor of a factorized prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Marginal {
    Normal { mean: f64, std: f64 },
    StudentT(StudentT),
}

impl Marginal {
    pub fn logpdf(&self, z: f64) -> f64 {
        match self {
            Marginal::Normal { mean, std } => normal_logpdf(z, *mean, *std),
            Marginal::StudentT(t) => t.logpdf(z),
        }
    }

    /// `E[log p(z)]` for `z ~ N(mu, sigma²)`.
    pub fn expected_logpdf(&self, mu: f64, sigma: f64) -> f64 {
        match self {
            Marginal::Normal { mean, std } => {
                -0.5 * (2.0 * PI * std * std).ln() - ((mu - mean).powi(2) + sigma * sigma) / (2.0 * std * std)
            }
            Marginal::StudentT(t) => simpson(
                |z| normal_logpdf(z, mu, sigma).exp() * t.logpdf(z),
                mu - 12.0 * sigma,
                mu + 12.0 * sigma,
                4000,
            ),
        }
    }
}

/// Per-dimension marginals of a factorized prior. Gamma-hierarchical priors
/// contribute their corrected Student-t marginals.
pub fn prior_marginals(spec: &PriorSpec, dim: usize) -> Result<Vec<Marginal>> {
    match spec {
        PriorSpec::StdNormal => Ok(vec![Marginal::Normal { mean: 0.0, std: 1.0 }; dim]),
        PriorSpec::Precision { alpha } => {
            Ok(alpha.iter().map(|a| Marginal::Normal { mean: 0.0, std: a.powf(-0.5) }).collect())
        }
        PriorSpec::GammaHier { .. } | PriorSpec::Relevance { .. } => {
            Ok(corrected_prior_report(spec)?.into_iter().map(Marginal::StudentT).collect())
        }
        PriorSpec::Mog { .. } => {
            Err(Error::NotApplicable("a mixture prior does not factorize over latent dimensions".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TcMethod {
    GaussianFit,
    Discriminator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDiagnostics {
    pub tc: f64,
    pub tc_method: TcMethod,
    pub per_dim_kl: Vec<f64>,
    pub kl_z: f64,
    pub samples: usize,
}

impl PosteriorDiagnostics {
    /// `kl_z − tc − Σ_j per_dim_kl_j`.
    pub fn gap(&self) -> f64 {
        self.kl_z - self.tc - self.per_dim_kl.iter().sum::<f64>()
    }

    pub fn identity_holds(&self, tol: f64) -> bool {
        self.gap().abs() <= tol
    }
}

/// Diagnostics from samples `z` (`n × d`) of `q(z)`.
pub fn diagnostics_from_samples(z: &Tensor, marginals: &[Marginal], tc: &TcEstimator) -> Result<PosteriorDiagnostics> {
    let (n, d) = (z.rows(), z.cols());
    if marginals.len() != d {
        return Err(crate::error::shape(&[d], &[marginals.len()]));
    }
    if n <= d {
        return Err(Error::Domain(format!("{n} samples cannot fit a {d}-dimensional Gaussian")));
    }
    if !z.all_finite() {
        return Err(Error::Domain("samples contain non-finite values".into()));
    }
    let moments = column_moments(z);
    let cov = DMatrix::from_fn(d, d, |a, b| {
        let (ma, mb) = (moments[a].0, moments[b].0);
        (0..n).map(|i| (z.data()[i * d + a] - ma) * (z.data()[i * d + b] - mb)).sum::<f64>() / n as f64
    });
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain("sample covariance is singular".into()))?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let log_vars: Vec<f64> = (0..d).map(|j| cov[(j, j)].ln()).collect();

    let entropy_1d = |log_var: f64| 0.5 * (1.0 + (2.0 * PI).ln() + log_var);
    let per_dim_kl: Vec<f64> = (0..d)
        .map(|j| -entropy_1d(log_vars[j]) - marginals[j].expected_logpdf(moments[j].0, cov[(j, j)].sqrt()))
        .collect();
    let joint_entropy = 0.5 * (d as f64 * (1.0 + (2.0 * PI).ln()) + log_det);
    let cross = (0..n)
        .map(|i| z.row(i).iter().zip(marginals).map(|(v, m)| m.logpdf(*v)).sum::<f64>())
        .sum::<f64>()
        / n as f64;
    let kl_z = -joint_entropy - cross;

    let (tc_value, tc_method) = if d <= GAUSSIAN_FIT_MAX_DIM {
        (0.5 * (log_vars.iter().sum::<f64>() - log_det), TcMethod::GaussianFit)
    } else {
        (tc.estimate_from_pool(z)?, TcMethod::Discriminator)
    };
    Ok(PosteriorDiagnostics { tc: tc_value, tc_method, per_dim_kl, kl_z, samples: n })
}

/// Draws `n_samples` rows uniformly from `ds`, samples `z ~ q(z|x)` for
/// each, and runs [`diagnostics_from_samples`] against the model's prior.
pub fn aggregate_posterior_diagnostics(
    model: &Model,
    ds: &FactorDataset,
    n_samples: usize,
    seed: u64,
) -> Result<PosteriorDiagnostics> {
    let d = model.latent_dim();
    let marginals = prior_marginals(&model.prior_spec()?, d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = sample_uniform(ds, n_samples, &mut rng);
    let mut data = Vec::with_capacity(n_samples * d);
    for chunk in rows.chunks(256) {
        let q = encode(model, &ds.batch(chunk))?;
        let z = reparam_sample(&q, &standard_noise(chunk.len(), d, rng.random()))?;
        data.extend_from_slice(z.data());
    }
    let z = Tensor::matrix(n_samples, d, data);
    diagnostics_from_samples(&z, &marginals, &TcEstimator { seed: rng.random(), ..TcEstimator::default() })
}
