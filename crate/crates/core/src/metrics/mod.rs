//! Disentanglement metrics and aggregate-posterior diagnostics.
//!
//! Metric I and II are vote-based: each vote holds one factor fixed (or
//! varies it alone), finds the latent whose normalized variance is smallest
//! (or largest), and a majority-vote classifier maps latents to factors.
//! Metric III is the regression-based disentanglement / completeness /
//! informativeness triple.

mod dci;
mod diagnostics;
mod forest;
mod lasso;
mod report;
mod votes;

pub use dci::{dci_from_importance, metric_three, DciConfig, DciResult, Regressor};
pub use diagnostics::{
    aggregate_posterior_diagnostics, diagnostics_from_samples, prior_marginals, Marginal, PosteriorDiagnostics,
    TcMethod, GAUSSIAN_FIT_MAX_DIM,
};
pub use report::Report;
pub use votes::{metric_one, metric_two, MetricResult, VoteConfig, VoteTable};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::data::FactorDataset;
use crate::error::{Error, Result};
use crate::model::{encode, Model};

/// Anything that maps dataset rows to latent codes.
pub trait CodeEncoder {
    fn latent_dim(&self) -> usize;

    /// `rows.len() × d` codes for the given dataset rows.
    fn codes(&self, ds: &FactorDataset, rows: &[usize]) -> Result<Tensor>;
}

const ENCODE_CHUNK: usize = 256;

impl CodeEncoder for Model {
    fn latent_dim(&self) -> usize {
        Model::latent_dim(self)
    }

    /// Posterior means.
    fn codes(&self, ds: &FactorDataset, rows: &[usize]) -> Result<Tensor> {
        let d = Model::latent_dim(self);
        let mut data = Vec::with_capacity(rows.len() * d);
        for chunk in rows.chunks(ENCODE_CHUNK) {
            let q = encode(self, &ds.batch(chunk))?;
            data.extend_from_slice(q.mean.data());
        }
        Ok(Tensor::matrix(rows.len(), d, data))
    }
}

/// Wraps a closure as an encoder, e.g. to score hand-built codes.
pub struct FnEncoder<F> {
    dim: usize,
    f: F,
}

impl<F> FnEncoder<F>
where
    F: Fn(&FactorDataset, &[usize]) -> Result<Tensor>,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> CodeEncoder for FnEncoder<F>
where
    F: Fn(&FactorDataset, &[usize]) -> Result<Tensor>,
{
    fn latent_dim(&self) -> usize {
        self.dim
    }

    fn codes(&self, ds: &FactorDataset, rows: &[usize]) -> Result<Tensor> {
        let z = (self.f)(ds, rows)?;
        if z.shape() != [rows.len(), self.dim] {
            return Err(crate::error::shape(&[rows.len(), self.dim], z.shape()));
        }
        Ok(z)
    }
}

/// Encoded means for a set of observations with their per-dimension spread.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCodes {
    /// `N × d`.
    pub z: Tensor,
    /// Empirical standard deviation of each column of `z`.
    pub z_std: Vec<f64>,
}

impl LatentCodes {
    pub fn new(z: Tensor) -> Result<Self> {
        if z.shape().len() != 2 || z.rows() == 0 {
            return Err(Error::Domain("codes must be a non-empty N x d matrix".into()));
        }
        if !z.all_finite() {
            return Err(Error::Domain("codes contain non-finite values".into()));
        }
        let z_std = column_moments(&z).into_iter().map(|(_, v)| v.sqrt()).collect();
        Ok(Self { z, z_std })
    }

    /// Codes for every row of `ds`, or for `max_rows` rows drawn without
    /// replacement when the dataset is larger.
    pub fn from_encoder(enc: &dyn CodeEncoder, ds: &FactorDataset, max_rows: usize, seed: u64) -> Result<Self> {
        let rows = subsample(ds.len(), max_rows, seed);
        Self::new(enc.codes(ds, &rows)?)
    }

    /// Codes as in [`LatentCodes::from_encoder`] together with the factor
    /// values of the same rows (`N × K`), ready for [`metric_three`].
    pub fn with_factors(
        enc: &dyn CodeEncoder,
        ds: &FactorDataset,
        max_rows: usize,
        seed: u64,
    ) -> Result<(Self, Tensor)> {
        let rows = subsample(ds.len(), max_rows, seed);
        let k = ds.num_factors();
        let f = rows.iter().flat_map(|&i| ds.factor_values(i).to_vec()).collect();
        Ok((Self::new(enc.codes(ds, &rows)?)?, Tensor::matrix(rows.len(), k, f)))
    }

    pub fn len(&self) -> usize {
        self.z.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.z.cols()
    }
}

/// Sorted row indices: all of `0..n`, or a seeded sample of `max` of them.
pub(crate) fn subsample(n: usize, max: usize, seed: u64) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = rand::seq::index::sample(&mut rng, n, max).into_vec();
    rows.sort_unstable();
    rows
}

/// Per-column (mean, population variance).
pub(crate) fn column_moments(z: &Tensor) -> Vec<(f64, f64)> {
    let (n, d) = (z.rows(), z.cols());
    let mut out = vec![(0.0, 0.0); d];
    for j in 0..d {
        let mean = (0..n).map(|i| z.data()[i * d + j]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (z.data()[i * d + j] - mean).powi(2)).sum::<f64>() / n as f64;
        out[j] = (mean, var);
    }
    out
}
