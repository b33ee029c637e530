//! Encoder/decoder networks, latent priors, the density-ratio discriminator
//! and the training objectives built on them.

mod net;
mod objective;
mod prior;
mod tc;

pub use net::{Architecture, Discriminator, EncoderDecoder, ImageShape, DISC_LEAK, LOG_STD_RANGE};
pub use objective::{
    evaluate, objective_bfvae0, objective_bfvae1, objective_bfvae2, objective_fvae, objective_vae, Evaluation,
    LossBreakdown, Objective, Regularizer,
};
pub use prior::{corrected_prior_report, Prior, PriorSpec};
pub use tc::{discriminator_grads, discriminator_loss, permute_dims, tc_proxy, TcEstimator};

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Graph, ParamStore, Tensor};
use crate::dist::DiagGaussian;
use crate::error::{Error, Result};

/// Batch of diagonal-Gaussian posteriors, one row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mean: Tensor,
    pub std: Tensor,
}

impl GaussianPosterior {
    pub fn batch(&self) -> usize {
        self.mean.rows()
    }

    pub fn dim(&self) -> usize {
        self.mean.cols()
    }

    pub fn row(&self, i: usize) -> Result<DiagGaussian> {
        DiagGaussian::new(self.mean.row(i).to_vec(), self.std.row(i).to_vec())
    }
}

/// VAE-side state: networks and prior, sharing one parameter store.
#[derive(Debug, Clone)]
pub struct Model {
    pub params: ParamStore,
    pub net: EncoderDecoder,
    pub prior: Prior,
}

impl Model {
    pub fn new(
        image: ImageShape,
        latent_dim: usize,
        architecture: Architecture,
        prior: &PriorSpec,
        seed: u64,
    ) -> Result<Self> {
        if let Some(d) = prior.dim() {
            if d != latent_dim {
                return Err(Error::Config(format!("{} prior has {d} dims, latent_dim is {latent_dim}", prior.name())));
            }
        }
        let mut params = ParamStore::new();
        let net = EncoderDecoder::new(&mut params, image, latent_dim, architecture, seed)?;
        let prior = Prior::register(prior, &mut params)?;
        Ok(Self { params, net, prior })
    }

    pub fn latent_dim(&self) -> usize {
        self.net.latent_dim()
    }

    pub fn image(&self) -> ImageShape {
        self.net.image()
    }

    pub fn prior_spec(&self) -> Result<PriorSpec> {
        self.prior.spec(&self.params)
    }

    /// Checks that `x` is a `B × pixels` batch with entries in `[0,1]`.
    pub fn check_observations(&self, x: &Tensor) -> Result<()> {
        let p = self.image().len();
        if x.shape().len() != 2 || x.cols() != p {
            return Err(crate::error::shape(&vec![x.rows(), p], x.shape()));
        }
        if let Some(v) = x.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("observation value {v} outside [0, 1]")));
        }
        Ok(())
    }

    /// What the discriminator sees for latent codes `z`: `r ∘ z` under the
    /// relevance prior, `z` otherwise.
    pub fn disc_view(&self, z: &Tensor) -> Tensor {
        match self.prior {
            Prior::Relevance { r, .. } => {
                let r = self.params.get(r).data();
                let d = r.len();
                let mut out = z.clone();
                for (i, v) in out.data_mut().iter_mut().enumerate() {
                    *v *= r[i % d];
                }
                out
            }
            _ => z.clone(),
        }
    }

    /// Decodes latent codes to per-pixel Bernoulli means.
    pub fn decode_probs(&self, z: &Tensor) -> Tensor {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let zv = g.constant(z.clone());
        let logits = self.net.decode(&mut g, &p, zv);
        let probs = g.sigmoid(logits);
        g.value(probs).clone()
    }
}

/// Posterior means and standard deviations for a batch of observations.
pub fn encode(model: &Model, x: &Tensor) -> Result<GaussianPosterior> {
    model.check_observations(x)?;
    let mut g = Graph::new();
    let p = model.params.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let (m, ls) = model.net.encode(&mut g, &p, xv);
    Ok(GaussianPosterior { mean: g.value(m).clone(), std: g.value(ls).map(f64::exp) })
}

/// Standard-normal noise of shape `rows × cols`.
pub fn standard_noise(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| StandardNormal.sample(&mut rng)).collect())
}

/// `z = m + s ⊙ ξ`.
pub fn reparam_sample(q: &GaussianPosterior, noise: &Tensor) -> Result<Tensor> {
    if noise.shape() != q.mean.shape() {
        return Err(crate::error::shape(&q.mean.shape().to_vec(), noise.shape()));
    }
    let data = q
        .mean
        .data()
        .iter()
        .zip(q.std.data())
        .zip(noise.data())
        .map(|((m, s), e)| m + s * e)
        .collect();
    Ok(Tensor::new(q.mean.shape().to_vec(), data))
}

/// Batch-mean of the summed per-pixel Bernoulli cross-entropy of `x` under
/// the decoder at `z`.
pub fn rec_loss(model: &Model, x: &Tensor, z: &Tensor) -> Result<f64> {
    model.check_observations(x)?;
    if z.shape() != [x.rows(), model.latent_dim()] {
        return Err(crate::error::shape(&vec![x.rows(), model.latent_dim()], z.shape()));
    }
    let mut g = Graph::new();
    let p = model.params.bind(&mut g, false);
    let zv = g.constant(z.clone());
    let logits = model.net.decode(&mut g, &p, zv);
    let rows = g.bce_logits_rows(logits, Rc::new(x.clone()));
    let m = g.mean(rows);
    Ok(g.value(m).item())
}

#[cfg(test)]
mod tests;
