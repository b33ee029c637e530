//! Density-ratio estimation of total correlation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Discriminator;
use crate::autodiff::{Adam, AdamConfig, Bound, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Shuffles each column of `z` independently across the batch, turning
/// samples of `q(z)` into samples of `∏_j q(z_j)`.
pub fn permute_dims<R: Rng + ?Sized>(z: &Tensor, rng: &mut R) -> Result<Tensor> {
    let (b, d) = (z.rows(), z.cols());
    if b < 2 {
        return Err(Error::Domain(format!("permute_dims needs a batch of at least 2, got {b}")));
    }
    let mut out = z.clone();
    let mut idx: Vec<usize> = (0..b).collect();
    let src = z.data();
    let dst = out.data_mut();
    for j in 0..d {
        idx.shuffle(rng);
        for (i, &k) in idx.iter().enumerate() {
            dst[i * d + j] = src[k * d + j];
        }
    }
    Ok(out)
}

/// Mean discriminator logit over the batch.
pub fn tc_proxy(disc: &Discriminator, z: &Tensor) -> f64 {
    let l = disc.logits(z);
    l.iter().sum::<f64>() / l.len() as f64
}

/// Binary cross-entropy with joint samples labelled 1 and permuted samples
/// labelled 0, averaged over all examples.
pub(crate) fn discriminator_loss_var(g: &mut Graph, disc: &Discriminator, p: &Bound, z_joint: Var, z_perm: Var) -> Var {
    let lj = disc.forward(g, p, z_joint);
    let lp = disc.forward(g, p, z_perm);
    let n = (g.value(lj).len() + g.value(lp).len()) as f64;
    let nj = g.neg(lj);
    let a = g.softplus(nj);
    let b = g.softplus(lp);
    let sa = g.sum(a);
    let sb = g.sum(b);
    let s = g.add(sa, sb);
    g.scale(s, 1.0 / n)
}

pub fn discriminator_loss(disc: &Discriminator, z_joint: &Tensor, z_perm: &Tensor) -> f64 {
    let mut g = Graph::new();
    let p = disc.bind(&mut g, false);
    let zj = g.constant(z_joint.clone());
    let zp = g.constant(z_perm.clone());
    let loss = discriminator_loss_var(&mut g, disc, &p, zj, zp);
    g.value(loss).item()
}

/// Loss and gradients for the discriminator's parameters.
pub fn discriminator_grads(disc: &Discriminator, z_joint: &Tensor, z_perm: &Tensor) -> (f64, Vec<Tensor>) {
    let mut g = Graph::new();
    let p = disc.bind(&mut g, true);
    let zj = g.constant(z_joint.clone());
    let zp = g.constant(z_perm.clone());
    let loss = discriminator_loss_var(&mut g, disc, &p, zj, zp);
    let mut grads = g.backward(loss);
    (g.value(loss).item(), p.grads(&mut grads, &disc.params))
}

/// Fits a fresh discriminator to samples and reads off the mean logit on
/// held-out joint samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TcEstimator {
    pub width: usize,
    pub depth: usize,
    pub steps: usize,
    /// Joint samples per training step; the permuted half is drawn separately.
    pub batch: usize,
    pub lr: f64,
    pub eval_batch: usize,
    pub eval_batches: usize,
    pub seed: u64,
}

impl Default for TcEstimator {
    fn default() -> Self {
        Self { width: 64, depth: 3, steps: 3000, batch: 512, lr: 1e-3, eval_batch: 4096, eval_batches: 8, seed: 0 }
    }
}

impl TcEstimator {
    /// `sample(n, rng)` must return `n` fresh rows of `q(z)`.
    pub fn estimate<F>(&self, dim: usize, mut sample: F) -> Result<f64>
    where
        F: FnMut(usize, &mut ChaCha8Rng) -> Tensor,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut disc = Discriminator::new(dim, self.width, self.depth, rng.random());
        let mut opt = Adam::new(&disc.params, AdamConfig { lr: self.lr, ..AdamConfig::default() });
        for step in 0..self.steps {
            // linear decay to a tenth of the initial rate
            opt.config.lr = self.lr * (1.0 - 0.9 * step as f64 / self.steps as f64);
            let zj = sample(self.batch, &mut rng);
            let other = sample(self.batch, &mut rng);
            let zp = permute_dims(&other, &mut rng)?;
            let (loss, grads) = discriminator_grads(&disc, &zj, &zp);
            if !loss.is_finite() {
                return Err(Error::Domain("discriminator loss diverged".into()));
            }
            opt.step(&mut disc.params, &grads);
        }
        let total: f64 = (0..self.eval_batches).map(|_| tc_proxy(&disc, &sample(self.eval_batch, &mut rng))).sum();
        Ok(total / self.eval_batches as f64)
    }

    /// Estimate from a fixed pool of samples, resampled with replacement.
    pub fn estimate_from_pool(&self, z: &Tensor) -> Result<f64> {
        let n = z.rows();
        if n < 2 {
            return Err(Error::Domain("need at least two samples".into()));
        }
        self.estimate(z.cols(), |b, rng| {
            let idx: Vec<usize> = (0..b).map(|_| rng.random_range(0..n)).collect();
            z.select_rows(&idx)
        })
    }
}
