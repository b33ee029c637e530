//! The training loop.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::checkpoint::{build, Checkpoint};
use super::config::RunConfig;
use crate::autodiff::{Adam, AdamConfig, Tensor};
use crate::data::{sample_uniform, FactorDataset};
use crate::error::{Error, Result};
use crate::model::{discriminator_grads, encode, evaluate, permute_dims, reparam_sample, LossBreakdown, Model};

/// Mean of the per-step losses over one logging interval.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRecord {
    /// Last step of the interval (1-based).
    pub step: usize,
    pub loss: LossBreakdown,
    /// Discriminator cross-entropy; 0 for variants without one.
    pub disc_loss: f64,
}

impl HistoryRecord {
    /// `step=… rec=… kl=… … total=… disc=…`
    pub fn to_line(&self) -> String {
        let mut s = format!("step={}", self.step);
        for (k, v) in self.loss.fields() {
            let _ = write!(s, " {k}={v:.9e}");
        }
        let _ = write!(s, " disc={:.9e}", self.disc_loss);
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<HistoryRecord>,
}

/// Running sums of breakdown fields.
struct Accumulator {
    sum: Option<LossBreakdown>,
    disc: f64,
    n: usize,
}

impl Accumulator {
    fn new() -> Self {
        Self { sum: None, disc: 0.0, n: 0 }
    }

    fn add(&mut self, b: &LossBreakdown, disc: f64) {
        match &mut self.sum {
            None => self.sum = Some(b.clone()),
            Some(s) => {
                s.rec += b.rec;
                s.kl += b.kl;
                s.tc_proxy += b.tc_proxy;
                s.hyper_kl += b.hyper_kl;
                s.total += b.total;
                for (r, o) in s.regularizers.iter_mut().zip(&b.regularizers) {
                    r.value += o.value;
                }
            }
        }
        self.disc += disc;
        self.n += 1;
    }

    fn take(&mut self, step: usize) -> Option<HistoryRecord> {
        let mut loss = self.sum.take()?;
        let n = self.n as f64;
        loss.rec /= n;
        loss.kl /= n;
        loss.tc_proxy /= n;
        loss.hyper_kl /= n;
        loss.total /= n;
        for r in &mut loss.regularizers {
            r.value /= n;
        }
        let rec = HistoryRecord { step, loss, disc_loss: self.disc / n };
        self.disc = 0.0;
        self.n = 0;
        Some(rec)
    }
}

fn noise(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect())
}

/// Disc-view latent samples for a fresh batch.
fn disc_samples(model: &Model, ds: &FactorDataset, batch: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let idx = sample_uniform(ds, batch, rng);
    let q = encode(model, &ds.batch(&idx))?;
    let z = reparam_sample(&q, &noise(batch, model.latent_dim(), rng))?;
    Ok(model.disc_view(&z))
}

fn write_history(path: &Path, history: &[HistoryRecord]) -> Result<()> {
    let text: String = history.iter().map(|h| h.to_line() + "\n").collect();
    std::fs::write(path, text)?;
    Ok(())
}

fn nonfinite_params(model: &Model, grads: &[Tensor]) -> Vec<String> {
    model
        .params
        .iter()
        .zip(grads)
        .filter(|((_, t), g)| !t.all_finite() || !g.all_finite())
        .map(|((n, _), _)| n.to_string())
        .collect()
}

/// Trains `config` on `ds`.
///
/// Each step updates the encoder, decoder and prior parameters with one
/// optimizer on a batch, then updates the discriminator (if any) with its
/// own optimizer, contrasting codes of that batch with dimension-wise
/// permuted codes of an independent batch. When an output directory is
/// configured (`out_dir`; apply [`RunConfig::with_env_overrides`] first to
/// honour the environment), `config.txt`, `history.txt` and `checkpoint.npz` are written
/// there. A non-finite loss or gradient aborts the run; the last finite
/// state goes to `last_good.npz` and the offending step to `nan_dump.txt`.
pub fn train(config: &RunConfig, ds: &FactorDataset) -> Result<TrainOutcome> {
    config.validate()?;
    RunConfig::check_device()?;
    if config.latent_dim < ds.num_factors() {
        return Err(Error::Config(format!(
            "latent_dim {} is below the {} factors of {}",
            config.latent_dim,
            ds.num_factors(),
            ds.name
        )));
    }
    let out_dir = config.out_dir.clone();
    if let Some(dir) = &out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.txt"), config.to_text())?;
    }

    let (mut model, mut disc) = build(config, ds.image())?;
    let objective = config.objective(ds.len());
    let adam = |lr| AdamConfig { lr, beta1: config.adam_beta1, beta2: config.adam_beta2, ..Default::default() };
    let mut opt = Adam::new(&model.params, adam(config.lr));
    let mut disc_opt = disc.as_ref().map(|d| Adam::new(&d.params, adam(config.disc_lr)));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
    let (b, d) = (config.batch_size, config.latent_dim);

    let mut history = Vec::new();
    let mut acc = Accumulator::new();
    for step in 1..=config.steps {
        let idx = sample_uniform(ds, b, &mut rng);
        let x = ds.batch(&idx);
        let eval = evaluate(&objective, &model, disc.as_ref(), &x, &noise(b, d, &mut rng))?;
        let grads = eval.gradients(&model);
        let bad = nonfinite_params(&model, &grads);
        if !eval.breakdown.is_finite() || !bad.is_empty() {
            let detail = format!("{} ; non-finite gradients: {}", eval.breakdown, bad.join(","));
            if let Some(dir) = &out_dir {
                let ckpt = Checkpoint { config: config.clone(), model, disc, step: step - 1 };
                ckpt.save(dir.join("last_good.npz"))?;
                std::fs::write(dir.join("nan_dump.txt"), format!("step={step}\n{detail}\n"))?;
                write_history(&dir.join("history.txt"), &history)?;
            }
            return Err(Error::NonFinite { step, detail });
        }

        let mut disc_loss = 0.0;
        // pairs for the discriminator, drawn before the model moves
        let pairs = match &disc {
            Some(_) => {
                let mut v = Vec::with_capacity(config.disc_steps);
                let joint = model.disc_view(eval.z_value());
                v.push((joint, disc_samples(&model, ds, b, &mut rng)?));
                for _ in 1..config.disc_steps {
                    v.push((disc_samples(&model, ds, b, &mut rng)?, disc_samples(&model, ds, b, &mut rng)?));
                }
                v
            }
            None => Vec::new(),
        };

        opt.step(&mut model.params, &grads);
        model.prior.project(&mut model.params);

        if let (Some(dn), Some(dopt)) = (disc.as_mut(), disc_opt.as_mut()) {
            for (joint, other) in &pairs {
                let perm = permute_dims(other, &mut rng)?;
                let (l, g) = discriminator_grads(dn, joint, &perm);
                if !l.is_finite() || g.iter().any(|t| !t.all_finite()) {
                    return Err(Error::NonFinite { step, detail: format!("discriminator loss {l}") });
                }
                dopt.step(&mut dn.params, &g);
                disc_loss += l / pairs.len() as f64;
            }
        }

        acc.add(&eval.breakdown, disc_loss);
        if step % config.log_every == 0 || step == config.steps {
            if let Some(rec) = acc.take(step) {
                log::info!("{}", rec.to_line());
                history.push(rec);
            }
        }
    }

    let checkpoint = Checkpoint { config: config.clone(), model, disc, step: config.steps };
    if let Some(dir) = &out_dir {
        write_history(&dir.join("history.txt"), &history)?;
        checkpoint.save(dir.join("checkpoint.npz"))?;
    }
    Ok(TrainOutcome { checkpoint, history })
}

/// Parses a file written by [`train`]'s history log.
pub fn parse_history(text: &str) -> Result<Vec<(usize, Vec<(String, f64)>)>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let mut step = None;
            let mut fields = Vec::new();
            for item in line.split_whitespace() {
                let (k, v) = item.split_once('=').ok_or_else(|| Error::Config(format!("bad history item {item:?}")))?;
                if k == "step" {
                    step = Some(v.parse().map_err(|_| Error::Config(format!("bad step {v:?}")))?);
                } else {
                    fields.push((k.to_string(), v.parse().map_err(|_| Error::Config(format!("bad value {v:?}")))?));
                }
            }
            Ok((step.ok_or_else(|| Error::Config("history line without step".into()))?, fields))
        })
        .collect()
}
