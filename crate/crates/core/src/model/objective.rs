//! Training objectives and their per-term breakdown.

use std::fmt;
use std::rc::Rc;

use super::prior::{HyperVars, PriorVars};
use super::{Discriminator, Model, Prior};
use crate::autodiff::{Bound, Graph, Tensor, Var};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Objective variant with its trade-off weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// `rec + β·KL`; β = 1 is the plain VAE.
    Vae { beta: f64 },
    /// `rec + KL + γ·TC` with a standard-normal or mixture prior.
    FactorVae { gamma: f64 },
    /// Learnable precisions with `η Σ (1/α − 1)²`.
    BfVae0 { gamma: f64, eta: f64 },
    /// Gamma hyper-prior; `hyper_kl_scale` multiplies `KL(q(α) ‖ p(α))`.
    BfVae1 { gamma: f64, hyper_kl_scale: f64 },
    /// Relevance-shaped hyper-prior, masked TC, L1 and entropy penalties on r.
    BfVae2 { gamma: f64, eta_s: f64, eta_h: f64, hyper_kl_scale: f64 },
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Objective::Vae { .. } => "vae",
            Objective::FactorVae { .. } => "fvae",
            Objective::BfVae0 { .. } => "bfvae0",
            Objective::BfVae1 { .. } => "bfvae1",
            Objective::BfVae2 { .. } => "bfvae2",
        }
    }

    pub fn gamma(&self) -> f64 {
        match *self {
            Objective::Vae { .. } => 0.0,
            Objective::FactorVae { gamma }
            | Objective::BfVae0 { gamma, .. }
            | Objective::BfVae1 { gamma, .. }
            | Objective::BfVae2 { gamma, .. } => gamma,
        }
    }

    pub fn uses_discriminator(&self) -> bool {
        !matches!(self, Objective::Vae { .. })
    }

    fn check(&self, prior: &Prior, has_disc: bool) -> Result<()> {
        let ok = matches!(
            (self, prior),
            (Objective::Vae { .. }, Prior::StdNormal)
                | (Objective::FactorVae { .. }, Prior::StdNormal | Prior::Mog { .. })
                | (Objective::BfVae0 { .. }, Prior::Precision { .. })
                | (Objective::BfVae1 { .. }, Prior::GammaHier { .. })
                | (Objective::BfVae2 { .. }, Prior::Relevance { .. })
        );
        if !ok {
            return Err(Error::Prior(format!("objective {} cannot use a {} prior", self.name(), prior.name())));
        }
        if self.uses_discriminator() && !has_disc {
            return Err(Error::Config(format!("objective {} needs a discriminator", self.name())));
        }
        let weights: &[f64] = match self {
            Objective::Vae { beta } => &[*beta],
            Objective::FactorVae { gamma } => &[*gamma],
            Objective::BfVae0 { gamma, eta } => &[*gamma, *eta],
            Objective::BfVae1 { gamma, hyper_kl_scale } => &[*gamma, *hyper_kl_scale],
            Objective::BfVae2 { gamma, eta_s, eta_h, hyper_kl_scale } => &[*gamma, *eta_s, *eta_h, *hyper_kl_scale],
        };
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config(format!("objective {} has a negative or non-finite weight", self.name())));
        }
        Ok(())
    }
}

/// One named penalty: raw value and the weight it enters the total with.
#[derive(Debug, Clone, PartialEq)]
pub struct Regularizer {
    pub name: &'static str,
    pub value: f64,
    pub weight: f64,
}

/// Per-term values of an objective on one batch.
///
/// `kl`, `tc_proxy` and `hyper_kl` are unweighted; the weights they enter
/// `total` with are carried alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub rec: f64,
    pub kl: f64,
    pub tc_proxy: f64,
    pub hyper_kl: f64,
    pub regularizers: Vec<Regularizer>,
    pub kl_weight: f64,
    pub tc_weight: f64,
    pub hyper_kl_weight: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Recomputes the total from the parts.
    pub fn weighted_sum(&self) -> f64 {
        self.rec
            + self.kl_weight * self.kl
            + self.tc_weight * self.tc_proxy
            + self.hyper_kl_weight * self.hyper_kl
            + self.regularizers.iter().map(|r| r.weight * r.value).sum::<f64>()
    }

    pub fn regularizer(&self, name: &str) -> Option<f64> {
        self.regularizers.iter().find(|r| r.name == name).map(|r| r.value)
    }

    /// `(name, value)` pairs in a fixed order, for logs and tables.
    pub fn fields(&self) -> Vec<(String, f64)> {
        let mut out = vec![
            ("rec".to_string(), self.rec),
            ("kl".to_string(), self.kl),
            ("tc_proxy".to_string(), self.tc_proxy),
            ("hyper_kl".to_string(), self.hyper_kl),
        ];
        out.extend(self.regularizers.iter().map(|r| (r.name.to_string(), r.value)));
        out.push(("total".to_string(), self.total));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.fields().iter().all(|(_, v)| v.is_finite())
    }
}

impl fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.fields().iter().map(|(k, v)| format!("{k}={v:.6}")).collect();
        f.write_str(&parts.join(" "))
    }
}

/// A recorded forward pass of an objective, ready for backpropagation.
pub struct Evaluation {
    pub graph: Graph,
    pub bound: Bound,
    pub total: Var,
    /// Reparametrized latent sample.
    pub z: Var,
    /// Input the discriminator saw, when the objective has a TC term.
    pub disc_input: Option<Var>,
    pub breakdown: LossBreakdown,
}

impl Evaluation {
    /// Gradients of the total for every tensor of the model's store.
    pub fn gradients(&self, model: &Model) -> Vec<Tensor> {
        let mut grads = self.graph.backward(self.total);
        self.bound.grads(&mut grads, &model.params)
    }

    pub fn z_value(&self) -> &Tensor {
        self.graph.value(self.z)
    }

    pub fn disc_input_value(&self) -> Option<&Tensor> {
        self.disc_input.map(|v| self.graph.value(v))
    }
}

fn item(g: &Graph, v: Var) -> f64 {
    g.value(v).item()
}

/// Records `objective` on the batch `x` with reparametrization noise `noise`
/// (`B × d`). Discriminator parameters enter as constants.
pub fn evaluate(
    objective: &Objective,
    model: &Model,
    disc: Option<&Discriminator>,
    x: &Tensor,
    noise: &Tensor,
) -> Result<Evaluation> {
    objective.check(&model.prior, disc.is_some())?;
    model.check_observations(x)?;
    let (b, d) = (x.rows(), model.latent_dim());
    if noise.shape() != [b, d] {
        return Err(crate::error::shape(&vec![b, d], noise.shape()));
    }
    if let Some(disc) = disc {
        if disc.input_dim() != d {
            return Err(Error::Config(format!("discriminator expects {} dims, latent_dim is {d}", disc.input_dim())));
        }
    }
    let bf = b as f64;
    let df = d as f64;

    let mut g = Graph::new();
    let p = model.params.bind(&mut g, true);
    let xv = g.constant(x.clone());
    let (m, ls) = model.net.encode(&mut g, &p, xv);
    let s = g.exp(ls);
    let xi = g.constant(noise.clone());
    let sx = g.mul(s, xi);
    let z = g.add(m, sx);

    let logits = model.net.decode(&mut g, &p, z);
    let rows = g.bce_logits_rows(logits, Rc::new(x.clone()));
    let rec = g.mean(rows);

    // E_x Σ_j ½(w_j (m² + s²) − c_j − log s² − 1) with per-dim weight w and offset c
    let m2 = g.square(m);
    let s2 = g.square(s);
    let q2 = g.add(m2, s2);
    let sum_ls = g.sum(ls);
    let gaussian_kl = |g: &mut Graph, weighted_q2: Var, offset: Option<Var>| -> Var {
        let a = g.sum(weighted_q2);
        let a = g.scale(a, 1.0 / bf);
        let l = g.scale(sum_ls, 2.0 / bf);
        let mut t = g.sub(a, l);
        if let Some(c) = offset {
            let c = g.sum(c);
            t = g.sub(t, c);
        }
        let t = g.add_scalar(t, -df);
        g.scale(t, 0.5)
    };

    let pv = model.prior.vars(&mut g, &p);
    let mut hyper = None;
    let mut regs: Vec<(&'static str, Var, f64)> = Vec::new();
    let mut mask = None;
    let kl = match (&pv, objective) {
        (PriorVars::StdNormal, _) => gaussian_kl(&mut g, q2, None),
        (PriorVars::Precision { alpha, log_alpha }, Objective::BfVae0 { eta, .. }) => {
            let wq = g.mul_row(q2, *alpha);
            let kl = gaussian_kl(&mut g, wq, Some(*log_alpha));
            let na = g.neg(*log_alpha);
            let inv = g.exp(na);
            let dev = g.add_scalar(inv, -1.0);
            let sq = g.square(dev);
            regs.push(("alpha_dev", g.sum(sq), *eta));
            kl
        }
        (PriorVars::Gamma { shape, rate, log_rate, hyper: hv }, _) => {
            let mean_alpha = g.div(*shape, *rate);
            let wq = g.mul_row(q2, mean_alpha);
            let psi = g.digamma(*shape);
            let e_log_alpha = g.sub(psi, *log_rate);
            let kl = gaussian_kl(&mut g, wq, Some(e_log_alpha));

            let (a, b) = match *hv {
                HyperVars::Learned { a } => (a, g.add_scalar(a, -1.0)),
                HyperVars::Relevance { r, epsilon } => {
                    let re = g.add_scalar(r, epsilon);
                    let num = g.constant(Tensor::filled(vec![d], 1.0 + 2.0 * epsilon));
                    let a = g.div(num, re);
                    (a, g.add_scalar(a, -1.0))
                }
            };
            // (â−a)ψ(â) − lnΓ(â) + lnΓ(a) + a(ln b̂ − ln b) + â(b − b̂)/b̂
            let t1 = g.sub(*shape, a);
            let t1 = g.mul(t1, psi);
            let t2 = g.ln_gamma(*shape);
            let t3 = g.ln_gamma(a);
            let lb = g.log(b);
            let t4 = g.sub(*log_rate, lb);
            let t4 = g.mul(a, t4);
            let t5 = g.sub(b, *rate);
            let t5 = g.mul(mean_alpha, t5);
            let h = g.sub(t1, t2);
            let h = g.add(h, t3);
            let h = g.add(h, t4);
            let h = g.add(h, t5);
            hyper = Some(g.sum(h));

            if let (HyperVars::Relevance { r, .. }, Objective::BfVae2 { eta_s, eta_h, .. }) = (hv, objective) {
                regs.push(("r_l1", g.sum(*r), *eta_s));
                let h = g.binary_entropy(*r);
                regs.push(("r_entropy", g.sum(h), *eta_h));
                mask = Some(*r);
            }
            kl
        }
        (PriorVars::Mog { logits, means, log_stds }, _) => {
            // single-sample estimate of E_q[log q(z|x) − log p(z)]
            let xi2: f64 = noise.data().iter().map(|e| e * e).sum();
            let lq = g.scale(sum_ls, -1.0 / bf);
            let lq = g.add_scalar(lq, -0.5 * xi2 / bf - 0.5 * df * LN_2PI);
            let lp = g.mog_logpdf(z, *logits, *means, *log_stds);
            let lp = g.mean(lp);
            g.sub(lq, lp)
        }
        (PriorVars::Precision { .. }, _) => unreachable!("checked above"),
    };

    let (kl_weight, tc_weight, hyper_kl_weight) = match *objective {
        Objective::Vae { beta } => (beta, 0.0, 0.0),
        Objective::FactorVae { gamma } | Objective::BfVae0 { gamma, .. } => (1.0, gamma, 0.0),
        Objective::BfVae1 { gamma, hyper_kl_scale } | Objective::BfVae2 { gamma, hyper_kl_scale, .. } => {
            (1.0, gamma, hyper_kl_scale)
        }
    };

    let mut disc_input = None;
    let mut tc = None;
    if let Some(disc) = disc.filter(|_| objective.uses_discriminator()) {
        let dp = disc.bind(&mut g, false);
        let input = match mask {
            Some(r) => g.mul_row(z, r),
            None => z,
        };
        let l = disc.forward(&mut g, &dp, input);
        tc = Some(g.mean(l));
        disc_input = Some(input);
    }

    let mut total = rec;
    let kw = g.scale(kl, kl_weight);
    total = g.add(total, kw);
    if let Some(tc) = tc {
        let t = g.scale(tc, tc_weight);
        total = g.add(total, t);
    }
    if let Some(h) = hyper {
        let t = g.scale(h, hyper_kl_weight);
        total = g.add(total, t);
    }
    for (_, v, w) in &regs {
        let t = g.scale(*v, *w);
        total = g.add(total, t);
    }

    let breakdown = LossBreakdown {
        rec: item(&g, rec),
        kl: item(&g, kl),
        tc_proxy: tc.map_or(0.0, |v| item(&g, v)),
        hyper_kl: hyper.map_or(0.0, |v| item(&g, v)),
        regularizers: regs
            .iter()
            .map(|(name, v, w)| Regularizer { name, value: item(&g, *v), weight: *w })
            .collect(),
        kl_weight,
        tc_weight,
        hyper_kl_weight,
        total: item(&g, total),
    };
    Ok(Evaluation { graph: g, bound: p, total, z, disc_input, breakdown })
}

/// `rec + β·KL` against `N(0, I)`.
pub fn objective_vae(model: &Model, x: &Tensor, noise: &Tensor, beta: f64) -> Result<LossBreakdown> {
    Ok(evaluate(&Objective::Vae { beta }, model, None, x, noise)?.breakdown)
}

/// `rec + KL + γ·TC` with the model's standard-normal or mixture prior.
pub fn objective_fvae(
    model: &Model,
    disc: &Discriminator,
    x: &Tensor,
    noise: &Tensor,
    gamma: f64,
) -> Result<LossBreakdown> {
    Ok(evaluate(&Objective::FactorVae { gamma }, model, Some(disc), x, noise)?.breakdown)
}

pub fn objective_bfvae0(
    model: &Model,
    disc: &Discriminator,
    x: &Tensor,
    noise: &Tensor,
    gamma: f64,
    eta: f64,
) -> Result<LossBreakdown> {
    Ok(evaluate(&Objective::BfVae0 { gamma, eta }, model, Some(disc), x, noise)?.breakdown)
}

/// The hyper-KL enters with weight `1 / n_dataset`.
pub fn objective_bfvae1(
    model: &Model,
    disc: &Discriminator,
    x: &Tensor,
    noise: &Tensor,
    gamma: f64,
    n_dataset: usize,
) -> Result<LossBreakdown> {
    let objective = Objective::BfVae1 { gamma, hyper_kl_scale: 1.0 / n_dataset.max(1) as f64 };
    Ok(evaluate(&objective, model, Some(disc), x, noise)?.breakdown)
}

#[allow(clippy::too_many_arguments)]
pub fn objective_bfvae2(
    model: &Model,
    disc: &Discriminator,
    x: &Tensor,
    noise: &Tensor,
    gamma: f64,
    eta_s: f64,
    eta_h: f64,
    n_dataset: usize,
) -> Result<LossBreakdown> {
    let objective = Objective::BfVae2 { gamma, eta_s, eta_h, hyper_kl_scale: 1.0 / n_dataset.max(1) as f64 };
    Ok(evaluate(&objective, model, Some(disc), x, noise)?.breakdown)
}
