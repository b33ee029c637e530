//! Latent priors and their trainable parametrizations.

use crate::autodiff::{Bound, Graph, ParamId, ParamStore, Tensor, Var};
use crate::dist::{GammaParams, RelevanceVector, StudentT};
use crate::error::{domain, Error, Result};

/// Value-level description of a model's latent prior.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorSpec {
    /// Fixed `N(0, I)`.
    StdNormal,
    /// `N(0, diag(1/α))` with learnable precisions.
    Precision { alpha: Vec<f64> },
    /// Gamma hyper-prior `Gamma(a, a-1)` on the precisions with variational
    /// posterior `qalpha`.
    GammaHier { a: Vec<f64>, qalpha: GammaParams },
    /// Hyper-prior shaped by relevance indicators, with posterior `qalpha`.
    Relevance { rv: RelevanceVector, qalpha: GammaParams },
    /// Mixture of diagonal Gaussians. `means` and `stds` are `K` rows of
    /// length `d`.
    Mog { weights: Vec<f64>, means: Vec<Vec<f64>>, stds: Vec<Vec<f64>> },
}

impl PriorSpec {
    pub fn precision(alpha: Vec<f64>) -> Result<Self> {
        if let Some(i) = alpha.iter().position(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(domain(format!("alpha[{i}] = {} must be > 0", alpha[i])));
        }
        Ok(PriorSpec::Precision { alpha })
    }

    pub fn gamma_hier(a: Vec<f64>, qalpha: GammaParams) -> Result<Self> {
        GammaParams::unit_mode(a.clone())?;
        if qalpha.dim() != a.len() {
            return Err(domain("hyper-prior and posterior lengths differ"));
        }
        Ok(PriorSpec::GammaHier { a, qalpha })
    }

    pub fn relevance(rv: RelevanceVector, qalpha: GammaParams) -> Result<Self> {
        if qalpha.dim() != rv.dim() {
            return Err(domain("relevance vector and posterior lengths differ"));
        }
        Ok(PriorSpec::Relevance { rv, qalpha })
    }

    pub fn mog(weights: Vec<f64>, means: Vec<Vec<f64>>, stds: Vec<Vec<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || stds.len() != k {
            return Err(domain("mixture needs K > 0 weights, means and stds"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(domain("mixture weights must lie on the simplex"));
        }
        let d = means[0].len();
        if means.iter().chain(&stds).any(|row| row.len() != d) {
            return Err(domain("mixture component rows differ in length"));
        }
        if stds.iter().flatten().any(|s| !(*s > 0.0)) {
            return Err(domain("mixture stds must be > 0"));
        }
        Ok(PriorSpec::Mog { weights, means, stds })
    }

    pub fn name(&self) -> &'static str {
        match self {
            PriorSpec::StdNormal => "std_normal",
            PriorSpec::Precision { .. } => "precision",
            PriorSpec::GammaHier { .. } => "gamma_hier",
            PriorSpec::Relevance { .. } => "relevance",
            PriorSpec::Mog { .. } => "mog",
        }
    }

    /// Latent dimension fixed by the prior's parameters, if any.
    pub fn dim(&self) -> Option<usize> {
        match self {
            PriorSpec::StdNormal => None,
            PriorSpec::Precision { alpha } => Some(alpha.len()),
            PriorSpec::GammaHier { a, .. } => Some(a.len()),
            PriorSpec::Relevance { rv, .. } => Some(rv.dim()),
            PriorSpec::Mog { means, .. } => Some(means[0].len()),
        }
    }

    /// The Gamma hyper-prior `p(α)` of the hierarchical variants.
    pub fn hyper_prior(&self) -> Option<GammaParams> {
        match self {
            PriorSpec::GammaHier { a, .. } => GammaParams::unit_mode(a.clone()).ok(),
            PriorSpec::Relevance { rv, .. } => Some(crate::dist::gamma_prior_from_relevance(rv)),
            _ => None,
        }
    }

    /// The variational posterior `q(α)` of the hierarchical variants.
    pub fn qalpha(&self) -> Option<&GammaParams> {
        match self {
            PriorSpec::GammaHier { qalpha, .. } | PriorSpec::Relevance { qalpha, .. } => Some(qalpha),
            _ => None,
        }
    }
}

/// Per-dimension Student-t obtained by integrating the precision out under
/// `q(α)`.
pub fn corrected_prior_report(prior: &PriorSpec) -> Result<Vec<StudentT>> {
    let q = prior
        .qalpha()
        .ok_or_else(|| Error::Prior(format!("{} prior has no precision posterior", prior.name())))?;
    q.shape().iter().zip(q.rate()).map(|(a, b)| StudentT::from_gamma(*a, *b)).collect()
}

/// Inverse of `1 + softplus(raw)`.
fn inv_one_plus_softplus(a: f64) -> f64 {
    let y = a - 1.0;
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn vec_t(v: impl IntoIterator<Item = f64>) -> Tensor {
    Tensor::vector(v.into_iter().collect())
}

/// Trainable storage of a [`PriorSpec`].
///
/// Positive quantities are kept as logs, `a` as `1 + softplus(raw)`, the
/// relevance vector directly (projected back onto `[0,1]` after each update).
#[derive(Debug, Clone)]
pub enum Prior {
    StdNormal,
    Precision { log_alpha: ParamId },
    GammaHier { a_raw: ParamId, log_shape: ParamId, log_rate: ParamId },
    Relevance { r: ParamId, epsilon: f64, log_shape: ParamId, log_rate: ParamId },
    Mog { logits: ParamId, means: ParamId, log_stds: ParamId },
}

/// Tape handles for the quantities a prior contributes to an objective.
pub(crate) enum PriorVars {
    StdNormal,
    Precision { alpha: Var, log_alpha: Var },
    Gamma { shape: Var, rate: Var, log_rate: Var, hyper: HyperVars },
    Mog { logits: Var, means: Var, log_stds: Var },
}

pub(crate) enum HyperVars {
    Learned { a: Var },
    Relevance { r: Var, epsilon: f64 },
}

impl Prior {
    /// Registers the parameters of `spec` in `store`.
    pub fn register(spec: &PriorSpec, store: &mut ParamStore) -> Result<Self> {
        Ok(match spec {
            PriorSpec::StdNormal => Prior::StdNormal,
            PriorSpec::Precision { alpha } => {
                Prior::Precision { log_alpha: store.add("prior.log_alpha", vec_t(alpha.iter().map(|a| a.ln()))) }
            }
            PriorSpec::GammaHier { a, qalpha } => {
                GammaParams::unit_mode(a.clone())?;
                Prior::GammaHier {
                    a_raw: store.add("prior.a_raw", vec_t(a.iter().map(|a| inv_one_plus_softplus(*a)))),
                    log_shape: store.add("prior.log_qshape", vec_t(qalpha.shape().iter().map(|v| v.ln()))),
                    log_rate: store.add("prior.log_qrate", vec_t(qalpha.rate().iter().map(|v| v.ln()))),
                }
            }
            PriorSpec::Relevance { rv, qalpha } => Prior::Relevance {
                r: store.add("prior.r", vec_t(rv.r().iter().copied())),
                epsilon: rv.epsilon(),
                log_shape: store.add("prior.log_qshape", vec_t(qalpha.shape().iter().map(|v| v.ln()))),
                log_rate: store.add("prior.log_qrate", vec_t(qalpha.rate().iter().map(|v| v.ln()))),
            },
            PriorSpec::Mog { weights, means, stds } => {
                let (k, d) = (weights.len(), means[0].len());
                Prior::Mog {
                    logits: store.add("prior.mog_logits", vec_t(weights.iter().map(|w| w.max(1e-300).ln()))),
                    means: store.add("prior.mog_means", Tensor::matrix(k, d, means.concat())),
                    log_stds: store.add(
                        "prior.mog_log_stds",
                        Tensor::matrix(k, d, stds.concat().iter().map(|s| s.ln()).collect()),
                    ),
                }
            }
        })
    }

    /// Reads the current prior back out of `store`.
    pub fn spec(&self, store: &ParamStore) -> Result<PriorSpec> {
        let exp = |id: ParamId| store.get(id).data().iter().map(|v| v.exp()).collect::<Vec<_>>();
        match *self {
            Prior::StdNormal => Ok(PriorSpec::StdNormal),
            Prior::Precision { log_alpha } => PriorSpec::precision(exp(log_alpha)),
            Prior::GammaHier { a_raw, log_shape, log_rate } => {
                let a = store.get(a_raw).data().iter().map(|v| 1.0 + softplus(*v)).collect();
                PriorSpec::gamma_hier(a, GammaParams::new(exp(log_shape), exp(log_rate))?)
            }
            Prior::Relevance { r, epsilon, log_shape, log_rate } => PriorSpec::relevance(
                RelevanceVector::new(store.get(r).data().to_vec(), epsilon)?,
                GammaParams::new(exp(log_shape), exp(log_rate))?,
            ),
            Prior::Mog { logits, means, log_stds } => {
                let l = store.get(logits).data();
                let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = l.iter().map(|v| (v - max).exp()).collect();
                let z: f64 = e.iter().sum();
                let m = store.get(means);
                let s = store.get(log_stds);
                let k = m.rows();
                PriorSpec::mog(
                    e.iter().map(|v| v / z).collect(),
                    (0..k).map(|i| m.row(i).to_vec()).collect(),
                    (0..k).map(|i| s.row(i).iter().map(|v| v.exp()).collect()).collect(),
                )
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Prior::StdNormal => "std_normal",
            Prior::Precision { .. } => "precision",
            Prior::GammaHier { .. } => "gamma_hier",
            Prior::Relevance { .. } => "relevance",
            Prior::Mog { .. } => "mog",
        }
    }

    /// Restores constrained parameters after an optimizer step.
    pub fn project(&self, store: &mut ParamStore) {
        if let Prior::Relevance { r, .. } = *self {
            for v in store.get_mut(r).data_mut() {
                *v = v.clamp(0.0, 1.0);
            }
        }
    }

    pub(crate) fn vars(&self, g: &mut Graph, p: &Bound) -> PriorVars {
        match *self {
            Prior::StdNormal => PriorVars::StdNormal,
            Prior::Precision { log_alpha } => {
                let log_alpha = p[log_alpha];
                PriorVars::Precision { alpha: g.exp(log_alpha), log_alpha }
            }
            Prior::GammaHier { a_raw, log_shape, log_rate } => {
                let sp = g.softplus(p[a_raw]);
                let a = g.add_scalar(sp, 1.0);
                let shape = g.exp(p[log_shape]);
                let rate = g.exp(p[log_rate]);
                PriorVars::Gamma { shape, rate, log_rate: p[log_rate], hyper: HyperVars::Learned { a } }
            }
            Prior::Relevance { r, epsilon, log_shape, log_rate } => {
                let shape = g.exp(p[log_shape]);
                let rate = g.exp(p[log_rate]);
                PriorVars::Gamma {
                    shape,
                    rate,
                    log_rate: p[log_rate],
                    hyper: HyperVars::Relevance { r: p[r], epsilon },
                }
            }
            Prior::Mog { logits, means, log_stds } => {
                PriorVars::Mog { logits: p[logits], means: p[means], log_stds: p[log_stds] }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_round_trips_every_variant() {
        let q = GammaParams::new(vec![2.0, 5.0], vec![1.5, 0.3]).unwrap();
        let specs = vec![
            PriorSpec::StdNormal,
            PriorSpec::precision(vec![0.5, 3.0]).unwrap(),
            PriorSpec::gamma_hier(vec![1.2, 40.0], q.clone()).unwrap(),
            PriorSpec::relevance(RelevanceVector::new(vec![0.0, 0.7], 1e-3).unwrap(), q).unwrap(),
            PriorSpec::mog(vec![0.25, 0.75], vec![vec![0.0, 1.0], vec![-1.0, 2.0]], vec![vec![1.0, 0.5], vec![2.0, 1.0]])
                .unwrap(),
        ];
        for spec in specs {
            let mut store = ParamStore::new();
            let prior = Prior::register(&spec, &mut store).unwrap();
            let back = prior.spec(&store).unwrap();
            assert_eq!(back.name(), spec.name());
            let (x, y) = (numbers(&spec), numbers(&back));
            assert_eq!(x.len(), y.len());
            for (u, v) in x.iter().zip(&y) {
                assert!((u - v).abs() < 1e-12 * u.abs().max(1.0), "{spec:?} vs {back:?}");
            }
        }
    }

    fn numbers(spec: &PriorSpec) -> Vec<f64> {
        match spec {
            PriorSpec::StdNormal => vec![],
            PriorSpec::Precision { alpha } => alpha.clone(),
            PriorSpec::GammaHier { a, qalpha } => [a, qalpha.shape(), qalpha.rate()].concat(),
            PriorSpec::Relevance { rv, qalpha } => [rv.r(), qalpha.shape(), qalpha.rate()].concat(),
            PriorSpec::Mog { weights, means, stds } => [weights.clone(), means.concat(), stds.concat()].concat(),
        }
    }

    #[test]
    fn gamma_hier_rejects_shape_at_most_one() {
        let q = GammaParams::new(vec![1.0], vec![1.0]).unwrap();
        assert!(PriorSpec::gamma_hier(vec![1.0], q).is_err());
    }

    #[test]
    fn mog_weights_must_sum_to_one() {
        assert!(PriorSpec::mog(vec![0.5, 0.4], vec![vec![0.0]; 2], vec![vec![1.0]; 2]).is_err());
    }

    #[test]
    fn corrected_prior_maps_posterior() {
        let spec = PriorSpec::gamma_hier(
            vec![2.0, 2.0, 2.0],
            GammaParams::new(vec![1.0, 1e6, 3.0], vec![1.0, 1e6, 6.0]).unwrap(),
        )
        .unwrap();
        let ts = corrected_prior_report(&spec).unwrap();
        assert_eq!(ts.len(), 3);
        assert_eq!((ts[0].dof(), ts[0].shape_scale()), (2.0, 1.0));
        assert_eq!(ts[1].dof(), 2e6);
        assert_eq!(ts[2].shape_scale(), 2.0);
        assert!(corrected_prior_report(&PriorSpec::StdNormal).is_err());
    }

    #[test]
    fn projection_clips_relevance() {
        let q = GammaParams::new(vec![1.0; 3], vec![1.0; 3]).unwrap();
        let spec = PriorSpec::relevance(RelevanceVector::new(vec![0.5; 3], 1e-3).unwrap(), q).unwrap();
        let mut store = ParamStore::new();
        let prior = Prior::register(&spec, &mut store).unwrap();
        let id = store.id("prior.r").unwrap();
        store.get_mut(id).data_mut().copy_from_slice(&[-0.2, 0.4, 1.3]);
        prior.project(&mut store);
        assert_eq!(store.get(id).data(), &[0.0, 0.4, 1.0]);
    }
}
