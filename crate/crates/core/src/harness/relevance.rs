//! Per-dimension relevance evidence read off a learned prior.

use std::fmt;

use super::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::model::PriorSpec;

/// Cut-offs separating relevant from nuisance dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    /// Relevant when `|1/α − 1|` exceeds this.
    pub alpha_deviation: f64,
    /// Relevant when the corrected-prior degrees of freedom `2â` fall below this.
    pub dof: f64,
    /// Relevant when `r` exceeds this.
    pub relevance: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { alpha_deviation: 0.2, dof: 100.0, relevance: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Indicator {
    AlphaDeviation,
    Dof,
    Relevance,
}

impl Indicator {
    pub fn name(self) -> &'static str {
        match self {
            Indicator::AlphaDeviation => "alpha_deviation",
            Indicator::Dof => "dof",
            Indicator::Relevance => "relevance",
        }
    }

    pub fn is_relevant(self, evidence: f64, threshold: f64) -> bool {
        match self {
            Indicator::AlphaDeviation | Indicator::Relevance => evidence > threshold,
            Indicator::Dof => evidence < threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceReport {
    pub indicator: Indicator,
    pub evidence: Vec<f64>,
    pub threshold: f64,
    pub relevant: Vec<bool>,
}

impl RelevanceReport {
    pub fn new(indicator: Indicator, evidence: Vec<f64>, threshold: f64) -> Self {
        let relevant = evidence.iter().map(|e| indicator.is_relevant(*e, threshold)).collect();
        Self { indicator, evidence, threshold, relevant }
    }

    pub fn num_relevant(&self) -> usize {
        self.relevant.iter().filter(|r| **r).count()
    }

    pub fn relevant_dims(&self) -> Vec<usize> {
        (0..self.relevant.len()).filter(|&j| self.relevant[j]).collect()
    }

    /// Whether the verdicts follow from the evidence and threshold.
    pub fn is_consistent(&self) -> bool {
        *self == Self::new(self.indicator, self.evidence.clone(), self.threshold)
    }
}

impl fmt::Display for RelevanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "indicator = {}", self.indicator.name())?;
        writeln!(f, "threshold = {}", self.threshold)?;
        writeln!(f, "num_relevant = {}", self.num_relevant())?;
        for (j, (e, r)) in self.evidence.iter().zip(&self.relevant).enumerate() {
            writeln!(f, "dim{j} = {e:.6} {}", if *r { "relevant" } else { "nuisance" })?;
        }
        Ok(())
    }
}

/// Relevance evidence of a prior: `|1/α − 1|` for adjustable precisions,
/// `2â` for Gamma hierarchies and `r` under the relevance reparametrization.
pub fn relevance_from_prior(prior: &PriorSpec, t: &Thresholds) -> Result<RelevanceReport> {
    match prior {
        PriorSpec::Precision { alpha } => Ok(RelevanceReport::new(
            Indicator::AlphaDeviation,
            alpha.iter().map(|a| (1.0 / a - 1.0).abs()).collect(),
            t.alpha_deviation,
        )),
        PriorSpec::GammaHier { qalpha, .. } => {
            Ok(RelevanceReport::new(Indicator::Dof, qalpha.shape().iter().map(|a| 2.0 * a).collect(), t.dof))
        }
        PriorSpec::Relevance { rv, .. } => Ok(RelevanceReport::new(Indicator::Relevance, rv.r().to_vec(), t.relevance)),
        PriorSpec::StdNormal | PriorSpec::Mog { .. } => {
            Err(Error::NotApplicable(format!("the {} prior carries no relevance indicator", prior.name())))
        }
    }
}

pub fn relevance_report(ckpt: &Checkpoint, t: &Thresholds) -> Result<RelevanceReport> {
    relevance_from_prior(&ckpt.model.prior_spec()?, t)
}
