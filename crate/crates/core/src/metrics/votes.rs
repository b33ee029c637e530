use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{column_moments, CodeEncoder, LatentCodes};
use crate::data::{sample_fixed_factor, sample_varied_factor, FactorBatch, FactorDataset};
use crate::error::{Error, Result};

/// Rows encoded to estimate the per-dimension scale used for normalization.
const SCALE_ROWS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoteConfig {
    pub train_votes: usize,
    pub eval_votes: usize,
    pub batch_per_vote: usize,
    /// Dimensions whose code spread over the dataset falls below this are
    /// treated as collapsed and never receive a vote.
    pub min_std: f64,
    pub seed: u64,
}

impl Default for VoteConfig {
    fn default() -> Self {
        Self { train_votes: 800, eval_votes: 800, batch_per_vote: 64, min_std: 0.05, seed: 0 }
    }
}

/// Votes cast by each latent for each factor. Row `d` collects votes where
/// every latent was excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteTable {
    pub train: Vec<Vec<usize>>,
    pub eval: Vec<Vec<usize>>,
    /// Majority factor for each latent row, `None` for rows without train votes.
    pub classifier: Vec<Option<usize>>,
    pub excluded: Vec<bool>,
}

impl VoteTable {
    pub fn latent_dim(&self) -> usize {
        self.excluded.len()
    }

    /// Latent that collected the most votes (train and eval) for factor `k`.
    pub fn latent_for_factor(&self, k: usize) -> Option<usize> {
        let d = self.latent_dim();
        let votes = |i: usize| self.train[i][k] + self.eval[i][k];
        let best = (0..d).max_by(|&a, &b| votes(a).cmp(&votes(b)).then(b.cmp(&a)))?;
        (votes(best) > 0).then_some(best)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricResult {
    /// Majority-vote accuracy on the evaluation votes, in percent.
    pub score: f64,
    /// Accuracy per factor, in percent; `NaN` for factors that drew no
    /// evaluation vote.
    pub per_factor: Option<Vec<f64>>,
    pub votes: VoteTable,
}

#[derive(Clone, Copy)]
enum Rule {
    FixOneArgmin,
    VaryOneArgmax,
}

/// Metric I: fix one factor, let the others vary, vote for the latent with
/// the smallest normalized variance.
pub fn metric_one(enc: &dyn CodeEncoder, ds: &FactorDataset, cfg: &VoteConfig) -> Result<MetricResult> {
    vote_metric(enc, ds, cfg, Rule::FixOneArgmin)
}

/// Metric II: vary one factor, hold the others, vote for the latent with the
/// largest normalized variance.
pub fn metric_two(enc: &dyn CodeEncoder, ds: &FactorDataset, cfg: &VoteConfig) -> Result<MetricResult> {
    vote_metric(enc, ds, cfg, Rule::VaryOneArgmax)
}

fn vote_metric(enc: &dyn CodeEncoder, ds: &FactorDataset, cfg: &VoteConfig, rule: Rule) -> Result<MetricResult> {
    if ds.num_factors() == 0 {
        return Err(Error::Dataset("dataset has no factor labels".into()));
    }
    if cfg.train_votes < 100 || cfg.eval_votes == 0 {
        return Err(Error::Config(format!(
            "need at least 100 training votes and one evaluation vote, got {} and {}",
            cfg.train_votes, cfg.eval_votes
        )));
    }
    if cfg.batch_per_vote < 2 {
        return Err(Error::Config("batch_per_vote must be at least 2".into()));
    }
    let d = enc.latent_dim();
    let k = ds.num_factors();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scale = LatentCodes::from_encoder(enc, ds, SCALE_ROWS, rng.random())?;
    let excluded: Vec<bool> = scale.z_std.iter().map(|s| *s < cfg.min_std).collect();

    let cast = |n: usize, rng: &mut ChaCha8Rng| -> Result<Vec<Vec<usize>>> {
        let mut table = vec![vec![0usize; k]; d + 1];
        for _ in 0..n {
            let factor = rng.random_range(0..k);
            let seed = rng.random();
            let batch = match rule {
                Rule::FixOneArgmin => sample_fixed_factor(ds, factor, cfg.batch_per_vote, seed)?,
                Rule::VaryOneArgmax => sample_varied_factor(ds, factor, cfg.batch_per_vote, seed)?,
            };
            let latent = choose(enc, ds, &batch, &scale.z_std, &excluded, rule)?;
            table[latent][factor] += 1;
        }
        Ok(table)
    };
    let train = cast(cfg.train_votes, &mut rng)?;
    let eval = cast(cfg.eval_votes, &mut rng)?;

    let classifier: Vec<Option<usize>> = train
        .iter()
        .map(|row| {
            let best = (0..k).max_by(|&a, &b| row[a].cmp(&row[b]).then(b.cmp(&a)))?;
            (row[best] > 0).then_some(best)
        })
        .collect();
    // rows never seen in training fall back to the most voted factor overall
    let totals: Vec<usize> = (0..k).map(|f| train.iter().map(|r| r[f]).sum()).collect();
    let fallback = (0..k).max_by(|&a, &b| totals[a].cmp(&totals[b]).then(b.cmp(&a))).unwrap_or(0);

    let mut correct = vec![0usize; k];
    let mut seen = vec![0usize; k];
    for (latent, row) in eval.iter().enumerate() {
        let predicted = classifier[latent].unwrap_or(fallback);
        for (f, &n) in row.iter().enumerate() {
            seen[f] += n;
            if f == predicted {
                correct[f] += n;
            }
        }
    }
    let total: usize = seen.iter().sum();
    let score = 100.0 * correct.iter().sum::<usize>() as f64 / total as f64;
    let per_factor = correct
        .iter()
        .zip(&seen)
        .map(|(&c, &s)| if s == 0 { f64::NAN } else { 100.0 * c as f64 / s as f64 })
        .collect();
    Ok(MetricResult {
        score,
        per_factor: Some(per_factor),
        votes: VoteTable { train, eval, classifier, excluded },
    })
}

/// Latent chosen by one vote; `d` when every latent is excluded. Ties go to
/// the lowest index.
fn choose(
    enc: &dyn CodeEncoder,
    ds: &FactorDataset,
    batch: &FactorBatch,
    z_std: &[f64],
    excluded: &[bool],
    rule: Rule,
) -> Result<usize> {
    let z = enc.codes(ds, &batch.indices)?;
    let var = column_moments(&z);
    let d = z_std.len();
    let mut best: Option<(usize, f64)> = None;
    for j in (0..d).filter(|&j| !excluded[j]) {
        let v = var[j].1 / (z_std[j] * z_std[j]);
        let better = match (best, rule) {
            (None, _) => true,
            (Some((_, b)), Rule::FixOneArgmin) => v < b,
            (Some((_, b)), Rule::VaryOneArgmax) => v > b,
        };
        if better {
            best = Some((j, v));
        }
    }
    Ok(best.map_or(d, |(j, _)| j))
}
