use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::forest::Forest;
use super::{column_moments, lasso, LatentCodes};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regressor {
    Lasso,
    RandomForest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DciConfig {
    pub regressor: Regressor,
    pub split_seed: u64,
    /// Lasso penalties tried; the one with the lowest validation error wins.
    pub lasso_alphas: Vec<f64>,
    pub trees: usize,
    pub max_depth: usize,
}

impl DciConfig {
    pub fn new(regressor: Regressor, split_seed: u64) -> Self {
        Self { regressor, split_seed, lasso_alphas: vec![1e-4, 1e-3, 1e-2, 3e-2, 1e-1], trees: 10, max_depth: 8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DciResult {
    pub disentanglement: f64,
    pub completeness: f64,
    /// Mean held-out RMSE over factors, in units of each factor's std.
    pub informativeness: f64,
    pub per_factor_error: Vec<f64>,
    /// `d × K`: importance of latent `i` for factor `j`.
    pub importance: Vec<Vec<f64>>,
}

/// Metric III from codes and the matching `N × K` factor values.
pub fn metric_three(codes: &LatentCodes, factors: &Tensor, cfg: &DciConfig) -> Result<DciResult> {
    let (n, d) = (codes.len(), codes.dim());
    if factors.shape().len() != 2 || factors.rows() != n {
        return Err(crate::error::shape(&[n, factors.cols()], factors.shape()));
    }
    let k = factors.cols();
    if k == 0 || d == 0 {
        return Err(Error::Domain("need at least one latent and one factor".into()));
    }
    if n < 10 * d {
        return Err(Error::Domain(format!("{n} samples is too few for {d} latents (need {})", 10 * d)));
    }
    let z = standardize(&codes.z);
    let f = standardize(factors);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.split_seed));
    let n_train = n * 3 / 5;
    let n_val = n / 5;
    let (train, rest) = order.split_at(n_train);
    let (val, test) = rest.split_at(n_val);
    let rows = |m: &[f64], w: usize, idx: &[usize]| -> Vec<f64> {
        idx.iter().flat_map(|&i| m[i * w..(i + 1) * w].iter().copied()).collect()
    };
    let (x_train, x_val, x_test) = (rows(&z, d, train), rows(&z, d, val), rows(&z, d, test));

    let mut importance = vec![vec![0.0; k]; d];
    let mut errors = Vec::with_capacity(k);
    for j in 0..k {
        let target = |idx: &[usize]| -> Vec<f64> { idx.iter().map(|&i| f[i * k + j]).collect() };
        let (y_train, y_val, y_test) = (target(train), target(val), target(test));
        let (imp, pred) = match cfg.regressor {
            Regressor::Lasso => {
                let mut best: Option<(f64, Vec<f64>, f64)> = None;
                for &alpha in &cfg.lasso_alphas {
                    let (w, c) = lasso::fit(&x_train, &y_train, d, alpha);
                    let e = rmse(&lasso::predict(&x_val, d, &w, c), &y_val);
                    if best.as_ref().is_none_or(|(b, _, _)| e < *b) {
                        best = Some((e, w, c));
                    }
                }
                let (_, w, c) = best.ok_or_else(|| Error::Config("empty lasso penalty grid".into()))?;
                (w.iter().map(|v| v.abs()).collect::<Vec<_>>(), lasso::predict(&x_test, d, &w, c))
            }
            Regressor::RandomForest => {
                let forest = Forest::fit(&x_train, &y_train, d, cfg.trees, cfg.max_depth, cfg.split_seed ^ j as u64);
                let pred = forest.predict(&x_test);
                (forest.importance, pred)
            }
        };
        for i in 0..d {
            importance[i][j] = imp[i];
        }
        errors.push(rmse(&pred, &y_test));
    }
    let (disentanglement, completeness) = dci_from_importance(&importance)?;
    Ok(DciResult {
        disentanglement,
        completeness,
        informativeness: errors.iter().sum::<f64>() / k as f64,
        per_factor_error: errors,
        importance,
    })
}

/// Disentanglement and completeness of a `d × K` importance matrix.
/// Latents with zero total importance are left out of disentanglement.
pub fn dci_from_importance(p: &[Vec<f64>]) -> Result<(f64, f64)> {
    let d = p.len();
    let k = p.first().map_or(0, Vec::len);
    if d == 0 || k == 0 || p.iter().any(|r| r.len() != k) {
        return Err(Error::Domain("importance matrix must be a non-empty rectangle".into()));
    }
    if p.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Domain("importances must be finite and non-negative".into()));
    }
    let total: f64 = p.iter().flatten().sum();
    let mut dis = 0.0;
    if total > 0.0 {
        for row in p {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                dis += s / total * (1.0 - normalized_entropy(row, s));
            }
        }
    }
    let mut comp = 0.0;
    for j in 0..k {
        let col: Vec<f64> = p.iter().map(|r| r[j]).collect();
        let s: f64 = col.iter().sum();
        if s > 0.0 {
            comp += 1.0 - normalized_entropy(&col, s);
        }
    }
    Ok((dis, comp / k as f64))
}

/// Entropy of `v / sum` divided by `log(len)`; zero for a single entry.
fn normalized_entropy(v: &[f64], sum: f64) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let h: f64 = v.iter().filter(|x| **x > 0.0).map(|x| x / sum).map(|q| -q * q.ln()).sum();
    (h / (v.len() as f64).ln()).clamp(0.0, 1.0)
}

fn rmse(pred: &[f64], y: &[f64]) -> f64 {
    (pred.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64).sqrt()
}

/// Row-major copy with every column shifted to zero mean and unit variance;
/// constant columns become zero.
fn standardize(m: &Tensor) -> Vec<f64> {
    let w = m.cols();
    let moments = column_moments(m);
    m.data()
        .chunks(w)
        .flat_map(|row| {
            row.iter().zip(&moments).map(|(v, (mean, var))| if *var > 0.0 { (v - mean) / var.sqrt() } else { 0.0 })
        })
        .collect()
}
